#ifndef XAD_METRICS_HPP
#define XAD_METRICS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "xad/data.hpp"

namespace xad {

// Desk-scale analogs of the paper's metrics. Every metric is a
// deterministic function of image bytes.

// F1 between the edges re-derived from a generated image and the input
// condition (same extractor as the dataset). F1 = 0 when the image
// produces no edges (precision undefined).
double condition_f1(const Tensor& generated32, const std::vector<uint8_t>& condition_edge);

// Mean HSV saturation over a batch [N,3,H,W]; lower = more outline-styled.
double style_score(const Tensor& images);

// Fraction of generations whose classified (shape, color) matches the
// prompted label; the CLIP-score stand-in.
double classifier_agreement(const Tensor& images32, const std::vector<int>& prompt_tokens);

// Frechet distance between Gaussians fitted to per-image feature vectors
// (channel means, channel stds, edge density). Population moments; a
// 1e-6 ridge is always added to both covariances.
std::vector<std::vector<double>> image_features(const Tensor& images32);
double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b);
double frechet_gaussian(const Tensor& images_a, const Tensor& images_b);  // each set >= 50

// Spearman rank correlation (average ranks on ties).
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

// Jacobi eigenvalues of a symmetric matrix (row-major n x n).
std::vector<double> symmetric_eigenvalues(std::vector<double> m, int n);

// Per-sample view of a batched image tensor.
Tensor image_slice(const Tensor& images, int index);

}  // namespace xad

#endif
