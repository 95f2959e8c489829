#include "xad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xad {

Tensor image_slice(const Tensor& images, int index) {
    if (images.rank() != 4) throw std::runtime_error("image_slice: expected [N,C,H,W]");
    Tensor out({images.shape[1], images.shape[2], images.shape[3]});
    size_t per = out.data.size();
    std::copy(images.data.begin() + static_cast<int64_t>(index * per),
              images.data.begin() + static_cast<int64_t>((index + 1) * per), out.data.begin());
    return out;
}

double condition_f1(const Tensor& generated32, const std::vector<uint8_t>& condition_edge) {
    std::vector<uint8_t> pred = edge_map(generated32);
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && condition_edge[i]) ++tp;
        else if (pred[i] && !condition_edge[i]) ++fp;
        else if (!pred[i] && condition_edge[i]) ++fn;
    }
    if (tp + fp == 0 || tp + fn == 0) return 0.0;  // precision/recall undefined
    return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

double style_score(const Tensor& images) {
    if (images.rank() == 3) return mean_saturation(images);
    if (images.rank() != 4 || images.shape[0] < 1)
        throw std::runtime_error("style_score: expected a non-empty batch");
    double acc = 0;
    for (int i = 0; i < images.shape[0]; ++i) acc += mean_saturation(image_slice(images, i));
    return acc / images.shape[0];
}

double classifier_agreement(const Tensor& images32, const std::vector<int>& prompt_tokens) {
    if (images32.shape[0] != static_cast<int>(prompt_tokens.size()))
        throw std::runtime_error("classifier_agreement: batch/token count mismatch");
    int hits = 0;
    for (int i = 0; i < images32.shape[0]; ++i) {
        Label want = token_label(prompt_tokens[static_cast<size_t>(i)]);
        Label got = classify(image_slice(images32, i));
        if (got.shape == want.shape && got.color == want.color) ++hits;
    }
    return static_cast<double>(hits) / images32.shape[0];
}

std::vector<std::vector<double>> image_features(const Tensor& images32) {
    std::vector<std::vector<double>> out;
    int n = images32.shape[0];
    int hw = images32.shape[2] * images32.shape[3];
    for (int i = 0; i < n; ++i) {
        Tensor img = image_slice(images32, i);
        std::vector<double> f;
        for (int c = 0; c < 3; ++c) {
            double mean = 0;
            for (int p = 0; p < hw; ++p) mean += img.data[static_cast<size_t>(c) * hw + p];
            mean /= hw;
            double var = 0;
            for (int p = 0; p < hw; ++p) {
                double d = img.data[static_cast<size_t>(c) * hw + p] - mean;
                var += d * d;
            }
            f.push_back(mean);
            f.push_back(std::sqrt(var / hw));
        }
        auto edges = edge_map(img);
        double density = std::accumulate(edges.begin(), edges.end(), 0.0) / edges.size();
        f.push_back(density);
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> m, int n) {
    // classic Jacobi rotations; plenty for the 7x7 feature covariance
    auto at = [&](int i, int j) -> double& { return m[static_cast<size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::fabs(at(p, q)) < 1e-18) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = at(i, i);
    std::sort(eig.begin(), eig.end());
    return eig;
}

namespace {

constexpr double kCovRidge = 1e-6;

void moments(const std::vector<std::vector<double>>& feats, std::vector<double>& mu,
             std::vector<double>& cov) {
    size_t n = feats.size(), d = feats[0].size();
    mu.assign(d, 0.0);
    for (const auto& f : feats)
        for (size_t j = 0; j < d; ++j) mu[j] += f[j];
    for (auto& v : mu) v /= static_cast<double>(n);
    cov.assign(d * d, 0.0);
    for (const auto& f : feats)
        for (size_t i = 0; i < d; ++i)
            for (size_t j = 0; j < d; ++j) cov[i * d + j] += (f[i] - mu[i]) * (f[j] - mu[j]);
    for (auto& v : cov) v /= static_cast<double>(n);  // population covariance
    for (size_t i = 0; i < d; ++i) cov[i * d + i] += kCovRidge;
}

std::vector<double> matmul_sym(const std::vector<double>& a, const std::vector<double>& b, size_t d) {
    std::vector<double> c(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t k = 0; k < d; ++k) {
            double av = a[i * d + k];
            for (size_t j = 0; j < d; ++j) c[i * d + j] += av * b[k * d + j];
        }
    return c;
}

// symmetric PSD square root via eigendecomposition (Jacobi with vectors)
std::vector<double> sqrtm_psd(std::vector<double> m, int n) {
    std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
    auto at = [&](std::vector<double>& a, int i, int j) -> double& {
        return a[static_cast<size_t>(i) * n + j];
    };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(m, i, j) * at(m, i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::fabs(at(m, p, q)) < 1e-18) continue;
                double theta = (at(m, q, q) - at(m, p, p)) / (2.0 * at(m, p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = at(m, k, p), akq = at(m, k, q);
                    at(m, k, p) = c * akp - s * akq;
                    at(m, k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = at(m, p, k), aqk = at(m, q, k);
                    at(m, p, k) = c * apk - s * aqk;
                    at(m, q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = at(v, k, p), vkq = at(v, k, q);
                    at(v, k, p) = c * vkp - s * vkq;
                    at(v, k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        double lam = std::max(0.0, at(m, k, k));
        double root = std::sqrt(lam);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out[static_cast<size_t>(i) * n + j] += root * at(v, i, k) * at(v, j, k);
    }
    return out;
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b) {
    if (feats_a.empty() || feats_b.empty())
        throw std::runtime_error("frechet_distance: empty feature set");
    size_t d = feats_a[0].size();
    std::vector<double> mu_a, cov_a, mu_b, cov_b;
    moments(feats_a, mu_a, cov_a);
    moments(feats_b, mu_b, cov_b);

    double dist = 0;
    for (size_t i = 0; i < d; ++i) dist += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);

    double tr = 0;
    for (size_t i = 0; i < d; ++i) tr += cov_a[i * d + i] + cov_b[i * d + i];

    // tr((Sa Sb)^1/2) = sum sqrt(eig(Sa^1/2 Sb Sa^1/2))
    std::vector<double> root_a = sqrtm_psd(cov_a, static_cast<int>(d));
    std::vector<double> inner = matmul_sym(root_a, matmul_sym(cov_b, root_a, d), d);
    std::vector<double> eig = symmetric_eigenvalues(inner, static_cast<int>(d));
    double tr_sqrt = 0;
    for (double e : eig) tr_sqrt += std::sqrt(std::max(0.0, e));

    return dist + tr - 2.0 * tr_sqrt;
}

double frechet_gaussian(const Tensor& images_a, const Tensor& images_b) {
    if (images_a.shape[0] < 50 || images_b.shape[0] < 50)
        throw std::runtime_error("frechet_gaussian: each set needs >= 50 images");
    return frechet_distance(image_features(images_a), image_features(images_b));
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::runtime_error("spearman_rho: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        size_t n = v.size();
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> rx = ranks(xs), ry = ranks(ys);
    double mx = 0, my = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= rx.size();
    my /= ry.size();
    double num = 0, dx = 0, dy = 0;
    for (size_t i = 0; i < rx.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0 || dy == 0) return 0.0;
    return num / std::sqrt(dx * dy);
}

}  // namespace xad
