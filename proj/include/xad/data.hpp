#ifndef XAD_DATA_HPP
#define XAD_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "xad/tensor.hpp"

namespace xad {

// Procedural 32x32 shape images (values in [-1, 1], CHW) with labels a
// rule-based classifier can invert and conditions re-derivable from the
// pixels. All randomized quantities are drawn from documented ranges:
//   circle   radius      [11.0, 12.5]
//   square   half-extent [9.5, 11.0]
//   triangle half-width  1.3 s, half-height s, s in [11.1, 11.5]
//   centers keep the shape >= 1 px inside the canvas
//   plain:   fill hsv(hue_c, 1.0, 0.5), background sat [0.20, 0.26],
//            value [0.90, 0.97]
//   outline: stroke of width 1.3 px in hsv(hue_c, 0.9, 0.45) on a
//            background with sat <= 0.03, value [0.85, 0.95]

enum class Shape : uint8_t { kCircle = 0, kSquare = 1, kTriangle = 2 };
enum class Color : uint8_t { kRed = 0, kGreen = 1, kBlue = 2 };
enum class Style : uint8_t { kPlain = 0, kOutline = 1 };

struct Label {
    Shape shape = Shape::kCircle;
    Color color = Color::kRed;
    Style style = Style::kPlain;

    bool operator==(const Label& o) const {
        return shape == o.shape && color == o.color && style == o.style;
    }
};

// Prompt vocabulary: token 0 is the reserved null prompt, tokens 1..18
// enumerate shape x color x style.
constexpr int kNullToken = 0;
constexpr int kVocabSize = 19;
int label_token(const Label& l);
Label token_label(int token);

constexpr int kImageHw = 32;
constexpr float kEdgeThreshold = 0.25f;

struct ToySample {
    Tensor image32;               // [3,32,32]
    Tensor image16;               // [3,16,16], 2x average-pool of image32
    Label label;
    std::vector<uint8_t> condition_edge;  // 32*32 binary, row-major
};

struct Dataset {
    std::vector<ToySample> samples;
    size_t size() const { return samples.size(); }
};

Dataset generate_dataset(int n, uint64_t seed);
ToySample generate_sample(uint64_t seed, uint64_t index);

// Rule-based inverse of the generator: dominant hue -> color, template
// IoU -> shape, mean saturation -> style.
Label classify(const Tensor& image32);

// Shared edge extractor: threshold on central-difference gradient
// magnitude of the [0,1] grayscale image. Both the dataset conditions and
// the condition-reconstruction metric use this exact function.
std::vector<uint8_t> edge_map(const Tensor& image32);

double mean_saturation(const Tensor& image);
Tensor avgpool_image(const Tensor& image);      // [3,H,W] -> [3,H/2,W/2]
Tensor upsample_image(const Tensor& image);     // [3,H,W] -> [3,2H,2W] nearest

// Binary container: magic "XADDATA1", u32 count, then fixed 15491-byte
// records (image32 f32 LE, image16 f32 LE, 3 label bytes, 128 bytes of
// bit-packed condition, MSB first).
constexpr size_t kRecordBytes = 32 * 32 * 3 * 4 + 16 * 16 * 3 * 4 + 3 + 32 * 32 / 8;

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace xad

#endif
