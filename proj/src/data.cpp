#include "xad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "xad/checkpoint.hpp"

namespace xad {

namespace {

constexpr int kHw = kImageHw;

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    double m = v - c;
    return {r + m, g + m, b + m};
}

double clamp01(double x) {
    return std::min(1.0, std::max(0.0, x));
}

void rgb01(const Tensor& img, int y, int x, double& r, double& g, double& b) {
    size_t plane = static_cast<size_t>(img.shape[1]) * img.shape[2];
    size_t idx = static_cast<size_t>(y) * img.shape[2] + x;
    r = clamp01((img.data[0 * plane + idx] + 1.0) / 2.0);
    g = clamp01((img.data[1 * plane + idx] + 1.0) / 2.0);
    b = clamp01((img.data[2 * plane + idx] + 1.0) / 2.0);
}

double pixel_saturation(double r, double g, double b) {
    double cmax = std::max({r, g, b});
    double cmin = std::min({r, g, b});
    return cmax > 1e-6 ? (cmax - cmin) / cmax : 0.0;
}

double pixel_hue(double r, double g, double b) {
    double cmax = std::max({r, g, b});
    double cmin = std::min({r, g, b});
    double d = cmax - cmin;
    if (d < 1e-9) return 0.0;
    double h;
    if (cmax == r)
        h = std::fmod((g - b) / d, 6.0);
    else if (cmax == g)
        h = (b - r) / d + 2.0;
    else
        h = (r - g) / d + 4.0;
    h /= 6.0;
    return h < 0 ? h + 1.0 : h;
}

struct ShapeGeom {
    Shape shape;
    double cx, cy, size;  // size: circle radius / square half-extent / triangle half-height
};

// Signed distance, negative inside.
double shape_sdf(const ShapeGeom& g, double x, double y) {
    double dx = x - g.cx, dy = y - g.cy;
    switch (g.shape) {
        case Shape::kCircle:
            return std::sqrt(dx * dx + dy * dy) - g.size;
        case Shape::kSquare:
            return std::max(std::fabs(dx), std::fabs(dy)) - g.size;
        case Shape::kTriangle: {
            // vertices: (cx, cy - s), (cx +- 1.3 s, cy + s)
            double s = g.size, w = 1.3 * s;
            double ax = 0, ay = -s;        // apex (relative)
            double bx = -w, by = s;
            double cx2 = w, cy2 = s;
            auto edge = [&](double ex0, double ey0, double ex1, double ey1) {
                // signed distance to the line through (e0,e1); positive on the
                // outward side for counter-clockwise vertex order
                double nx = ey1 - ey0, ny = ex0 - ex1;
                double len = std::sqrt(nx * nx + ny * ny);
                return ((x - g.cx - ex0) * nx + (y - g.cy - ey0) * ny) / len;
            };
            double d1 = edge(ax, ay, cx2, cy2);
            double d2 = edge(cx2, cy2, bx, by);
            double d3 = edge(bx, by, ax, ay);
            return std::max({d1, d2, d3});
        }
    }
    return 0;
}

// 4x4 supersampled coverage of "sdf <= band" (band = 0 -> filled).
double coverage(const ShapeGeom& g, int px, int py, bool stroke, double half_width) {
    int hit = 0;
    for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
            double x = px + (sx + 0.5) / 4.0;
            double y = py + (sy + 0.5) / 4.0;
            double d = shape_sdf(g, x, y);
            bool inside = stroke ? std::fabs(d) <= half_width : d <= 0.0;
            if (inside) ++hit;
        }
    return hit / 16.0;
}

double color_hue(Color c) {
    switch (c) {
        case Color::kRed: return 0.0;
        case Color::kGreen: return 1.0 / 3.0;
        case Color::kBlue: return 2.0 / 3.0;
    }
    return 0.0;
}

ShapeGeom draw_geometry(Rng& rng, Shape shape) {
    ShapeGeom g;
    g.shape = shape;
    double margin = 1.0;
    double half_w, half_h;
    switch (shape) {
        case Shape::kCircle:
            g.size = rng.uniform(11.0, 12.5);
            half_w = half_h = g.size;
            break;
        case Shape::kSquare:
            g.size = rng.uniform(9.5, 11.0);
            half_w = half_h = g.size;
            break;
        case Shape::kTriangle:
            g.size = rng.uniform(11.1, 11.5);
            half_w = 1.3 * g.size;
            half_h = g.size;
            break;
        default:
            g.size = 11.0;
            half_w = half_h = g.size;
    }
    g.cx = rng.uniform(margin + half_w, kHw - margin - half_w);
    g.cy = rng.uniform(margin + half_h, kHw - margin - half_h);
    return g;
}

// templates for the shape classifier, quantized to a grid fine enough
// that the nearest template overlaps the true mask far better than any
// cross-shape match
struct Template {
    Shape shape;
    std::vector<uint8_t> filled;  // kHw*kHw
    std::vector<uint8_t> ring;
    int filled_count = 0;
    int ring_count = 0;
};

std::vector<Template> build_templates() {
    std::vector<Template> out;
    auto add = [&](Shape shape, double size, double cx, double cy) {
        ShapeGeom g{shape, cx, cy, size};
        Template t;
        t.shape = shape;
        t.filled.resize(kHw * kHw);
        t.ring.resize(kHw * kHw);
        for (int y = 0; y < kHw; ++y)
            for (int x = 0; x < kHw; ++x) {
                double d = shape_sdf(g, x + 0.5, y + 0.5);
                bool fill = d <= 0.0;
                bool ring = std::fabs(d) <= 1.1;
                t.filled[static_cast<size_t>(y) * kHw + x] = fill;
                t.ring[static_cast<size_t>(y) * kHw + x] = ring;
                t.filled_count += fill;
                t.ring_count += ring;
            }
        out.push_back(std::move(t));
    };
    for (double r = 11.0; r <= 12.5 + 1e-9; r += 0.5) {
        double lo = 1.0 + r, hi = kHw - 1.0 - r;
        for (double cy = std::ceil(lo); cy <= hi; cy += 1.0)
            for (double cx = std::ceil(lo); cx <= hi; cx += 1.0) add(Shape::kCircle, r, cx, cy);
    }
    for (double s = 9.5; s <= 11.0 + 1e-9; s += 0.5) {
        double lo = 1.0 + s, hi = kHw - 1.0 - s;
        for (double cy = std::ceil(lo); cy <= hi; cy += 1.0)
            for (double cx = std::ceil(lo); cx <= hi; cx += 1.0) add(Shape::kSquare, s, cx, cy);
    }
    for (double s = 11.1; s <= 11.5 + 1e-9; s += 0.2) {
        double w = 1.3 * s;
        double lox = 1.0 + w, hix = kHw - 1.0 - w;
        double loy = 1.0 + s, hiy = kHw - 1.0 - s;
        for (double cy = std::ceil(loy); cy <= hiy; cy += 1.0)
            for (double cx = std::ceil(lox); cx <= hix; cx += 0.5) add(Shape::kTriangle, s, cx, cy);
    }
    return out;
}

const std::vector<Template>& templates() {
    static const std::vector<Template> t = build_templates();
    return t;
}

}  // namespace

int label_token(const Label& l) {
    return 1 + static_cast<int>(l.shape) * 6 + static_cast<int>(l.color) * 2 + static_cast<int>(l.style);
}

Label token_label(int token) {
    if (token <= 0 || token >= kVocabSize)
        throw std::runtime_error("token " + std::to_string(token) + " has no label");
    int v = token - 1;
    Label l;
    l.shape = static_cast<Shape>(v / 6);
    l.color = static_cast<Color>((v / 2) % 3);
    l.style = static_cast<Style>(v % 2);
    return l;
}

Tensor avgpool_image(const Tensor& image) {
    int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    Tensor out({c, h / 2, w / 2});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w / 2; ++x) {
                float acc = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += image.data[(static_cast<size_t>(ch) * h + 2 * y + dy) * w + 2 * x + dx];
                out.data[(static_cast<size_t>(ch) * (h / 2) + y) * (w / 2) + x] = acc * 0.25f;
            }
    return out;
}

Tensor upsample_image(const Tensor& image) {
    int c = image.shape[0], h = image.shape[1], w = image.shape[2];
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
                out.data[(static_cast<size_t>(ch) * 2 * h + y) * 2 * w + x] =
                    image.data[(static_cast<size_t>(ch) * h + y / 2) * w + x / 2];
    return out;
}

std::vector<uint8_t> edge_map(const Tensor& image32) {
    if (image32.rank() != 3 || image32.shape[0] != 3 || image32.shape[1] != kHw || image32.shape[2] != kHw)
        throw std::runtime_error("edge_map: expected [3,32,32], got " + shape_str(image32.shape));
    std::vector<double> gray(kHw * kHw);
    for (int y = 0; y < kHw; ++y)
        for (int x = 0; x < kHw; ++x) {
            double r, g, b;
            rgb01(image32, y, x, r, g, b);
            gray[static_cast<size_t>(y) * kHw + x] = (r + g + b) / 3.0;
        }
    auto at = [&](int y, int x) {
        y = std::clamp(y, 0, kHw - 1);
        x = std::clamp(x, 0, kHw - 1);
        return gray[static_cast<size_t>(y) * kHw + x];
    };
    std::vector<uint8_t> out(kHw * kHw);
    for (int y = 0; y < kHw; ++y)
        for (int x = 0; x < kHw; ++x) {
            double gx = (at(y, x + 1) - at(y, x - 1)) / 2.0;
            double gy = (at(y + 1, x) - at(y - 1, x)) / 2.0;
            out[static_cast<size_t>(y) * kHw + x] = std::sqrt(gx * gx + gy * gy) > kEdgeThreshold;
        }
    return out;
}

double mean_saturation(const Tensor& image) {
    int h = image.shape[1], w = image.shape[2];
    double acc = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double r = clamp01((image.data[static_cast<size_t>(0) * h * w + static_cast<size_t>(y) * w + x] + 1.0) / 2.0);
            double g = clamp01((image.data[static_cast<size_t>(1) * h * w + static_cast<size_t>(y) * w + x] + 1.0) / 2.0);
            double b = clamp01((image.data[static_cast<size_t>(2) * h * w + static_cast<size_t>(y) * w + x] + 1.0) / 2.0);
            acc += pixel_saturation(r, g, b);
        }
    return acc / (static_cast<double>(h) * w);
}

ToySample generate_sample(uint64_t seed, uint64_t index) {
    Rng rng = Rng::fork(seed, index);
    Label label;
    label.shape = static_cast<Shape>(rng.uniform_int(0, 2));
    label.color = static_cast<Color>(rng.uniform_int(0, 2));
    label.style = static_cast<Style>(rng.uniform_int(0, 1));

    ShapeGeom geom = draw_geometry(rng, label.shape);
    double hue = color_hue(label.color);

    Rgb bg, fg;
    bool stroke = label.style == Style::kOutline;
    if (stroke) {
        bg = hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.03), rng.uniform(0.85, 0.95));
        fg = hsv_to_rgb(hue, 0.9, 0.45);
    } else {
        bg = hsv_to_rgb(rng.uniform(), rng.uniform(0.20, 0.26), rng.uniform(0.90, 0.97));
        fg = hsv_to_rgb(hue, 1.0, 0.5);
    }

    ToySample s;
    s.label = label;
    s.image32 = Tensor({3, kHw, kHw});
    for (int y = 0; y < kHw; ++y)
        for (int x = 0; x < kHw; ++x) {
            double cov = coverage(geom, x, y, stroke, 0.65);
            double r = bg.r + (fg.r - bg.r) * cov;
            double g = bg.g + (fg.g - bg.g) * cov;
            double b = bg.b + (fg.b - bg.b) * cov;
            s.image32.data[static_cast<size_t>(0) * kHw * kHw + static_cast<size_t>(y) * kHw + x] =
                static_cast<float>(r * 2.0 - 1.0);
            s.image32.data[static_cast<size_t>(1) * kHw * kHw + static_cast<size_t>(y) * kHw + x] =
                static_cast<float>(g * 2.0 - 1.0);
            s.image32.data[static_cast<size_t>(2) * kHw * kHw + static_cast<size_t>(y) * kHw + x] =
                static_cast<float>(b * 2.0 - 1.0);
        }
    s.image16 = avgpool_image(s.image32);
    s.condition_edge = edge_map(s.image32);

    // generator-enforced style separation
    double sat = mean_saturation(s.image32);
    if (stroke && sat >= 0.15)
        throw std::runtime_error("generator: outline sample broke the saturation bound");
    if (!stroke && sat <= 0.40)
        throw std::runtime_error("generator: plain sample broke the saturation bound");
    return s;
}

Dataset generate_dataset(int n, uint64_t seed) {
    if (n < 1) throw std::runtime_error("generate_dataset: n must be >= 1");
    Dataset ds;
    ds.samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ds.samples.push_back(generate_sample(seed, static_cast<uint64_t>(i)));
    return ds;
}

Label classify(const Tensor& image32) {
    double sat_mean = mean_saturation(image32);
    Label out;
    out.style = sat_mean < 0.25 ? Style::kOutline : Style::kPlain;

    std::vector<uint8_t> mask(kHw * kHw, 0);
    int votes[3] = {0, 0, 0};
    int mask_count = 0;
    for (int y = 0; y < kHw; ++y)
        for (int x = 0; x < kHw; ++x) {
            double r, g, b;
            rgb01(image32, y, x, r, g, b);
            double s = pixel_saturation(r, g, b);
            double v = std::max({r, g, b});
            bool on = out.style == Style::kPlain ? (s > 0.6) : (s > 0.45 && v < 0.7);
            if (!on) continue;
            mask[static_cast<size_t>(y) * kHw + x] = 1;
            ++mask_count;
            double h = pixel_hue(r, g, b);
            double best = 2.0;
            int best_c = 0;
            for (int c = 0; c < 3; ++c) {
                double d = std::fabs(h - c / 3.0);
                d = std::min(d, 1.0 - d);
                if (d < best) {
                    best = d;
                    best_c = c;
                }
            }
            ++votes[best_c];
        }
    out.color = static_cast<Color>(std::max_element(votes, votes + 3) - votes);

    double best_iou = -1.0;
    Shape best_shape = Shape::kCircle;
    for (const Template& t : templates()) {
        const std::vector<uint8_t>& tm = out.style == Style::kPlain ? t.filled : t.ring;
        int tcount = out.style == Style::kPlain ? t.filled_count : t.ring_count;
        int inter = 0;
        for (int i = 0; i < kHw * kHw; ++i) inter += (mask[static_cast<size_t>(i)] & tm[static_cast<size_t>(i)]);
        double uni = static_cast<double>(mask_count + tcount - inter);
        double iou = uni > 0 ? inter / uni : 0.0;
        if (iou > best_iou) {
            best_iou = iou;
            best_shape = t.shape;
        }
    }
    out.shape = best_shape;
    return out;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::string buf;
    buf.append("XADDATA1", 8);
    uint32_t count = static_cast<uint32_t>(ds.samples.size());
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((count >> (8 * i)) & 0xff));
    for (const auto& s : ds.samples) {
        size_t off = buf.size();
        buf.resize(off + kRecordBytes);
        char* p = buf.data() + off;
        std::memcpy(p, s.image32.data.data(), 3 * kHw * kHw * 4);
        p += 3 * kHw * kHw * 4;
        std::memcpy(p, s.image16.data.data(), 3 * 16 * 16 * 4);
        p += 3 * 16 * 16 * 4;
        *p++ = static_cast<char>(s.label.shape);
        *p++ = static_cast<char>(s.label.color);
        *p++ = static_cast<char>(s.label.style);
        for (int byte = 0; byte < kHw * kHw / 8; ++byte) {
            uint8_t v = 0;
            for (int bit = 0; bit < 8; ++bit)
                if (s.condition_edge[static_cast<size_t>(byte) * 8 + bit]) v |= static_cast<uint8_t>(1u << (7 - bit));
            *p++ = static_cast<char>(v);
        }
    }
    write_text_file(path, buf);
}

Dataset load_dataset(const std::string& path) {
    std::string buf = read_text_file(path);
    if (buf.size() < 12 || buf.compare(0, 8, "XADDATA1") != 0)
        throw std::runtime_error("dataset " + path + ": bad magic");
    uint32_t count = 0;
    for (int i = 0; i < 4; ++i) count |= static_cast<uint32_t>(static_cast<uint8_t>(buf[8 + i])) << (8 * i);
    if (buf.size() != 12 + static_cast<size_t>(count) * kRecordBytes)
        throw std::runtime_error("dataset " + path + ": truncated or oversized payload");
    Dataset ds;
    ds.samples.resize(count);
    const char* p = buf.data() + 12;
    for (uint32_t i = 0; i < count; ++i) {
        ToySample& s = ds.samples[i];
        s.image32 = Tensor({3, kHw, kHw});
        std::memcpy(s.image32.data.data(), p, 3 * kHw * kHw * 4);
        p += 3 * kHw * kHw * 4;
        s.image16 = Tensor({3, 16, 16});
        std::memcpy(s.image16.data.data(), p, 3 * 16 * 16 * 4);
        p += 3 * 16 * 16 * 4;
        s.label.shape = static_cast<Shape>(*p++);
        s.label.color = static_cast<Color>(*p++);
        s.label.style = static_cast<Style>(*p++);
        s.condition_edge.assign(kHw * kHw, 0);
        for (int byte = 0; byte < kHw * kHw / 8; ++byte) {
            uint8_t v = static_cast<uint8_t>(*p++);
            for (int bit = 0; bit < 8; ++bit)
                s.condition_edge[static_cast<size_t>(byte) * 8 + bit] = (v >> (7 - bit)) & 1u;
        }
    }
    return ds;
}

}  // namespace xad
