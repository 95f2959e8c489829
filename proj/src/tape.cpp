#include "xad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace xad {

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

namespace {

[[noreturn]] void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

void check_same(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
    if (a != b) fail(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void check_rank4(const char* op, const std::vector<int>& s) {
    if (s.size() != 4) fail(std::string(op) + ": expected rank-4 NCHW tensor, got " + shape_str(s));
}

}  // namespace

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        const T* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, T(0));
    for (int p = 0; p < k; ++p) {
        const T* brow = b + static_cast<size_t>(p) * n;
        const T* arow = a + static_cast<size_t>(p) * m;
        for (int i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    // Transpose B once so the inner loop stays contiguous.
    std::vector<T> bt(static_cast<size_t>(k) * n);
    for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) bt[static_cast<size_t>(p) * n + j] = b[static_cast<size_t>(j) * k + p];
    gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

template void gemm_nn<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_nn<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_tn<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_tn<double>(int, int, int, const double*, const double*, double*, bool);
template void gemm_nt<float>(int, int, int, const float*, const float*, float*, bool);
template void gemm_nt<double>(int, int, int, const double*, const double*, double*, bool);

namespace {

// col buffer layout: [(Ci*K*K), outH*outW]
template <typename T>
void im2col(const TensorT<T>& x, int sample, int kk, int pad, int out_h, int out_w, T* col) {
    int ci = x.shape[1], h = x.shape[2], w = x.shape[3];
    const T* base = x.data.data() + static_cast<size_t>(sample) * ci * h * w;
    size_t idx = 0;
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kk; ++ki) {
            for (int kj = 0; kj < kk; ++kj) {
                const T* plane = base + static_cast<size_t>(c) * h * w;
                for (int oy = 0; oy < out_h; ++oy) {
                    int iy = oy + ki - pad;
                    for (int ox = 0; ox < out_w; ++ox) {
                        int ix = ox + kj - pad;
                        col[idx++] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                         ? plane[static_cast<size_t>(iy) * w + ix]
                                         : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int sample, int ci, int h, int w, int kk, int pad, int out_h, int out_w,
                TensorT<T>& dx) {
    T* base = dx.data.data() + static_cast<size_t>(sample) * ci * h * w;
    size_t idx = 0;
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kk; ++ki) {
            for (int kj = 0; kj < kk; ++kj) {
                T* plane = base + static_cast<size_t>(c) * h * w;
                for (int oy = 0; oy < out_h; ++oy) {
                    int iy = oy + ki - pad;
                    for (int ox = 0; ox < out_w; ++ox) {
                        int ix = ox + kj - pad;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            plane[static_cast<size_t>(iy) * w + ix] += col[idx];
                        ++idx;
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
int TapeT<T>::push(TensorT<T> value, bool requires_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = requires_grad ? std::move(back) : std::function<void()>();
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
TensorT<T>& TapeT<T>::grad_buf(int id) {
    return nodes_[static_cast<size_t>(id)].grad;
}

template <typename T>
void TapeT<T>::ensure_grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) {
        n.grad.shape = n.value.shape;
        n.grad.data.assign(n.value.data.size(), T(0));
    }
}

template <typename T>
int TapeT<T>::leaf(TensorT<T> v, bool requires_grad) {
    return push(std::move(v), requires_grad, nullptr);
}

template <typename T>
int TapeT<T>::add(int a, int b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check_same("add", va.shape, vb.shape);
    TensorT<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, b] {
        const auto& g = grad(id);
        if (requires_grad(a)) {
            ensure_grad(a);
            auto& ga = grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (requires_grad(b)) {
            ensure_grad(b);
            auto& gb = grad_buf(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::sub(int a, int b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check_same("sub", va.shape, vb.shape);
    TensorT<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] - vb[i];
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, b] {
        const auto& g = grad(id);
        if (requires_grad(a)) {
            ensure_grad(a);
            auto& ga = grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (requires_grad(b)) {
            ensure_grad(b);
            auto& gb = grad_buf(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::mul(int a, int b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check_same("mul", va.shape, vb.shape);
    TensorT<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, b] {
        const auto& g = grad(id);
        const auto& va2 = value(a);
        const auto& vb2 = value(b);
        if (requires_grad(a)) {
            ensure_grad(a);
            auto& ga = grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
        }
        if (requires_grad(b)) {
            ensure_grad(b);
            auto& gb = grad_buf(b);
            for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va2[i];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::scalar_mul(int a, double s) {
    const auto& va = value(a);
    TensorT<T> out(va.shape);
    T sv = static_cast<T>(s);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * sv;
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, sv] {
        const auto& g = grad(id);
        ensure_grad(a);
        auto& ga = grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * sv;
    };
    return id;
}

template <typename T>
int TapeT<T>::matmul(int a, int b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.shape[1] != vb.shape[0])
        fail("matmul: incompatible shapes " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    int m = va.shape[0], k = va.shape[1], n = vb.shape[1];
    TensorT<T> out({m, n});
    gemm_nn(m, n, k, va.data.data(), vb.data.data(), out.data.data(), false);
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, b, m, n, k] {
        const auto& g = grad(id);
        if (requires_grad(a)) {
            ensure_grad(a);
            gemm_nt(m, k, n, g.data.data(), value(b).data.data(), grad_buf(a).data.data(), true);
        }
        if (requires_grad(b)) {
            ensure_grad(b);
            gemm_tn(k, n, m, value(a).data.data(), g.data.data(), grad_buf(b).data.data(), true);
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::reshape(int a, std::vector<int> shape) {
    const auto& va = value(a);
    if (TensorT<T>::numel_of(shape) != va.numel())
        fail("reshape: cannot reshape " + shape_str(va.shape) + " to " + shape_str(shape));
    TensorT<T> out(shape, va.data);
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a] {
        const auto& g = grad(id);
        ensure_grad(a);
        auto& ga = grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    };
    return id;
}

template <typename T>
int TapeT<T>::concat(int a, int b, int axis) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.rank() != vb.rank() || axis < 0 || axis >= va.rank())
        fail("concat: bad axis " + std::to_string(axis) + " for " + shape_str(va.shape) + " / " +
             shape_str(vb.shape));
    for (int i = 0; i < va.rank(); ++i)
        if (i != axis && va.shape[static_cast<size_t>(i)] != vb.shape[static_cast<size_t>(i)])
            fail("concat: shape mismatch " + shape_str(va.shape) + " vs " + shape_str(vb.shape) +
                 " on axis " + std::to_string(axis));

    std::vector<int> os = va.shape;
    os[static_cast<size_t>(axis)] += vb.shape[static_cast<size_t>(axis)];
    TensorT<T> out(os);

    // outer x axis x inner layout
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= va.shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < va.rank(); ++i) inner *= va.shape[static_cast<size_t>(i)];
    int64_t ax_a = va.shape[static_cast<size_t>(axis)], ax_b = vb.shape[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data.data() + (o * (ax_a + ax_b)) * inner,
                    va.data.data() + o * ax_a * inner, sizeof(T) * static_cast<size_t>(ax_a * inner));
        std::memcpy(out.data.data() + (o * (ax_a + ax_b) + ax_a) * inner,
                    vb.data.data() + o * ax_b * inner, sizeof(T) * static_cast<size_t>(ax_b * inner));
    }
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, b, outer, inner, ax_a, ax_b] {
        const auto& g = grad(id);
        if (requires_grad(a)) {
            ensure_grad(a);
            auto& ga = grad_buf(a);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < ax_a * inner; ++i)
                    ga[o * ax_a * inner + i] += g[(o * (ax_a + ax_b)) * inner + i];
        }
        if (requires_grad(b)) {
            ensure_grad(b);
            auto& gb = grad_buf(b);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < ax_b * inner; ++i)
                    gb[o * ax_b * inner + i] += g[(o * (ax_a + ax_b) + ax_a) * inner + i];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::upsample2x(int a) {
    const auto& va = value(a);
    check_rank4("upsample2x", va.shape);
    int n = va.shape[0], c = va.shape[1], h = va.shape[2], w = va.shape[3];
    TensorT<T> out({n, c, 2 * h, 2 * w});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    T v = va.at4(s, ch, y, x);
                    out.at4(s, ch, 2 * y, 2 * x) = v;
                    out.at4(s, ch, 2 * y, 2 * x + 1) = v;
                    out.at4(s, ch, 2 * y + 1, 2 * x) = v;
                    out.at4(s, ch, 2 * y + 1, 2 * x + 1) = v;
                }
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, n, c, h, w] {
        const auto& g = grad(id);
        ensure_grad(a);
        auto& ga = grad_buf(a);
        for (int s = 0; s < n; ++s)
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        ga.at4(s, ch, y, x) += g.at4(s, ch, 2 * y, 2 * x) + g.at4(s, ch, 2 * y, 2 * x + 1) +
                                               g.at4(s, ch, 2 * y + 1, 2 * x) +
                                               g.at4(s, ch, 2 * y + 1, 2 * x + 1);
    };
    return id;
}

template <typename T>
int TapeT<T>::avgpool2x(int a) {
    const auto& va = value(a);
    check_rank4("avgpool2x", va.shape);
    int n = va.shape[0], c = va.shape[1], h = va.shape[2], w = va.shape[3];
    if (h % 2 || w % 2) fail("avgpool2x: odd spatial extent " + shape_str(va.shape));
    TensorT<T> out({n, c, h / 2, w / 2});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h / 2; ++y)
                for (int x = 0; x < w / 2; ++x)
                    out.at4(s, ch, y, x) =
                        (va.at4(s, ch, 2 * y, 2 * x) + va.at4(s, ch, 2 * y, 2 * x + 1) +
                         va.at4(s, ch, 2 * y + 1, 2 * x) + va.at4(s, ch, 2 * y + 1, 2 * x + 1)) *
                        T(0.25);
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, n, c, h, w] {
        const auto& g = grad(id);
        ensure_grad(a);
        auto& ga = grad_buf(a);
        for (int s = 0; s < n; ++s)
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h / 2; ++y)
                    for (int x = 0; x < w / 2; ++x) {
                        T q = g.at4(s, ch, y, x) * T(0.25);
                        ga.at4(s, ch, 2 * y, 2 * x) += q;
                        ga.at4(s, ch, 2 * y, 2 * x + 1) += q;
                        ga.at4(s, ch, 2 * y + 1, 2 * x) += q;
                        ga.at4(s, ch, 2 * y + 1, 2 * x + 1) += q;
                    }
    };
    return id;
}

template <typename T>
int TapeT<T>::silu(int a) {
    const auto& va = value(a);
    TensorT<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double s = sigmoid(static_cast<double>(va[i]));
        out[i] = static_cast<T>(va[i] * s);
    }
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a] {
        const auto& g = grad(id);
        const auto& x = value(a);
        ensure_grad(a);
        auto& ga = grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) {
            double s = sigmoid(static_cast<double>(x[i]));
            ga[i] += g[i] * static_cast<T>(s * (1.0 + x[i] * (1.0 - s)));
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::tanh_act(int a) {
    const auto& va = value(a);
    TensorT<T> out(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(std::tanh(static_cast<double>(va[i])));
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a] {
        const auto& g = grad(id);
        const auto& y = value(id);
        ensure_grad(a);
        auto& ga = grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    };
    return id;
}

template <typename T>
int TapeT<T>::group_norm(int a, int groups) {
    const auto& va = value(a);
    check_rank4("group_norm", va.shape);
    int n = va.shape[0], c = va.shape[1], h = va.shape[2], w = va.shape[3];
    if (groups <= 0 || c % groups != 0)
        fail("group_norm: channels " + std::to_string(c) + " not divisible by groups " +
             std::to_string(groups));
    const double eps = 1e-5;
    int gc = c / groups;                      // channels per group
    int64_t gsz = int64_t(gc) * h * w;        // elements per group
    TensorT<T> out(va.shape);
    // per (sample, group) statistics, retained for backward via recompute
    for (int s = 0; s < n; ++s) {
        for (int g = 0; g < groups; ++g) {
            const T* src = va.data.data() + (static_cast<size_t>(s) * c + static_cast<size_t>(g) * gc) * h * w;
            T* dst = out.data.data() + (static_cast<size_t>(s) * c + static_cast<size_t>(g) * gc) * h * w;
            double mean = 0;
            for (int64_t i = 0; i < gsz; ++i) mean += src[i];
            mean /= static_cast<double>(gsz);
            double var = 0;
            for (int64_t i = 0; i < gsz; ++i) {
                double d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(gsz);
            double inv = 1.0 / std::sqrt(var + eps);
            for (int64_t i = 0; i < gsz; ++i) dst[i] = static_cast<T>((src[i] - mean) * inv);
        }
    }
    bool rg = requires_grad(a);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, n, c, h, w, groups, gc, gsz, eps] {
        const auto& g = grad(id);
        const auto& x = value(a);
        const auto& y = value(id);  // normalized values
        ensure_grad(a);
        auto& ga = grad_buf(a);
        for (int s = 0; s < n; ++s) {
            for (int gi = 0; gi < groups; ++gi) {
                size_t off = (static_cast<size_t>(s) * c + static_cast<size_t>(gi) * gc) * h * w;
                const T* xs = x.data.data() + off;
                const T* ys = y.data.data() + off;
                const T* gs = g.data.data() + off;
                T* out_g = ga.data.data() + off;
                double mean = 0, var = 0;
                for (int64_t i = 0; i < gsz; ++i) mean += xs[i];
                mean /= static_cast<double>(gsz);
                for (int64_t i = 0; i < gsz; ++i) {
                    double d = xs[i] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(gsz);
                double inv = 1.0 / std::sqrt(var + eps);
                double gmean = 0, gymean = 0;
                for (int64_t i = 0; i < gsz; ++i) {
                    gmean += gs[i];
                    gymean += static_cast<double>(gs[i]) * ys[i];
                }
                gmean /= static_cast<double>(gsz);
                gymean /= static_cast<double>(gsz);
                for (int64_t i = 0; i < gsz; ++i)
                    out_g[i] += static_cast<T>(inv * (gs[i] - gmean - ys[i] * gymean));
            }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::embedding(int table, const std::vector<int>& tokens) {
    const auto& vt = value(table);
    if (vt.rank() != 2) fail("embedding: table must be rank 2, got " + shape_str(vt.shape));
    int v = vt.shape[0], d = vt.shape[1];
    for (int tok : tokens)
        if (tok < 0 || tok >= v)
            fail("embedding: token " + std::to_string(tok) + " outside table of " + std::to_string(v));
    int n = static_cast<int>(tokens.size());
    TensorT<T> out({n, d});
    for (int i = 0; i < n; ++i)
        std::memcpy(out.data.data() + static_cast<size_t>(i) * d,
                    vt.data.data() + static_cast<size_t>(tokens[static_cast<size_t>(i)]) * d,
                    sizeof(T) * static_cast<size_t>(d));
    bool rg = requires_grad(table);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, table, tokens, d] {
        const auto& g = grad(id);
        ensure_grad(table);
        auto& gt = grad_buf(table);
        for (size_t i = 0; i < tokens.size(); ++i) {
            T* row = gt.data.data() + static_cast<size_t>(tokens[i]) * d;
            const T* src = g.data.data() + i * static_cast<size_t>(d);
            for (int j = 0; j < d; ++j) row[j] += src[j];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::conv2d(int x, int w, int b, int padding) {
    const auto& vx = value(x);
    const auto& vw = value(w);
    check_rank4("conv2d", vx.shape);
    check_rank4("conv2d weight", vw.shape);
    int n = vx.shape[0], ci = vx.shape[1], h = vx.shape[2], ww = vx.shape[3];
    int co = vw.shape[0], kh = vw.shape[2], kw = vw.shape[3];
    if (vw.shape[1] != ci)
        fail("conv2d: channel mismatch, input " + shape_str(vx.shape) + " weight " + shape_str(vw.shape));
    if (kh != kw || (kh != 1 && kh != 3)) fail("conv2d: kernel must be 1x1 or 3x3, got " + shape_str(vw.shape));
    if (padding < 0) fail("conv2d: negative padding");
    int oh = h + 2 * padding - kh + 1;
    int ow = ww + 2 * padding - kw + 1;
    if (oh <= 0 || ow <= 0) fail("conv2d: output would be empty for input " + shape_str(vx.shape));
    if (b >= 0 && (value(b).rank() != 1 || value(b).shape[0] != co))
        fail("conv2d: bias shape " + shape_str(value(b).shape) + " does not match out channels " +
             std::to_string(co));

    int kk = ci * kh * kw;
    int hw = oh * ow;
    TensorT<T> out({n, co, oh, ow});
    std::vector<T> col(static_cast<size_t>(kk) * hw);
    for (int s = 0; s < n; ++s) {
        im2col(vx, s, kh, padding, oh, ow, col.data());
        T* dst = out.data.data() + static_cast<size_t>(s) * co * hw;
        gemm_nn(co, hw, kk, vw.data.data(), col.data(), dst, false);
        if (b >= 0) {
            const auto& vb = value(b);
            for (int c = 0; c < co; ++c) {
                T bias = vb[c];
                T* row = dst + static_cast<size_t>(c) * hw;
                for (int i = 0; i < hw; ++i) row[i] += bias;
            }
        }
    }
    bool rg = requires_grad(x) || requires_grad(w) || (b >= 0 && requires_grad(b));
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, x, w, b, padding, n, ci, h, ww, co, kh, oh, ow] {
        const auto& g = grad(id);
        const auto& vx2 = value(x);
        const auto& vw2 = value(w);
        int kk = ci * kh * kh;
        int hw = oh * ow;
        std::vector<T> col(static_cast<size_t>(kk) * hw);
        std::vector<T> dcol;
        if (requires_grad(w)) ensure_grad(w);
        if (requires_grad(x)) {
            ensure_grad(x);
            dcol.resize(static_cast<size_t>(kk) * hw);
        }
        if (b >= 0 && requires_grad(b)) ensure_grad(b);
        for (int s = 0; s < n; ++s) {
            const T* gs = g.data.data() + static_cast<size_t>(s) * co * hw;
            if (requires_grad(w)) {
                im2col(vx2, s, kh, padding, oh, ow, col.data());
                gemm_nt(co, kk, hw, gs, col.data(), grad_buf(w).data.data(), true);
            }
            if (requires_grad(x)) {
                gemm_tn(kk, hw, co, vw2.data.data(), gs, dcol.data(), false);
                col2im_add(dcol.data(), s, ci, h, ww, kh, padding, oh, ow, grad_buf(x));
            }
            if (b >= 0 && requires_grad(b)) {
                auto& gb = grad_buf(b);
                for (int c = 0; c < co; ++c) {
                    const T* row = gs + static_cast<size_t>(c) * hw;
                    T acc = 0;
                    for (int i = 0; i < hw; ++i) acc += row[i];
                    gb[c] += acc;
                }
            }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::add_channel_bias(int x, int b) {
    const auto& vx = value(x);
    const auto& vb = value(b);
    check_rank4("add_channel_bias", vx.shape);
    if (vb.rank() != 2 || vb.shape[0] != vx.shape[0] || vb.shape[1] != vx.shape[1])
        fail("add_channel_bias: bias " + shape_str(vb.shape) + " does not match input " + shape_str(vx.shape));
    int n = vx.shape[0], c = vx.shape[1];
    int64_t hw = int64_t(vx.shape[2]) * vx.shape[3];
    TensorT<T> out(vx.shape);
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
            T bias = vb.at2(s, ch);
            size_t off = (static_cast<size_t>(s) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) out.data[off + i] = vx.data[off + i] + bias;
        }
    bool rg = requires_grad(x) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, x, b, n, c, hw] {
        const auto& g = grad(id);
        if (requires_grad(x)) {
            ensure_grad(x);
            auto& gx = grad_buf(x);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
        }
        if (requires_grad(b)) {
            ensure_grad(b);
            auto& gb = grad_buf(b);
            for (int s = 0; s < n; ++s)
                for (int ch = 0; ch < c; ++ch) {
                    size_t off = (static_cast<size_t>(s) * c + ch) * hw;
                    T acc = 0;
                    for (int64_t i = 0; i < hw; ++i) acc += g.data[off + i];
                    gb.at2(s, ch) += acc;
                }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::mse(int a, int b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    check_same("mse", va.shape, vb.shape);
    double acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) {
        double d = static_cast<double>(va[i]) - vb[i];
        acc += d * d;
    }
    TensorT<T> out({1});
    out[0] = static_cast<T>(acc / static_cast<double>(va.numel()));
    bool rg = requires_grad(a) || requires_grad(b);
    int id = push(std::move(out), rg, nullptr);
    if (rg) at(id).backward = [this, id, a, b] {
        const auto& g = grad(id);
        const auto& va2 = value(a);
        const auto& vb2 = value(b);
        T scale = g[0] * T(2) / static_cast<T>(va2.numel());
        if (requires_grad(a)) {
            ensure_grad(a);
            auto& ga = grad_buf(a);
            for (int64_t i = 0; i < va2.numel(); ++i) ga[i] += scale * (va2[i] - vb2[i]);
        }
        if (requires_grad(b)) {
            ensure_grad(b);
            auto& gb = grad_buf(b);
            for (int64_t i = 0; i < va2.numel(); ++i) gb[i] -= scale * (va2[i] - vb2[i]);
        }
    };
    return id;
}

template <typename T>
void TapeT<T>::backward(int loss) {
    if (backward_done_) fail("backward: tape already consumed; build a fresh tape per step");
    const auto& lv = value(loss);
    if (lv.numel() != 1) fail("backward: loss must be scalar, got shape " + shape_str(lv.shape));
    if (!requires_grad(loss)) fail("backward: loss does not depend on any trainable input");
    backward_done_ = true;
    ensure_grad(loss);
    grad_buf(loss)[0] = T(1);
    for (int i = loss; i >= 0; --i) {
        Node& nd = nodes_[static_cast<size_t>(i)];
        // skip nodes the loss never touched (their grad was never allocated)
        if (nd.backward && !nd.grad.data.empty()) nd.backward();
    }
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace xad
