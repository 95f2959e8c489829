#ifndef XAD_TENSOR_HPP
#define XAD_TENSOR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace xad {

// Dense row-major n-d tensor. Autodiff lives in tape.hpp; this is the
// value type used for weights at rest, datasets and sampler state.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<size_t>(numel_of(shape)) != data.size())
            throw std::runtime_error("tensor: shape/data size mismatch");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int e : s) {
            if (e <= 0) throw std::runtime_error("tensor: nonpositive extent");
            n *= e;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // NCHW accessor for rank-4 tensors.
    T& at4(int n, int c, int h, int w) {
        return data[static_cast<size_t>(((int64_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data[static_cast<size_t>(((int64_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    T& at2(int r, int c) { return data[static_cast<size_t>(int64_t(r) * shape[1] + c)]; }
    const T& at2(int r, int c) const { return data[static_cast<size_t>(int64_t(r) * shape[1] + c)]; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor  = TensorT<float>;
using TensorD = TensorT<double>;

std::string shape_str(const std::vector<int>& s);
bool same_shape(const std::vector<int>& a, const std::vector<int>& b);

// Deterministic RNG. Box-Muller over mt19937_64 bits so streams do not
// depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    int uniform_int(int lo, int hi);        // [lo, hi] inclusive
    double normal();                        // standard normal

    // Independent stream for (seed, index) fan-out.
    static Rng fork(uint64_t seed, uint64_t index);

    template <typename T>
    TensorT<T> normal_tensor(const std::vector<int>& shape) {
        TensorT<T> t(shape);
        for (auto& v : t.data) v = static_cast<T>(normal());
        return t;
    }

  private:
    uint64_t state_;
};

uint64_t splitmix64(uint64_t x);

// FNV-1a 64-bit digest; used for parameter freeze checks, file checksums
// and config hashes. Not cryptographic.
uint64_t fnv1a64(const void* bytes, size_t len, uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(uint64_t v);

template <typename T>
uint64_t tensor_hash(const TensorT<T>& t) {
    uint64_t h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(int));
    return fnv1a64(t.data.data(), t.data.size() * sizeof(T), h);
}

}  // namespace xad

#endif
