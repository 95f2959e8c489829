#ifndef XAD_TAPE_HPP
#define XAD_TAPE_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "xad/tensor.hpp"

namespace xad {

// Reverse-mode tape. One tape per training step: build the graph with the
// op methods, call backward() once, read gradients, drop the tape.
//
// Nodes are append-only so the recorded order is already topological;
// backward replays it in reverse. Ops only record a backward closure when
// some input carries requires_grad, so pure inference pays for values only.
template <typename T>
class TapeT {
  public:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad;  // sized lazily during backward
        bool requires_grad = false;
        std::function<void()> backward;  // null for leaves/constants
    };

    int leaf(TensorT<T> v, bool requires_grad);
    int constant(TensorT<T> v) { return leaf(std::move(v), false); }

    // Elementwise / structural op set.
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scalar_mul(int a, double s);
    int matmul(int a, int b);                    // [m,k] x [k,n]
    int reshape(int a, std::vector<int> shape);
    int concat(int a, int b, int axis);
    int upsample2x(int a);                       // [N,C,H,W] nearest
    int avgpool2x(int a);                        // [N,C,H,W]
    int silu(int a);
    int tanh_act(int a);
    int group_norm(int a, int groups);           // [N,C,H,W], per (n, group)
    int embedding(int table, const std::vector<int>& tokens);  // [V,D] -> [N,D]
    int conv2d(int x, int w, int b, int padding);  // x [N,Ci,H,W], w [Co,Ci,kh,kw], b [Co] or -1
    int add_channel_bias(int x, int b);          // x [N,C,H,W] + b [N,C] per-sample channel bias
    int mse(int a, int b);                       // mean squared error -> [1]

    // Backward from a scalar node. May be called once per tape.
    void backward(int loss);

    const TensorT<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const TensorT<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    size_t size() const { return nodes_.size(); }

  private:
    int push(TensorT<T> value, bool requires_grad, std::function<void()> back);
    Node& at(int id) { return nodes_[static_cast<size_t>(id)]; }
    TensorT<T>& grad_buf(int id);
    void ensure_grad(int id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

using Tape  = TapeT<float>;
using TapeD = TapeT<double>;

// Plain GEMM helpers shared by matmul/conv; C (+)= op(A) * op(B), row-major.
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);  // A is [k,m]
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);  // B is [n,k]

double sigmoid(double x);

}  // namespace xad

#endif
