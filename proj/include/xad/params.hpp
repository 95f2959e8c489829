#ifndef XAD_PARAMS_HPP
#define XAD_PARAMS_HPP

#include <map>
#include <set>
#include <string>
#include <vector>

#include "xad/tape.hpp"
#include "xad/tensor.hpp"

namespace xad {

// Named parameter registry. Names are dotted paths and unique; a version
// prefix ("base.", "up.", "adapter.", "plugin.") scopes every model.
struct ParamStore {
    struct Entry {
        Tensor value;
        bool trainable = true;
    };

    std::map<std::string, Entry> entries;  // ordered: deterministic iteration

    Tensor& add(const std::string& name, Tensor value, bool trainable = true);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return entries.count(name) != 0; }
    bool trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool flag);
    void freeze_all();

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    // Digest over (name, shape, raw bytes) of every entry; freeze checks
    // compare this before/after training runs.
    uint64_t content_hash() const;
    uint64_t content_hash(const std::string& prefix) const;
};

// One forward/backward episode: leafs parameters onto a tape on first use
// so a parameter referenced twice maps to a single node and gradients
// accumulate correctly.
struct ModelRun {
    Tape tape;
    std::vector<const ParamStore*> stores;
    std::map<std::string, int> leafed;
    bool grad_enabled = true;  // false for pure inference

    explicit ModelRun(const ParamStore& s) { stores.push_back(&s); }
    ModelRun(std::initializer_list<const ParamStore*> list) : stores(list) {}

    int p(const std::string& name);          // parameter leaf (trainable => requires_grad)
    int c(Tensor value);                     // constant
    // gradient map over trainable leaves reached by backward
    std::map<std::string, Tensor> grads() const;
};

// Weight initializers (deterministic given the rng).
Tensor he_normal(Rng& rng, const std::vector<int>& shape, int fan_in);
Tensor zeros(const std::vector<int>& shape);
Tensor normal_init(Rng& rng, const std::vector<int>& shape, double stddev);

}  // namespace xad

#endif
