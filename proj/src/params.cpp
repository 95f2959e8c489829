#include "xad/params.hpp"

#include <cmath>
#include <stdexcept>

namespace xad {

Tensor& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (entries.count(name)) throw std::runtime_error("param store: duplicate name " + name);
    auto& e = entries[name];
    e.value = std::move(value);
    e.trainable = trainable;
    return e.value;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("param store: unknown name " + name);
    return it->second.value;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("param store: unknown name " + name);
    return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("param store: unknown name " + name);
    return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool flag) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("param store: unknown name " + name);
    it->second.trainable = flag;
}

void ParamStore::freeze_all() {
    for (auto& [k, e] : entries) e.trainable = false;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& [k, e] : entries) out.push_back(k);
    return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [k, e] : entries)
        if (e.trainable) out.push_back(k);
    return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, e] : entries)
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
}

uint64_t ParamStore::content_hash() const {
    return content_hash("");
}

uint64_t ParamStore::content_hash(const std::string& prefix) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, e] : entries) {
        if (!prefix.empty() && k.rfind(prefix, 0) != 0) continue;
        h = fnv1a64(k.data(), k.size(), h);
        h = fnv1a64(e.value.shape.data(), e.value.shape.size() * sizeof(int), h);
        h = fnv1a64(e.value.data.data(), e.value.data.size() * sizeof(float), h);
    }
    return h;
}

int ModelRun::p(const std::string& name) {
    auto it = leafed.find(name);
    if (it != leafed.end()) return it->second;
    for (const ParamStore* s : stores) {
        auto e = s->entries.find(name);
        if (e != s->entries.end()) {
            int id = tape.leaf(e->second.value, grad_enabled && e->second.trainable);
            leafed[name] = id;
            return id;
        }
    }
    throw std::runtime_error("model run: unknown parameter " + name);
}

int ModelRun::c(Tensor value) {
    return tape.constant(std::move(value));
}

std::map<std::string, Tensor> ModelRun::grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : leafed) {
        if (!tape.requires_grad(id)) continue;
        const Tensor& g = tape.grad(id);
        if (!g.data.empty()) out[name] = g;
    }
    return out;
}

Tensor he_normal(Rng& rng, const std::vector<int>& shape, int fan_in) {
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<float>(rng.normal() * std);
    return t;
}

Tensor zeros(const std::vector<int>& shape) {
    return Tensor(shape);
}

Tensor normal_init(Rng& rng, const std::vector<int>& shape, double stddev) {
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<float>(rng.normal() * stddev);
    return t;
}

}  // namespace xad
