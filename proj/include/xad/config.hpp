#ifndef XAD_CONFIG_HPP
#define XAD_CONFIG_HPP

#include <stdexcept>
#include <string>

#include "json.hpp"
#include "xad/tensor.hpp"

namespace xad {

struct ConfigParseError : std::runtime_error {
    int line = 0, column = 0;
    ConfigParseError(const std::string& msg, int l, int c)
        : std::runtime_error(msg + " at line " + std::to_string(l) + ", column " + std::to_string(c)),
          line(l), column(c) {}
};

struct ConfigKeyError : std::runtime_error {
    explicit ConfigKeyError(const std::string& msg) : std::runtime_error(msg) {}
};

// Declarative experiment document. Every field has a default; unknown keys
// are rejected with their dotted path; the hash is taken over the
// canonicalized document (sorted keys, compact form) so it is stable under
// key reordering in the source file.
class ExperimentConfig {
  public:
    static nlohmann::json defaults();
    static ExperimentConfig from_defaults();
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_text(const std::string& text);
    static ExperimentConfig from_json(const nlohmann::json& overrides);

    const nlohmann::json& doc() const { return doc_; }
    nlohmann::json& doc() { return doc_; }

    std::string canonical() const { return doc_.dump(); }
    uint64_t hash() const { return fnv1a64(canonical().data(), canonical().size()); }
    std::string hash12() const { return hex64(hash()).substr(4); }

    // hash of a subset of top-level sections (stage addressing)
    std::string section_hash12(const std::vector<std::string>& sections) const;

    template <typename T>
    T get(const std::string& dotted_path) const {
        const nlohmann::json* cur = &doc_;
        size_t start = 0;
        while (true) {
            size_t dot = dotted_path.find('.', start);
            std::string key = dotted_path.substr(start, dot - start);
            auto it = cur->find(key);
            if (it == cur->end()) throw ConfigKeyError("config: no such key " + dotted_path);
            cur = &*it;
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        return cur->get<T>();
    }

  private:
    nlohmann::json doc_;
};

}  // namespace xad

#endif
