#include "xad/config.hpp"

#include "xad/checkpoint.hpp"

namespace xad {

nlohmann::json ExperimentConfig::defaults() {
    // Desk-scale budgets, pilot-tuned for a small number of CPU cores.
    return nlohmann::json{
        {"data", {{"n_train", 3072}, {"n_eval", 512}, {"seed", 11}}},
        {"schedule", {{"timesteps", 100}, {"beta_start", 1e-4}, {"beta_end", 0.02}}},
        {"base",
         {{"vae", {{"steps", 1500}, {"batch", 16}, {"lr", 1e-3}, {"seed", 101}}},
          {"unet",
           {{"steps", 3000}, {"batch", 8}, {"lr", 1e-3}, {"null_prob", 0.1}, {"seed", 102}}}}},
        {"upgraded",
         {{"vae", {{"steps", 1800}, {"batch", 12}, {"lr", 1e-3}, {"seed", 201}}},
          {"unet",
           {{"steps", 3000}, {"batch", 8}, {"lr", 1e-3}, {"null_prob", 0.1}, {"seed", 202}}}}},
        {"plugins",
         {{"control", {{"steps", 1600}, {"batch", 8}, {"lr", 1e-3}, {"seed", 301}}},
          {"lora",
           {{"rank", 4}, {"scale", 1.0}, {"steps", 1400}, {"batch", 8}, {"lr", 2e-3}, {"seed", 302}}}}},
        {"adapter",
         {{"steps", 1500},
          {"batch", 4},
          {"lr", 3e-4},
          {"null_prob_upgraded", 1.0},
          {"null_prob_base", 0.0},
          {"base_prompt", "label"},
          {"placement", "decoder"},
          {"fusion", "add"},
          {"lambda", 0.5},
          {"seed", 401}}},
        {"inference",
         {{"sampler", "ddim"}, {"alpha", 0.8}, {"seed", 7}, {"samples", 4}, {"prompt_base", 1},
          {"prompt_up", 1}}},
        {"eval",
         {{"comparison_samples", 34},
          {"sweep_samples", 20},
          {"ablation_samples", 24},
          {"seeds", {1001, 2002, 3003}},
          {"t0_grid", {0.2, 0.36, 0.52, 0.68, 0.84, 1.0}}}},
    };
}

namespace {

void merge_checked(nlohmann::json& base, const nlohmann::json& overrides, const std::string& path) {
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
        std::string child = path.empty() ? it.key() : path + "." + it.key();
        auto bit = base.find(it.key());
        if (bit == base.end()) throw ConfigKeyError("config: unknown key " + child);
        if (bit->is_object()) {
            if (!it->is_object())
                throw ConfigKeyError("config: key " + child + " must be a section");
            merge_checked(*bit, *it, child);
        } else {
            if (it->is_object()) throw ConfigKeyError("config: key " + child + " is not a section");
            if (bit->is_number() && !it->is_number())
                throw ConfigKeyError("config: key " + child + " must be a number");
            if (bit->is_string() && !it->is_string())
                throw ConfigKeyError("config: key " + child + " must be a string");
            if (bit->is_array() && !it->is_array())
                throw ConfigKeyError("config: key " + child + " must be an array");
            *bit = *it;
        }
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_defaults() {
    ExperimentConfig c;
    c.doc_ = defaults();
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& overrides) {
    ExperimentConfig c;
    c.doc_ = defaults();
    merge_checked(c.doc_, overrides, "");
    return c;
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // derive line/column from the byte offset
        int line = 1, col = 1;
        for (size_t i = 0; i < std::min(text.size(), static_cast<size_t>(e.byte)); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigParseError("config parse error: " + std::string(e.what()), line, col);
    }
    return from_json(parsed);
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_text(read_text_file(path));
}

std::string ExperimentConfig::section_hash12(const std::vector<std::string>& sections) const {
    nlohmann::json subset;
    for (const auto& s : sections) subset[s] = doc_.at(s);
    std::string canon = subset.dump();
    return hex64(fnv1a64(canon.data(), canon.size())).substr(4);
}

}  // namespace xad
