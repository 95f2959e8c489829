#ifndef XAD_PLUGINS_HPP
#define XAD_PLUGINS_HPP

#include <string>
#include <vector>

#include "xad/models.hpp"

namespace xad {

// Plugins are trained against the frozen BASE model only and attach via
// connectors: named sites with exact channel/resolution requirements.

struct ConnectorSite {
    SiteId site;
    int channels = 0;
    int hw = 0;
};

struct ConnectorSpec {
    std::vector<ConnectorSite> sites;
};

struct SiteCheck {
    SiteId site;
    bool ok = false;
    bool present = false;  // false when the target has no such stage
    int expected_channels = 0, expected_hw = 0;
    int found_channels = 0, found_hw = 0;
    std::string str() const;
};

struct CompatibilityReport {
    std::vector<SiteCheck> checks;  // deterministic order by site id
    bool compatible() const;
    int mismatches() const;
    std::string str() const;
};

// Mismatch is data, not an error: an empty spec is compatible with anything.
CompatibilityReport verify_connector(const ConnectorSpec& plugin, const UNetSpec& target);

// ControlNet-style control branch: a condition encoder, a trainable copy
// of the BASE UNet encoder, and zero-initialized 1x1 projections that emit
// residuals for the three BASE decoder sites.
struct ControlBranch {
    UNetSpec base_spec;
    int cond_hw = 32;       // conditions are binary edge maps at 32x32
    ParamStore params;      // prefix "plugin.control."
    bool trained = false;
    uint64_t base_checksum = 0;

    static ControlBranch make(const ModelVersion& base, uint64_t seed);
    ConnectorSpec connector() const;
};

// Builds the branch's injection residuals for one forward. `cond` is a
// [N,1,32,32] tensor of the condition maps; the base prompt table is read
// (frozen) from `base`.
std::vector<Injection> control_injections(ModelRun& run, const ControlBranch& cb,
                                          const ModelVersion& base, int z_t,
                                          const std::vector<int>& ts, const std::vector<int>& tokens,
                                          int cond);

Tensor condition_tensor(const std::vector<uint8_t>& edge, int hw);

void save_control_branch(const std::string& path_prefix, const ControlBranch& cb);
ControlBranch load_control_branch(const std::string& path_prefix, const ModelVersion& base);

// LoRA-style low-rank delta over the BASE UNet's 1x1 convolutions and
// projection matrices: effective weight = W + scale * B * A with B
// zero-initialized. Patching never mutates the original weights, so
// dropping the transform restores bit-identical behavior.
struct LowRankDelta : WeightTransform {
    int rank = 4;
    float scale = 1.0f;
    std::vector<std::string> targets;  // base parameter names, sorted
    ParamStore params;                 // "plugin.lora.<target>.a" / ".b"
    bool trained = false;
    uint64_t base_checksum = 0;

    static std::vector<std::string> default_targets(const ModelVersion& base);
    static LowRankDelta make(const ModelVersion& base, const std::vector<std::string>& target_names,
                             int rank, float scale, uint64_t seed);

    int apply(ModelRun& run, const std::string& name, int weight_node) const override;
    bool is_target(const std::string& name) const;
    ConnectorSpec connector() const;

  private:
    UNetSpec base_spec_;
};

void save_lora(const std::string& path_prefix, const LowRankDelta& delta);
LowRankDelta load_lora(const std::string& path_prefix, const ModelVersion& base);

}  // namespace xad

#endif
