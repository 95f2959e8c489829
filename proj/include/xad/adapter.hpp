#ifndef XAD_ADAPTER_HPP
#define XAD_ADAPTER_HPP

#include <map>
#include <string>
#include <vector>

#include "xad/models.hpp"
#include "xad/optim.hpp"

namespace xad {

// The adapter proper: per-site mapper networks that turn BASE decoder (or
// encoder) features into UPGRADED-shaped guidance, plus the fusion rule
// that merges guidance into the frozen UPGRADED UNet.

enum class FusionKind { kAdd, kGuided, kSpade };

struct FusionMode {
    FusionKind kind = FusionKind::kAdd;
    float lambda = 0.5f;  // only used by kGuided: c = b + lambda * (a - b)

    std::string str() const;
    static FusionMode parse(const std::string& text, float lambda);
};

enum class Placement { kEncoder, kDecoder, kBoth };

std::string placement_str(Placement p);
Placement parse_placement(const std::string& text);

struct MapperStack {
    Placement placement = Placement::kDecoder;
    FusionMode fusion;
    std::vector<SiteId> mapped;  // paired sites: BASE stage n -> UPGRADED stage n
    UNetSpec base_spec, up_spec;
    ParamStore params;  // "adapter.map.<site>...", "adapter.spade.<site>..."
    int steps_trained = 0;

    std::vector<std::string> trainable_names() const { return params.names(); }
};

// One mapper per paired site under the placement. Each mapper: 2x nearest
// upsample, 1x1 projection base_ch -> up_ch, three residual conv blocks,
// and a zero-initialized final 1x1 so a fresh stack emits zero guidance.
MapperStack build_mappers(const UNetSpec& base_spec, const UNetSpec& up_spec, Placement placement,
                          FusionMode fusion, uint64_t seed);

int mapper_forward(ModelRun& run, const MapperStack& stack, SiteId site, int base_tap);

// Runs every mapper on the given BASE taps.
std::map<SiteId, int> map_taps(ModelRun& run, const MapperStack& stack,
                               const std::map<SiteId, int>& base_taps);

// SiteFusion implementation for the UPGRADED forward.
struct GuidanceFusion : SiteFusion {
    const MapperStack* stack = nullptr;
    std::map<SiteId, int> guidance;

    int fuse(ModelRun& run, SiteId site, int feature) const override;
    bool handles(SiteId site) const override { return guidance.count(site) != 0; }
};

// UPGRADED forward with guidance fused at its sites. Guidance sites must
// be a subset of the model's sites with exactly matching shapes.
int fused_forward(ModelRun& run, const ModelVersion& up, int z_t_up, const std::vector<int>& ts,
                  const std::vector<int>& tokens, const std::map<SiteId, int>& guidance,
                  const MapperStack& stack);

// Adapter checkpoints carry only mapper (and SPADE) parameters plus a
// manifest naming the model checkpoints they were trained against;
// loading against different checksums fails loudly. AdamW moments are
// saved alongside so training state round-trips exactly.
void save_adapter(const std::string& path_prefix, const MapperStack& stack,
                  uint64_t base_checksum, uint64_t up_checksum, const AdamW* optimizer = nullptr);
MapperStack load_adapter(const std::string& path_prefix, const ModelVersion& base,
                         const ModelVersion& up, AdamW* optimizer = nullptr);

}  // namespace xad

#endif
