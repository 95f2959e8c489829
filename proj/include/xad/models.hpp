#ifndef XAD_MODELS_HPP
#define XAD_MODELS_HPP

#include <map>
#include <string>
#include <vector>

#include "xad/params.hpp"

namespace xad {

// Two deliberately incompatible toy latent-diffusion stacks. BASE works on
// 16x16 images with an 8x8x4 latent and stage widths {32,64,128}; UPGRADED
// works on 32x32 images with a 16x16x4 latent and widths {48,96,192}. No
// pair of corresponding stages matches in channels or resolution, so a
// plugin built for one geometry cannot attach to the other.

struct AutoencoderSpec {
    int image_hw = 0;
    int image_channels = 3;
    int latent_hw = 0;       // image_hw / 2, one downsample stage
    int latent_channels = 4;
    int width = 32;          // encoder/decoder conv width
};

struct UNetSpec {
    std::vector<int> stage_widths;  // 3 resolution stages
    int time_embed_dim = 0;
    int cond_embed_dim = 0;
    int vocab_size = 0;
    int latent_hw = 0;
    int latent_channels = 4;

    int stages() const { return static_cast<int>(stage_widths.size()); }
    int stage_hw(int stage) const { return latent_hw >> stage; }
};

enum class Side { kEncoder, kDecoder };

struct SiteId {
    Side side = Side::kDecoder;
    int stage = 0;

    bool operator<(const SiteId& o) const {
        if (side != o.side) return side < o.side;
        return stage < o.stage;
    }
    bool operator==(const SiteId& o) const { return side == o.side && stage == o.stage; }
    std::string str() const {
        return (side == Side::kEncoder ? "enc" : "dec") + std::to_string(stage);
    }
};

// Residual added at a site's hook. Encoder hooks sit on the stage output;
// decoder hooks sit after the stage's skip-concat + 1x1 reduction, before
// its residual block. Multiple entries for one site sum.
struct Injection {
    SiteId site;
    int node = -1;  // tape node on the current run
};

// Per-site feature transform applied after injections (the X-Adapter
// fusion path plugs in here).
struct SiteFusion {
    virtual ~SiteFusion() = default;
    virtual int fuse(ModelRun& run, SiteId site, int feature) const = 0;
    virtual bool handles(SiteId site) const = 0;
};

// Weight fetch hook (LoRA patches weights through this).
struct WeightTransform {
    virtual ~WeightTransform() = default;
    virtual int apply(ModelRun& run, const std::string& name, int weight_node) const = 0;
};

enum class Role { kBase, kUpgraded };

struct ModelVersion {
    Role role = Role::kBase;
    std::string prefix;  // "base." or "up." — every parameter name carries it
    AutoencoderSpec vae;
    UNetSpec unet;
    ParamStore params;
    float latent_scale = 1.0f;  // 1/std of encoder outputs over the training set
    bool vae_trained = false;
    bool unet_trained = false;
    uint64_t checkpoint_checksum = 0;  // checksum of the file this was loaded from

    static ModelVersion make(Role role, uint64_t init_seed);
    std::vector<SiteId> sites() const;
    std::vector<int> latent_shape(int batch) const {
        return {batch, vae.latent_channels, vae.latent_hw, vae.latent_hw};
    }
};

struct UnetOut {
    int eps = -1;                 // epsilon prediction node, same shape as z_t
    std::map<SiteId, int> taps;   // encoder + decoder stage outputs
};

// Graph-building forwards (shared by training and inference).
int vae_encode_node(ModelRun& run, const ModelVersion& mv, int image);
int vae_decode_node(ModelRun& run, const ModelVersion& mv, int latent);

UnetOut unet_forward(ModelRun& run, const ModelVersion& mv, int z_t, const std::vector<int>& ts,
                     const std::vector<int>& tokens, const std::vector<Injection>& injections = {},
                     const SiteFusion* fusion = nullptr, const WeightTransform* weights = nullptr);

// Tensor-level wrappers with latent standardization applied (encode scales
// by latent_scale, decode divides it back out).
Tensor encode_image(const ModelVersion& mv, const Tensor& image);
Tensor decode_latent(const ModelVersion& mv, const Tensor& latent);

Tensor sinusoidal_embedding(const std::vector<int>& ts, int dim);

// Model checkpoint + sidecar manifest (specs, latent scale, train flags).
void save_model(const std::string& path_prefix, const ModelVersion& mv);
ModelVersion load_model(const std::string& path_prefix);

}  // namespace xad

#endif
