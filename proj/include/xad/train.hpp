#ifndef XAD_TRAIN_HPP
#define XAD_TRAIN_HPP

#include <string>
#include <vector>

#include "xad/adapter.hpp"
#include "xad/data.hpp"
#include "xad/diffusion.hpp"
#include "xad/models.hpp"
#include "xad/plugins.hpp"

namespace xad {

// Training loops. Each returns a metrics log of append-only
// "step,loss,wallclock_ms" lines; loss is recorded before the update.

struct TrainResult {
    std::string metrics_log;
    double initial_loss = 0;  // mean over the first 10 recorded steps
    double final_loss = 0;    // mean over the last 100 (or fewer) steps
};

// Plain autoencoder on image reconstruction MSE. On success computes the
// latent standardization scale over the training set, marks the VAE
// trained and freezes its parameters.
TrainResult train_vae(ModelVersion& mv, const Dataset& ds, int steps, int batch, double lr,
                      uint64_t seed);

// Epsilon-prediction training on standardized latents with the version's
// prompt embeddings; null_prob of the samples use the null token. Freezes
// the whole version when done.
TrainResult train_unet(ModelVersion& mv, const Dataset& ds, const NoiseSchedule& sched, int steps,
                       int batch, double lr, double null_prob, uint64_t seed);

// Control branch against the frozen BASE model.
TrainResult train_control_branch(ControlBranch& cb, const ModelVersion& base, const Dataset& ds,
                                 const NoiseSchedule& sched, int steps, int batch, double lr,
                                 uint64_t seed);

// LoRA on the outline-style subset of the dataset.
TrainResult train_lora(LowRankDelta& delta, const ModelVersion& base, const Dataset& ds,
                       const NoiseSchedule& sched, int steps, int batch, double lr, uint64_t seed);

struct AdapterTrainConfig {
    int steps = 1500;
    int batch = 4;
    double lr = 3e-4;
    double null_prob_upgraded = 1.0;  // paper setting: upgraded prompt always empty
    double null_prob_base = 0.0;
    bool base_prompt_label = true;  // c_b = image label (ablation: null)
    uint64_t seed = 401;
};

// One step's draws, exposed so tests can replay the exact protocol:
// per sample, in order: index, t, eps (base space), eps (upgraded space),
// then the two null-prompt coin flips.
struct AdapterBatch {
    std::vector<int> indices;
    std::vector<int> ts;
    Tensor z_t_base;  // [N,4,8,8]
    Tensor z_t_up;    // [N,4,16,16]
    Tensor eps_base;
    Tensor eps_up;
    std::vector<int> tokens_base;
    std::vector<int> tokens_up;
};

AdapterBatch draw_adapter_batch(Rng& rng, const Dataset& ds, const std::vector<Tensor>& latents_base,
                                const std::vector<Tensor>& latents_up, const NoiseSchedule& sched,
                                const AdapterTrainConfig& cfg);

// Precomputed standardized latents for every sample (base: image16,
// upgraded: image32).
std::vector<Tensor> encode_all(const ModelVersion& mv, const Dataset& ds);

// Eq.-style adapter training: dual latents of the same image at the same
// t, guidance from the base bypass, epsilon loss on the upgraded bypass,
// AdamW strictly on mapper parameters. Aborts if anything else is
// trainable.
TrainResult train_adapter(const ModelVersion& base, const ModelVersion& up, MapperStack& stack,
                          const Dataset& ds, const NoiseSchedule& sched,
                          const AdapterTrainConfig& cfg, AdamW* external_optimizer = nullptr);

}  // namespace xad

#endif
