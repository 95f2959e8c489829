#ifndef XAD_EXPERIMENT_HPP
#define XAD_EXPERIMENT_HPP

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xad/config.hpp"
#include "xad/data.hpp"
#include "xad/metrics.hpp"
#include "xad/pipelines.hpp"
#include "xad/train.hpp"

namespace xad {

// Content-addressed experiment workspace. Every stage writes into
// <root>/<stage>-<hash12> where the hash covers exactly the config
// sections the stage depends on, so ablation variants reuse shared
// upstream checkpoints. A stage directory is complete once its
// manifest.json lands; ensure-style accessors load complete stages and
// build missing ones.
//
// Training logs ("*.log", step/loss/wallclock lines) are the only
// artifacts containing wall-clock values; everything else is
// byte-reproducible given (config, seeds, platform).

class Workspace {
  public:
    Workspace(std::string root, ExperimentConfig cfg);

    const ExperimentConfig& config() const { return cfg_; }
    const std::string& root() const { return root_; }

    std::string stage_dir(const std::string& stage) const;
    bool stage_complete(const std::string& stage) const;
    static const std::vector<std::string>& stage_names();

    const Dataset& train_data();
    const Dataset& eval_data();
    const NoiseSchedule& schedule();
    ModelVersion& base();
    ModelVersion& upgraded();
    ControlBranch& control();
    LowRankDelta& lora();

    // Adapter variants: "main" plus ablation arms with config overrides.
    static const std::vector<std::string>& adapter_variants();
    MapperStack& adapter(const std::string& variant);
    AdapterTrainConfig adapter_train_config(const std::string& variant) const;

  private:
    void write_manifest(const std::string& stage, const nlohmann::json& extra = {});
    std::string variant_stage(const std::string& variant) const;

    std::string root_;
    ExperimentConfig cfg_;
    std::optional<Dataset> train_data_, eval_data_;
    std::optional<NoiseSchedule> sched_;
    std::optional<ModelVersion> base_, up_;
    std::optional<ControlBranch> control_;
    std::optional<LowRankDelta> lora_;
    std::map<std::string, MapperStack> adapters_;
};

// A slice of the eval set plus the matching generation request.
struct EvalBatch {
    BatchRequest req;
    std::vector<int> sample_indices;
};

// `content_prompts`: upgraded-bypass tokens are rewritten to the
// plain-style variant of the label (content only), mirroring the paper's
// LoRA prompt setting.
EvalBatch make_eval_batch(const Dataset& eval_set, uint64_t eval_seed, int count,
                          bool content_prompts);

struct MethodPoint {
    std::string method;
    double param = 0;  // alpha or t0 where applicable
    uint64_t eval_seed = 0;
    double cond_f1 = 0;
    double style = 0;
    double agreement = 0;
};

struct MethodAggregate {
    std::string method;
    double param = 0;
    double f1_mean = 0, f1_std = 0;
    double style_mean = 0;
    double agreement_mean = 0;
    double frechet = 0;  // pooled across seeds vs the eval set
};

struct MetricReport {
    std::string experiment;
    std::string config_hash;
    std::vector<MethodPoint> rows;
    std::vector<MethodAggregate> aggregates;

    std::string csv_rows() const;
    std::string csv_aggregates() const;
    const MethodAggregate& aggregate(const std::string& method, double param) const;
    std::vector<double> per_seed_f1(const std::string& method, double param) const;
    std::vector<double> per_seed_style(const std::string& method, double param) const;
};

// Table-1 analog: base+plugin vs sdedit vs x-adapter, control or lora.
MetricReport run_comparison(Workspace& ws, const std::string& plugin_kind);

// Fig.-6 analog: sdedit and x-adapter across the t0/alpha grid.
MetricReport run_sweep(Workspace& ws);

// Figs. 8-10 analogs. `arms` narrows the set (empty = all default arms).
MetricReport run_ablations(Workspace& ws, const std::string& kind,
                           const std::vector<std::string>& arms = {});

void write_report(Workspace& ws, const MetricReport& report);

// Checksum over a directory tree (sorted relative paths + contents),
// excluding "*.log" files.
uint64_t tree_checksum(const std::string& dir);

}  // namespace xad

#endif
