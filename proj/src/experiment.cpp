#include "xad/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>

#include "xad/checkpoint.hpp"

namespace xad {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::vector<std::string>> kStageDeps = {
    {"data", {"data"}},
    {"base-vae", {"data", "base"}},
    {"base-unet", {"data", "schedule", "base"}},
    {"up-vae", {"data", "upgraded"}},
    {"up-unet", {"data", "schedule", "upgraded"}},
    {"control", {"data", "schedule", "base", "plugins"}},
    {"lora", {"data", "schedule", "base", "plugins"}},
    {"adapter", {"data", "schedule", "base", "upgraded", "adapter"}},
};

}  // namespace

Workspace::Workspace(std::string root, ExperimentConfig cfg) : root_(std::move(root)), cfg_(std::move(cfg)) {
    const char* env = std::getenv("XADAPTER_OUT");
    if (root_.empty() && env) root_ = env;
    if (root_.empty()) root_ = "out";
}

const std::vector<std::string>& Workspace::stage_names() {
    static const std::vector<std::string> names = {"data",    "base-vae", "base-unet", "up-vae",
                                                   "up-unet", "control",  "lora",      "adapter-main"};
    return names;
}

const std::vector<std::string>& Workspace::adapter_variants() {
    static const std::vector<std::string> v = {"main", "encoder", "both", "null0", "null50", "guided", "spade"};
    return v;
}

std::string Workspace::variant_stage(const std::string& variant) const {
    return "adapter-" + variant;
}

std::string Workspace::stage_dir(const std::string& stage) const {
    std::string key = stage;
    std::string variant;
    if (key.rfind("adapter-", 0) == 0) {
        variant = key.substr(8);
        key = "adapter";
    }
    auto it = kStageDeps.find(key);
    if (it == kStageDeps.end()) throw std::runtime_error("unknown stage: " + stage);
    nlohmann::json subset;
    for (const auto& s : it->second) subset[s] = cfg_.doc().at(s);
    if (!variant.empty() && variant != "main") subset["adapter_variant"] = variant;
    std::string canon = subset.dump();
    return root_ + "/" + stage + "-" + hex64(fnv1a64(canon.data(), canon.size())).substr(4);
}

bool Workspace::stage_complete(const std::string& stage) const {
    return file_exists(stage_dir(stage) + "/manifest.json");
}

void Workspace::write_manifest(const std::string& stage, const nlohmann::json& extra) {
    nlohmann::json j;
    j["stage"] = stage;
    j["config_hash"] = cfg_.hash12();
    std::string key = stage.rfind("adapter-", 0) == 0 ? "adapter" : stage;
    auto it = kStageDeps.find(key);
    if (it != kStageDeps.end()) {
        nlohmann::json subset;
        for (const auto& s : it->second) subset[s] = cfg_.doc().at(s);
        j["config"] = subset;
    }
    for (auto el = extra.begin(); el != extra.end(); ++el) j[el.key()] = el.value();
    j["complete"] = true;
    write_text_file(stage_dir(stage) + "/manifest.json", j.dump(2) + "\n");
}

const NoiseSchedule& Workspace::schedule() {
    if (!sched_)
        sched_ = make_linear_schedule(cfg_.get<int>("schedule.timesteps"),
                                      cfg_.get<double>("schedule.beta_start"),
                                      cfg_.get<double>("schedule.beta_end"));
    return *sched_;
}

const Dataset& Workspace::train_data() {
    if (train_data_) return *train_data_;
    std::string dir = stage_dir("data");
    if (!stage_complete("data")) {
        Dataset train = generate_dataset(cfg_.get<int>("data.n_train"), cfg_.get<uint64_t>("data.seed"));
        Dataset eval = generate_dataset(cfg_.get<int>("data.n_eval"),
                                        splitmix64(cfg_.get<uint64_t>("data.seed") ^ 0xe7a1ull));
        save_dataset(dir + "/train.bin", train);
        save_dataset(dir + "/eval.bin", eval);
        write_manifest("data");
        train_data_ = std::move(train);
        eval_data_ = std::move(eval);
    } else {
        train_data_ = load_dataset(dir + "/train.bin");
    }
    return *train_data_;
}

const Dataset& Workspace::eval_data() {
    if (!eval_data_) {
        train_data();  // ensures the stage
        if (!eval_data_) eval_data_ = load_dataset(stage_dir("data") + "/eval.bin");
    }
    return *eval_data_;
}

ModelVersion& Workspace::base() {
    if (base_) return *base_;
    std::string vdir = stage_dir("base-vae");
    std::string udir = stage_dir("base-unet");
    if (stage_complete("base-unet")) {
        base_ = load_model(udir + "/base");
        return *base_;
    }
    ModelVersion mv = ModelVersion::make(Role::kBase, cfg_.get<uint64_t>("base.vae.seed"));
    if (stage_complete("base-vae")) {
        ModelVersion loaded = load_model(vdir + "/base");
        mv = std::move(loaded);
    } else {
        auto r = train_vae(mv, train_data(), cfg_.get<int>("base.vae.steps"),
                           cfg_.get<int>("base.vae.batch"), cfg_.get<double>("base.vae.lr"),
                           cfg_.get<uint64_t>("base.vae.seed"));
        write_text_file(vdir + "/vae_train.log", r.metrics_log);
        save_model(vdir + "/base", mv);
        write_manifest("base-vae");
    }
    auto r = train_unet(mv, train_data(), schedule(), cfg_.get<int>("base.unet.steps"),
                        cfg_.get<int>("base.unet.batch"), cfg_.get<double>("base.unet.lr"),
                        cfg_.get<double>("base.unet.null_prob"), cfg_.get<uint64_t>("base.unet.seed"));
    write_text_file(udir + "/unet_train.log", r.metrics_log);
    save_model(udir + "/base", mv);
    mv.checkpoint_checksum = file_checksum(udir + "/base.ckpt");
    write_manifest("base-unet", {{"final_loss", r.final_loss}});
    base_ = std::move(mv);
    return *base_;
}

ModelVersion& Workspace::upgraded() {
    if (up_) return *up_;
    std::string vdir = stage_dir("up-vae");
    std::string udir = stage_dir("up-unet");
    if (stage_complete("up-unet")) {
        up_ = load_model(udir + "/up");
        return *up_;
    }
    ModelVersion mv = ModelVersion::make(Role::kUpgraded, cfg_.get<uint64_t>("upgraded.vae.seed"));
    if (stage_complete("up-vae")) {
        mv = load_model(vdir + "/up");
    } else {
        auto r = train_vae(mv, train_data(), cfg_.get<int>("upgraded.vae.steps"),
                           cfg_.get<int>("upgraded.vae.batch"), cfg_.get<double>("upgraded.vae.lr"),
                           cfg_.get<uint64_t>("upgraded.vae.seed"));
        write_text_file(vdir + "/vae_train.log", r.metrics_log);
        save_model(vdir + "/up", mv);
        write_manifest("up-vae");
    }
    auto r = train_unet(mv, train_data(), schedule(), cfg_.get<int>("upgraded.unet.steps"),
                        cfg_.get<int>("upgraded.unet.batch"), cfg_.get<double>("upgraded.unet.lr"),
                        cfg_.get<double>("upgraded.unet.null_prob"),
                        cfg_.get<uint64_t>("upgraded.unet.seed"));
    write_text_file(udir + "/unet_train.log", r.metrics_log);
    save_model(udir + "/up", mv);
    mv.checkpoint_checksum = file_checksum(udir + "/up.ckpt");
    write_manifest("up-unet", {{"final_loss", r.final_loss}});
    up_ = std::move(mv);
    return *up_;
}

ControlBranch& Workspace::control() {
    if (control_) return *control_;
    std::string dir = stage_dir("control");
    ModelVersion& b = base();
    if (stage_complete("control")) {
        control_ = load_control_branch(dir + "/control", b);
        return *control_;
    }
    ControlBranch cb = ControlBranch::make(b, cfg_.get<uint64_t>("plugins.control.seed"));
    auto r = train_control_branch(cb, b, train_data(), schedule(),
                                  cfg_.get<int>("plugins.control.steps"),
                                  cfg_.get<int>("plugins.control.batch"),
                                  cfg_.get<double>("plugins.control.lr"),
                                  cfg_.get<uint64_t>("plugins.control.seed"));
    write_text_file(dir + "/control_train.log", r.metrics_log);
    save_control_branch(dir + "/control", cb);
    write_manifest("control", {{"final_loss", r.final_loss}});
    control_ = std::move(cb);
    return *control_;
}

LowRankDelta& Workspace::lora() {
    if (lora_) return *lora_;
    std::string dir = stage_dir("lora");
    ModelVersion& b = base();
    if (stage_complete("lora")) {
        lora_ = load_lora(dir + "/lora", b);
        return *lora_;
    }
    LowRankDelta d = LowRankDelta::make(b, LowRankDelta::default_targets(b),
                                        cfg_.get<int>("plugins.lora.rank"),
                                        static_cast<float>(cfg_.get<double>("plugins.lora.scale")),
                                        cfg_.get<uint64_t>("plugins.lora.seed"));
    auto r = train_lora(d, b, train_data(), schedule(), cfg_.get<int>("plugins.lora.steps"),
                        cfg_.get<int>("plugins.lora.batch"), cfg_.get<double>("plugins.lora.lr"),
                        cfg_.get<uint64_t>("plugins.lora.seed"));
    write_text_file(dir + "/lora_train.log", r.metrics_log);
    save_lora(dir + "/lora", d);
    write_manifest("lora", {{"final_loss", r.final_loss}});
    lora_ = std::move(d);
    return *lora_;
}

AdapterTrainConfig Workspace::adapter_train_config(const std::string& variant) const {
    AdapterTrainConfig tc;
    tc.steps = cfg_.get<int>("adapter.steps");
    tc.batch = cfg_.get<int>("adapter.batch");
    tc.lr = cfg_.get<double>("adapter.lr");
    tc.null_prob_upgraded = cfg_.get<double>("adapter.null_prob_upgraded");
    tc.null_prob_base = cfg_.get<double>("adapter.null_prob_base");
    tc.base_prompt_label = cfg_.get<std::string>("adapter.base_prompt") == "label";
    tc.seed = cfg_.get<uint64_t>("adapter.seed");
    if (variant == "null0") tc.null_prob_upgraded = 0.0;
    if (variant == "null50") tc.null_prob_upgraded = 0.5;
    return tc;
}

MapperStack& Workspace::adapter(const std::string& variant) {
    auto it = adapters_.find(variant);
    if (it != adapters_.end()) return it->second;
    const auto& known = adapter_variants();
    if (std::find(known.begin(), known.end(), variant) == known.end())
        throw std::runtime_error("unknown adapter variant: " + variant);

    std::string stage = variant_stage(variant);
    std::string dir = stage_dir(stage);
    ModelVersion& b = base();
    ModelVersion& u = upgraded();

    Placement placement = parse_placement(cfg_.get<std::string>("adapter.placement"));
    FusionMode fusion = FusionMode::parse(cfg_.get<std::string>("adapter.fusion"),
                                          static_cast<float>(cfg_.get<double>("adapter.lambda")));
    if (variant == "encoder") placement = Placement::kEncoder;
    if (variant == "both") placement = Placement::kBoth;
    if (variant == "guided") fusion = FusionMode::parse("guided", 0.5f);
    if (variant == "spade") fusion = FusionMode::parse("spade", 0.5f);

    if (stage_complete(stage)) {
        MapperStack st = load_adapter(dir + "/adapter", b, u);
        return adapters_.emplace(variant, std::move(st)).first->second;
    }

    MapperStack st = build_mappers(b.unet, u.unet, placement, fusion, cfg_.get<uint64_t>("adapter.seed"));
    auto r = train_adapter(b, u, st, train_data(), schedule(), adapter_train_config(variant));
    write_text_file(dir + "/adapter_train.log", r.metrics_log);
    save_adapter(dir + "/adapter", st, b.checkpoint_checksum, u.checkpoint_checksum);
    write_manifest(stage, {{"variant", variant}, {"final_loss", r.final_loss}});
    return adapters_.emplace(variant, std::move(st)).first->second;
}

EvalBatch make_eval_batch(const Dataset& eval_set, uint64_t eval_seed, int count,
                          bool content_prompts) {
    EvalBatch out;
    int n = static_cast<int>(eval_set.size());
    int start = static_cast<int>(splitmix64(eval_seed) % static_cast<uint64_t>(n));
    out.req.conditions = Tensor({count, 1, kImageHw, kImageHw});
    for (int i = 0; i < count; ++i) {
        int idx = (start + i) % n;
        const ToySample& s = eval_set.samples[static_cast<size_t>(idx)];
        out.sample_indices.push_back(idx);
        out.req.seeds.push_back(splitmix64(eval_seed ^ (0x5eedull + static_cast<uint64_t>(i))));
        int tok = label_token(s.label);
        out.req.tokens_base.push_back(tok);
        if (content_prompts) {
            Label plain = s.label;
            plain.style = Style::kPlain;  // upgraded prompt describes content only
            out.req.tokens_up.push_back(label_token(plain));
        } else {
            out.req.tokens_up.push_back(tok);
        }
        for (int p = 0; p < kImageHw * kImageHw; ++p)
            out.req.conditions.data[static_cast<size_t>(i) * kImageHw * kImageHw + p] =
                s.condition_edge[static_cast<size_t>(p)] ? 1.0f : 0.0f;
    }
    return out;
}

namespace {

struct MethodEval {
    std::string method;
    double param;
    std::function<Tensor(const EvalBatch&)> sample;
    bool content_prompts = false;
};

void eval_methods(Workspace& ws, MetricReport& report, const std::vector<MethodEval>& methods,
                  int samples_per_seed) {
    const Dataset& eval_set = ws.eval_data();
    std::vector<uint64_t> seeds;
    for (auto s : ws.config().get<std::vector<int64_t>>("eval.seeds"))
        seeds.push_back(static_cast<uint64_t>(s));

    for (const auto& m : methods) {
        std::vector<Tensor> pooled;
        for (uint64_t seed : seeds) {
            EvalBatch batch = make_eval_batch(eval_set, seed, samples_per_seed, m.content_prompts);
            Tensor images = m.sample(batch);
            MethodPoint pt;
            pt.method = m.method;
            pt.param = m.param;
            pt.eval_seed = seed;
            double f1 = 0;
            for (int i = 0; i < images.shape[0]; ++i)
                f1 += condition_f1(image_slice(images, i),
                                   eval_set.samples[static_cast<size_t>(batch.sample_indices[static_cast<size_t>(i)])]
                                       .condition_edge);
            pt.cond_f1 = f1 / images.shape[0];
            pt.style = style_score(images);
            pt.agreement = classifier_agreement(images, batch.req.tokens_base);
            report.rows.push_back(pt);
            pooled.push_back(images);
        }
        // aggregate across seeds; frechet over the pooled generations
        MethodAggregate agg;
        agg.method = m.method;
        agg.param = m.param;
        std::vector<double> f1s, styles, agrees;
        for (const auto& r : report.rows)
            if (r.method == m.method && r.param == m.param) {
                f1s.push_back(r.cond_f1);
                styles.push_back(r.style);
                agrees.push_back(r.agreement);
            }
        for (double v : f1s) agg.f1_mean += v;
        agg.f1_mean /= static_cast<double>(f1s.size());
        for (double v : f1s) agg.f1_std += (v - agg.f1_mean) * (v - agg.f1_mean);
        agg.f1_std = std::sqrt(agg.f1_std / static_cast<double>(f1s.size()));
        for (double v : styles) agg.style_mean += v;
        agg.style_mean /= static_cast<double>(styles.size());
        for (double v : agrees) agg.agreement_mean += v;
        agg.agreement_mean /= static_cast<double>(agrees.size());

        int total = 0;
        for (const auto& t : pooled) total += t.shape[0];
        Tensor all({total, 3, kImageHw, kImageHw});
        size_t off = 0;
        for (const auto& t : pooled) {
            std::copy(t.data.begin(), t.data.end(), all.data.begin() + static_cast<int64_t>(off));
            off += t.data.size();
        }
        int ref_count = std::max(50, total);
        Tensor ref({ref_count, 3, kImageHw, kImageHw});
        for (int i = 0; i < ref_count; ++i) {
            const Tensor& img = eval_set.samples[static_cast<size_t>(i) % eval_set.size()].image32;
            std::copy(img.data.begin(), img.data.end(),
                      ref.data.begin() + static_cast<int64_t>(i) * static_cast<int64_t>(img.data.size()));
        }
        agg.frechet = total >= 50 ? frechet_gaussian(all, ref)
                                  : frechet_distance(image_features(all), image_features(ref));
        report.aggregates.push_back(agg);
    }
}

}  // namespace

MetricReport run_comparison(Workspace& ws, const std::string& plugin_kind) {
    if (plugin_kind != "control" && plugin_kind != "lora")
        throw std::runtime_error("run_comparison: plugin kind must be control or lora");
    MetricReport report;
    report.experiment = "comparison-" + plugin_kind;
    report.config_hash = ws.config().hash12();

    ModelVersion& base = ws.base();
    ModelVersion& up = ws.upgraded();
    MapperStack& stack = ws.adapter("main");
    const NoiseSchedule& sched = ws.schedule();
    int samples = ws.config().get<int>("eval.comparison_samples");
    double alpha = ws.config().get<double>("inference.alpha");

    PluginSet plugins;
    bool lora_mode = plugin_kind == "lora";
    if (lora_mode)
        plugins.lora = &ws.lora();
    else
        plugins.control = &ws.control();
    InferenceConfig icfg;
    icfg.alpha = alpha;

    std::vector<MethodEval> methods;
    methods.push_back({"base_plugin", 0.0,
                       [&](const EvalBatch& b) {
                           return sample_base_plugin(base, plugins, sched, icfg, b.req);
                       },
                       lora_mode});
    methods.push_back({"sdedit", alpha,
                       [&](const EvalBatch& b) {
                           return sdedit_baseline(base, up, plugins, sched, icfg, alpha, b.req);
                       },
                       lora_mode});
    methods.push_back({"xadapter", alpha,
                       [&](const EvalBatch& b) {
                           return sample_two_stage(base, up, stack, plugins, sched, icfg, b.req);
                       },
                       lora_mode});
    eval_methods(ws, report, methods, samples);
    return report;
}

MetricReport run_sweep(Workspace& ws) {
    MetricReport report;
    report.experiment = "sweep";
    report.config_hash = ws.config().hash12();

    ModelVersion& base = ws.base();
    ModelVersion& up = ws.upgraded();
    MapperStack& stack = ws.adapter("main");
    const NoiseSchedule& sched = ws.schedule();
    int samples = ws.config().get<int>("eval.sweep_samples");
    PluginSet plugins;
    plugins.control = &ws.control();

    std::vector<MethodEval> methods;
    for (double t0 : ws.config().get<std::vector<double>>("eval.t0_grid")) {
        methods.push_back({"sdedit", t0,
                           [&, t0](const EvalBatch& b) {
                               InferenceConfig icfg;
                               return sdedit_baseline(base, up, plugins, sched, icfg, t0, b.req);
                           }});
        methods.push_back({"xadapter", t0,
                           [&, t0](const EvalBatch& b) {
                               InferenceConfig icfg;
                               icfg.alpha = t0;
                               return sample_two_stage(base, up, stack, plugins, sched, icfg, b.req);
                           }});
    }
    eval_methods(ws, report, methods, samples);
    return report;
}

MetricReport run_ablations(Workspace& ws, const std::string& kind,
                           const std::vector<std::string>& arms_in) {
    MetricReport report;
    report.experiment = "ablation-" + kind;
    report.config_hash = ws.config().hash12();

    ModelVersion& base = ws.base();
    ModelVersion& up = ws.upgraded();
    const NoiseSchedule& sched = ws.schedule();
    int samples = ws.config().get<int>("eval.ablation_samples");
    double alpha = ws.config().get<double>("inference.alpha");
    PluginSet plugins;
    plugins.control = &ws.control();
    InferenceConfig icfg;
    icfg.alpha = alpha;

    std::vector<std::string> arms = arms_in;
    std::vector<MethodEval> methods;
    if (kind == "placement") {
        if (arms.empty()) arms = {"main", "encoder", "both"};
        for (const auto& arm : arms) {
            MapperStack& st = ws.adapter(arm);
            methods.push_back({"placement_" + arm, 0.0, [&, stp = &st](const EvalBatch& b) {
                                   return sample_two_stage(base, up, *stp, plugins, sched, icfg, b.req);
                               }});
        }
    } else if (kind == "null_prob") {
        if (arms.empty()) arms = {"main", "null50", "null0"};
        for (const auto& arm : arms) {
            MapperStack& st = ws.adapter(arm);
            double p = arm == "main" ? 1.0 : (arm == "null50" ? 0.5 : 0.0);
            methods.push_back({"null_prob", p, [&, stp = &st](const EvalBatch& b) {
                                   return sample_two_stage(base, up, *stp, plugins, sched, icfg, b.req);
                               }});
        }
    } else if (kind == "fusion") {
        if (arms.empty()) arms = {"main", "guided", "spade"};
        for (const auto& arm : arms) {
            MapperStack& st = ws.adapter(arm);
            methods.push_back({"fusion_" + (arm == "main" ? std::string("add") : arm), 0.0,
                               [&, stp = &st](const EvalBatch& b) {
                                   return sample_two_stage(base, up, *stp, plugins, sched, icfg, b.req);
                               }});
        }
    } else if (kind == "inference_strategy") {
        MapperStack& st = ws.adapter("main");
        methods.push_back({"two_stage", alpha, [&, stp = &st](const EvalBatch& b) {
                               return sample_two_stage(base, up, *stp, plugins, sched, icfg, b.req);
                           }});
        methods.push_back({"direct", alpha, [&, stp = &st](const EvalBatch& b) {
                               return sample_direct(base, up, *stp, plugins, sched, icfg, b.req);
                           }});
    } else {
        throw std::runtime_error("run_ablations: unknown kind " + kind);
    }
    eval_methods(ws, report, methods, samples);
    return report;
}

std::string MetricReport::csv_rows() const {
    std::string out = "experiment,config_hash,method,param,eval_seed,cond_f1,style,agreement\n";
    for (const auto& r : rows)
        out += experiment + "," + config_hash + "," + r.method + "," + std::to_string(r.param) + "," +
               std::to_string(r.eval_seed) + "," + std::to_string(r.cond_f1) + "," +
               std::to_string(r.style) + "," + std::to_string(r.agreement) + "\n";
    return out;
}

std::string MetricReport::csv_aggregates() const {
    std::string out =
        "experiment,config_hash,method,param,f1_mean,f1_std,style_mean,agreement_mean,frechet\n";
    for (const auto& a : aggregates)
        out += experiment + "," + config_hash + "," + a.method + "," + std::to_string(a.param) + "," +
               std::to_string(a.f1_mean) + "," + std::to_string(a.f1_std) + "," +
               std::to_string(a.style_mean) + "," + std::to_string(a.agreement_mean) + "," +
               std::to_string(a.frechet) + "\n";
    return out;
}

const MethodAggregate& MetricReport::aggregate(const std::string& method, double param) const {
    for (const auto& a : aggregates)
        if (a.method == method && a.param == param) return a;
    throw std::runtime_error("report: no aggregate for " + method);
}

std::vector<double> MetricReport::per_seed_f1(const std::string& method, double param) const {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.method == method && r.param == param) out.push_back(r.cond_f1);
    return out;
}

std::vector<double> MetricReport::per_seed_style(const std::string& method, double param) const {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.method == method && r.param == param) out.push_back(r.style);
    return out;
}

void write_report(Workspace& ws, const MetricReport& report) {
    std::string dir = ws.root() + "/reports-" + ws.config().hash12();
    write_text_file(dir + "/" + report.experiment + "_rows.csv", report.csv_rows());
    write_text_file(dir + "/" + report.experiment + "_agg.csv", report.csv_aggregates());
}

uint64_t tree_checksum(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), dir).string();
        if (rel.size() >= 4 && rel.compare(rel.size() - 4, 4, ".log") == 0) continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& rel : files) {
        h = fnv1a64(rel.data(), rel.size(), h);
        std::string contents = read_text_file(dir + "/" + rel);
        h = fnv1a64(contents.data(), contents.size(), h);
    }
    return h;
}

}  // namespace xad
