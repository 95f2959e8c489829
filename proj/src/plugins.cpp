#include "xad/plugins.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"
#include "xad/checkpoint.hpp"

namespace xad {

std::string SiteCheck::str() const {
    if (ok) return site.str() + ": OK";
    if (!present) return site.str() + ": MISMATCH{expected " + std::to_string(expected_channels) + "ch@" +
                          std::to_string(expected_hw) + ", absent}";
    return site.str() + ": MISMATCH{expected " + std::to_string(expected_channels) + "ch@" +
           std::to_string(expected_hw) + ", found " + std::to_string(found_channels) + "ch@" +
           std::to_string(found_hw) + "}";
}

bool CompatibilityReport::compatible() const {
    for (const auto& c : checks)
        if (!c.ok) return false;
    return true;
}

int CompatibilityReport::mismatches() const {
    int n = 0;
    for (const auto& c : checks)
        if (!c.ok) ++n;
    return n;
}

std::string CompatibilityReport::str() const {
    std::string out;
    for (const auto& c : checks) out += c.str() + "\n";
    if (checks.empty()) out = "no connector sites\n";
    return out + (compatible() ? "compatible" : "incompatible");
}

CompatibilityReport verify_connector(const ConnectorSpec& plugin, const UNetSpec& target) {
    CompatibilityReport rep;
    std::vector<ConnectorSite> sites = plugin.sites;
    std::sort(sites.begin(), sites.end(),
              [](const ConnectorSite& a, const ConnectorSite& b) { return a.site < b.site; });
    for (const auto& cs : sites) {
        SiteCheck chk;
        chk.site = cs.site;
        chk.expected_channels = cs.channels;
        chk.expected_hw = cs.hw;
        chk.present = cs.site.stage >= 0 && cs.site.stage < target.stages();
        if (chk.present) {
            chk.found_channels = target.stage_widths[static_cast<size_t>(cs.site.stage)];
            chk.found_hw = target.stage_hw(cs.site.stage);
            chk.ok = chk.found_channels == cs.channels && chk.found_hw == cs.hw;
        }
        rep.checks.push_back(chk);
    }
    return rep;
}

namespace {

constexpr const char* kControlPrefix = "plugin.control.";

void copy_param(ParamStore& dst, const ParamStore& src, const std::string& dst_name,
                const std::string& src_name) {
    dst.add(dst_name, src.at(src_name));
}

int branch_embedding(ModelRun& run, const ControlBranch& cb, const ModelVersion& base,
                     const std::vector<int>& ts, const std::vector<int>& tokens) {
    auto& t = run.tape;
    const std::string p = kControlPrefix;
    int sin = run.c(sinusoidal_embedding(ts, cb.base_spec.time_embed_dim));
    int e = t.matmul(sin, run.p(p + "unet.temb.w1"));
    e = t.silu(e);
    e = t.matmul(e, run.p(p + "unet.temb.w2"));
    // prompt table stays the frozen base one; only the branch copies train
    int ce = t.embedding(run.p(base.prefix + "unet.cond.table"), tokens);
    ce = t.matmul(ce, run.p(p + "unet.cond.proj"));
    return t.add(e, ce);
}

int branch_resblock(ModelRun& run, const std::string& name, int x, int emb, int in_ch, int out_ch) {
    auto& t = run.tape;
    int h = t.conv2d(x, run.p(name + ".c1.w"), run.p(name + ".c1.b"), 1);
    h = t.add_channel_bias(h, t.matmul(emb, run.p(name + ".emb")));
    h = t.group_norm(h, 4);
    h = t.silu(h);
    h = t.conv2d(h, run.p(name + ".c2.w"), run.p(name + ".c2.b"), 1);
    int skip = in_ch == out_ch ? x : t.conv2d(x, run.p(name + ".skip.w"), -1, 0);
    return t.add(h, skip);
}

}  // namespace

ControlBranch ControlBranch::make(const ModelVersion& base, uint64_t seed) {
    ControlBranch cb;
    cb.base_spec = base.unet;
    cb.base_checksum = base.checkpoint_checksum;
    Rng rng(splitmix64(seed ^ 0xc0117011ull));
    ParamStore& ps = cb.params;
    const std::string p = kControlPrefix;
    const std::string bu = base.prefix + "unet.";
    const auto& sw = base.unet.stage_widths;

    // condition encoder: 32x32 edge map down to latent-resolution features
    ps.add(p + "hint.c0.w", he_normal(rng, {8, 1, 3, 3}, 9));
    ps.add(p + "hint.c0.b", zeros({8}));
    ps.add(p + "hint.c1.w", he_normal(rng, {16, 8, 3, 3}, 72));
    ps.add(p + "hint.c1.b", zeros({16}));
    ps.add(p + "hint.c2.w", he_normal(rng, {sw[0], 16, 3, 3}, 144));
    ps.add(p + "hint.c2.b", zeros({sw[0]}));

    // trainable copy of the base encoder (stem + three stages + embeddings)
    copy_param(ps, base.params, p + "unet.temb.w1", bu + "temb.w1");
    copy_param(ps, base.params, p + "unet.temb.w2", bu + "temb.w2");
    copy_param(ps, base.params, p + "unet.cond.proj", bu + "cond.proj");
    copy_param(ps, base.params, p + "unet.stem.w", bu + "stem.w");
    copy_param(ps, base.params, p + "unet.stem.b", bu + "stem.b");
    for (const char* blk : {"enc0", "enc1", "enc2"}) {
        std::string b = std::string(blk);
        for (const char* leafn : {".c1.w", ".c1.b", ".emb", ".c2.w", ".c2.b"})
            copy_param(ps, base.params, p + "unet." + b + leafn, bu + b + leafn);
        if (base.params.has(bu + b + ".skip.w"))
            copy_param(ps, base.params, p + "unet." + b + ".skip.w", bu + b + ".skip.w");
    }

    // zero-initialized output projections: attaching an untrained branch
    // changes nothing
    for (int s = 0; s < base.unet.stages(); ++s) {
        int c = sw[static_cast<size_t>(s)];
        ps.add(p + "proj" + std::to_string(s) + ".w", zeros({c, c, 1, 1}));
        ps.add(p + "proj" + std::to_string(s) + ".b", zeros({c}));
    }
    return cb;
}

ConnectorSpec ControlBranch::connector() const {
    ConnectorSpec spec;
    for (int s = 0; s < base_spec.stages(); ++s)
        spec.sites.push_back({{Side::kDecoder, s}, base_spec.stage_widths[static_cast<size_t>(s)],
                              base_spec.stage_hw(s)});
    return spec;
}

Tensor condition_tensor(const std::vector<uint8_t>& edge, int hw) {
    Tensor t({1, 1, hw, hw});
    for (int i = 0; i < hw * hw; ++i) t[i] = edge[static_cast<size_t>(i)] ? 1.0f : 0.0f;
    return t;
}

std::vector<Injection> control_injections(ModelRun& run, const ControlBranch& cb,
                                          const ModelVersion& base, int z_t,
                                          const std::vector<int>& ts, const std::vector<int>& tokens,
                                          int cond) {
    auto& t = run.tape;
    const std::string p = kControlPrefix;
    const auto& cs = t.value(cond).shape;
    if (cs.size() != 4 || cs[1] != 1 || cs[2] != cb.cond_hw || cs[3] != cb.cond_hw)
        throw std::runtime_error("control branch: condition shape " + shape_str(cs) + " must be [N,1," +
                                 std::to_string(cb.cond_hw) + "," + std::to_string(cb.cond_hw) + "]");

    int emb = branch_embedding(run, cb, base, ts, tokens);

    int hint = t.silu(t.conv2d(cond, run.p(p + "hint.c0.w"), run.p(p + "hint.c0.b"), 1));
    hint = t.avgpool2x(hint);
    hint = t.silu(t.conv2d(hint, run.p(p + "hint.c1.w"), run.p(p + "hint.c1.b"), 1));
    hint = t.avgpool2x(hint);
    hint = t.conv2d(hint, run.p(p + "hint.c2.w"), run.p(p + "hint.c2.b"), 1);

    const auto& sw = cb.base_spec.stage_widths;
    int x = t.conv2d(z_t, run.p(p + "unet.stem.w"), run.p(p + "unet.stem.b"), 1);
    x = t.add(x, hint);
    int e0 = branch_resblock(run, p + "unet.enc0", x, emb, sw[0], sw[0]);
    int e1 = branch_resblock(run, p + "unet.enc1", t.avgpool2x(e0), emb, sw[0], sw[1]);
    int e2 = branch_resblock(run, p + "unet.enc2", t.avgpool2x(e1), emb, sw[1], sw[2]);

    std::vector<Injection> out;
    int feats[3] = {e0, e1, e2};
    for (int s = 0; s < 3; ++s) {
        int proj = t.conv2d(feats[s], run.p(p + "proj" + std::to_string(s) + ".w"),
                            run.p(p + "proj" + std::to_string(s) + ".b"), 0);
        out.push_back({{Side::kDecoder, s}, proj});
    }
    return out;
}

void save_control_branch(const std::string& path_prefix, const ControlBranch& cb) {
    save_store(path_prefix + ".ckpt", cb.params, kControlPrefix);
    nlohmann::json j;
    j["kind"] = "control_branch";
    j["trained"] = cb.trained;
    j["base_checksum"] = hex64(cb.base_checksum);
    nlohmann::json sites = nlohmann::json::array();
    for (const auto& s : cb.connector().sites)
        sites.push_back({{"site", s.site.str()}, {"channels", s.channels}, {"hw", s.hw}});
    j["connector"] = sites;
    j["checkpoint_checksum"] = hex64(file_checksum(path_prefix + ".ckpt"));
    write_text_file(path_prefix + ".json", j.dump(2) + "\n");
}

ControlBranch load_control_branch(const std::string& path_prefix, const ModelVersion& base) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path_prefix + ".json"));
    if (j.at("kind").get<std::string>() != "control_branch")
        throw std::runtime_error(path_prefix + ": not a control branch checkpoint");
    ControlBranch cb = ControlBranch::make(base, 0);
    load_into_store(path_prefix + ".ckpt", cb.params);
    cb.trained = j.at("trained").get<bool>();
    cb.base_checksum = base.checkpoint_checksum;
    std::string recorded = j.at("base_checksum").get<std::string>();
    if (recorded != hex64(base.checkpoint_checksum))
        throw ChecksumMismatchError("control branch " + path_prefix + ": trained against base " + recorded +
                                    ", got " + hex64(base.checkpoint_checksum));
    return cb;
}

std::vector<std::string> LowRankDelta::default_targets(const ModelVersion& base) {
    std::vector<std::string> out;
    for (const auto& name : base.params.names()) {
        if (name.find(".unet.") == std::string::npos) continue;
        const Tensor& t = base.params.at(name);
        bool conv1x1 = t.rank() == 4 && t.shape[2] == 1 && t.shape[3] == 1;
        bool projection = t.rank() == 2 && name.find("cond.table") == std::string::npos;
        if (conv1x1 || projection) out.push_back(name);
    }
    return out;
}

LowRankDelta LowRankDelta::make(const ModelVersion& base, const std::vector<std::string>& target_names,
                                int rank, float scale, uint64_t seed) {
    if (rank <= 0) throw std::runtime_error("lora: rank must be positive");
    LowRankDelta d;
    d.rank = rank;
    d.scale = scale;
    d.base_spec_ = base.unet;
    d.base_checksum = base.checkpoint_checksum;
    d.targets = target_names;
    std::sort(d.targets.begin(), d.targets.end());
    Rng rng(splitmix64(seed ^ 0x10aa10aaull));
    for (const auto& name : d.targets) {
        if (!base.params.has(name)) throw std::runtime_error("lora: unknown target name " + name);
        const Tensor& w = base.params.at(name);
        int p, q;
        if (w.rank() == 4 && w.shape[2] == 1 && w.shape[3] == 1) {
            p = w.shape[0];
            q = w.shape[1];
        } else if (w.rank() == 2) {
            p = w.shape[0];
            q = w.shape[1];
        } else {
            throw std::runtime_error("lora: target " + name + " is not a 1x1 conv or projection, shape " +
                                     shape_str(w.shape));
        }
        d.params.add("plugin.lora." + name + ".a", normal_init(rng, {rank, q}, 1.0 / rank));
        d.params.add("plugin.lora." + name + ".b", zeros({p, rank}));  // identity at start
    }
    return d;
}

bool LowRankDelta::is_target(const std::string& name) const {
    return std::binary_search(targets.begin(), targets.end(), name);
}

int LowRankDelta::apply(ModelRun& run, const std::string& name, int weight_node) const {
    if (!is_target(name) || scale == 0.0f) return weight_node;
    auto& t = run.tape;
    int b = run.p("plugin.lora." + name + ".b");
    // untouched zero-initialized B with no gradient flowing: exact no-op
    bool b_zero = !t.requires_grad(b);
    if (b_zero)
        for (float v : t.value(b).data)
            if (v != 0.0f) {
                b_zero = false;
                break;
            }
    if (b_zero) return weight_node;
    int a = run.p("plugin.lora." + name + ".a");
    int delta = t.matmul(b, a);
    const auto& ws = t.value(weight_node).shape;
    if (ws.size() == 4) delta = t.reshape(delta, ws);
    return t.add(weight_node, t.scalar_mul(delta, scale));
}

ConnectorSpec LowRankDelta::connector() const {
    ConnectorSpec spec;
    for (int s = 0; s < base_spec_.stages(); ++s)
        spec.sites.push_back({{Side::kDecoder, s}, base_spec_.stage_widths[static_cast<size_t>(s)],
                              base_spec_.stage_hw(s)});
    return spec;
}

void save_lora(const std::string& path_prefix, const LowRankDelta& delta) {
    save_store(path_prefix + ".ckpt", delta.params, "plugin.lora.");
    nlohmann::json j;
    j["kind"] = "lora";
    j["rank"] = delta.rank;
    j["scale"] = delta.scale;
    j["targets"] = delta.targets;
    j["trained"] = delta.trained;
    j["base_checksum"] = hex64(delta.base_checksum);
    j["checkpoint_checksum"] = hex64(file_checksum(path_prefix + ".ckpt"));
    write_text_file(path_prefix + ".json", j.dump(2) + "\n");
}

LowRankDelta load_lora(const std::string& path_prefix, const ModelVersion& base) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path_prefix + ".json"));
    if (j.at("kind").get<std::string>() != "lora")
        throw std::runtime_error(path_prefix + ": not a lora checkpoint");
    LowRankDelta d = LowRankDelta::make(base, j.at("targets").get<std::vector<std::string>>(),
                                        j.at("rank").get<int>(), j.at("scale").get<float>(), 0);
    load_into_store(path_prefix + ".ckpt", d.params);
    d.trained = j.at("trained").get<bool>();
    std::string recorded = j.at("base_checksum").get<std::string>();
    if (recorded != hex64(base.checkpoint_checksum))
        throw ChecksumMismatchError("lora " + path_prefix + ": trained against base " + recorded + ", got " +
                                    hex64(base.checkpoint_checksum));
    return d;
}

}  // namespace xad
