#include "xad/adapter.hpp"

#include <stdexcept>

#include "json.hpp"
#include "xad/checkpoint.hpp"

namespace xad {

std::string FusionMode::str() const {
    switch (kind) {
        case FusionKind::kAdd: return "add";
        case FusionKind::kGuided: return "guided";
        case FusionKind::kSpade: return "spade";
    }
    return "add";
}

FusionMode FusionMode::parse(const std::string& text, float lambda) {
    FusionMode m;
    m.lambda = lambda;
    if (text == "add")
        m.kind = FusionKind::kAdd;
    else if (text == "guided")
        m.kind = FusionKind::kGuided;
    else if (text == "spade")
        m.kind = FusionKind::kSpade;
    else
        throw std::runtime_error("unknown fusion mode: " + text);
    return m;
}

std::string placement_str(Placement p) {
    switch (p) {
        case Placement::kEncoder: return "encoder";
        case Placement::kDecoder: return "decoder";
        case Placement::kBoth: return "both";
    }
    return "decoder";
}

Placement parse_placement(const std::string& text) {
    if (text == "encoder") return Placement::kEncoder;
    if (text == "decoder") return Placement::kDecoder;
    if (text == "both") return Placement::kBoth;
    throw std::runtime_error("unknown placement: " + text);
}

namespace {

constexpr int kMapperBlocks = 3;
constexpr int kNormGroups = 4;

std::string map_prefix(SiteId site) {
    return "adapter.map." + site.str() + ".";
}

std::string spade_prefix(SiteId site) {
    return "adapter.spade." + site.str() + ".";
}

}  // namespace

MapperStack build_mappers(const UNetSpec& base_spec, const UNetSpec& up_spec, Placement placement,
                          FusionMode fusion, uint64_t seed) {
    if (base_spec.stages() != up_spec.stages())
        throw std::runtime_error("build_mappers: stage count mismatch, base " +
                                 std::to_string(base_spec.stages()) + " vs upgraded " +
                                 std::to_string(up_spec.stages()));
    MapperStack st;
    st.placement = placement;
    st.fusion = fusion;
    st.base_spec = base_spec;
    st.up_spec = up_spec;
    if (placement == Placement::kDecoder || placement == Placement::kBoth)
        for (int s = 0; s < base_spec.stages(); ++s) st.mapped.push_back({Side::kDecoder, s});
    if (placement == Placement::kEncoder || placement == Placement::kBoth)
        for (int s = 0; s < base_spec.stages(); ++s) st.mapped.push_back({Side::kEncoder, s});

    Rng rng(splitmix64(seed ^ 0xada97e57ull));
    for (SiteId site : st.mapped) {
        int bc = base_spec.stage_widths[static_cast<size_t>(site.stage)];
        int uc = up_spec.stage_widths[static_cast<size_t>(site.stage)];
        const std::string p = map_prefix(site);
        st.params.add(p + "proj.w", he_normal(rng, {uc, bc, 1, 1}, bc));
        st.params.add(p + "proj.b", zeros({uc}));
        for (int b = 1; b <= kMapperBlocks; ++b) {
            const std::string rb = p + "rb" + std::to_string(b);
            st.params.add(rb + ".c1.w", he_normal(rng, {uc, uc, 3, 3}, uc * 9));
            st.params.add(rb + ".c1.b", zeros({uc}));
            st.params.add(rb + ".c2.w", he_normal(rng, {uc, uc, 3, 3}, uc * 9));
            st.params.add(rb + ".c2.b", zeros({uc}));
        }
        st.params.add(p + "final.w", zeros({uc, uc, 1, 1}));
        st.params.add(p + "final.b", zeros({uc}));

        if (fusion.kind == FusionKind::kSpade) {
            for (const char* net : {"gamma", "beta"}) {
                const std::string sp = spade_prefix(site) + net;
                st.params.add(sp + ".c1.w", he_normal(rng, {uc, uc, 3, 3}, uc * 9));
                st.params.add(sp + ".c1.b", zeros({uc}));
                st.params.add(sp + ".c2.w", zeros({uc, uc, 3, 3}));
                Tensor bias({uc});
                if (std::string(net) == "gamma")
                    for (auto& v : bias.data) v = 1.0f;  // gamma(a) starts at 1, beta at 0
                st.params.add(sp + ".c2.b", bias);
            }
        }
    }
    return st;
}

int mapper_forward(ModelRun& run, const MapperStack& stack, SiteId site, int base_tap) {
    bool mapped = false;
    for (SiteId s : stack.mapped)
        if (s == site) mapped = true;
    if (!mapped) throw std::runtime_error("mapper_forward: site " + site.str() + " is not in the stack");
    auto& t = run.tape;
    const std::string p = map_prefix(site);
    int x = t.upsample2x(base_tap);
    x = t.conv2d(x, run.p(p + "proj.w"), run.p(p + "proj.b"), 0);
    for (int b = 1; b <= kMapperBlocks; ++b) {
        const std::string rb = p + "rb" + std::to_string(b);
        int h = t.conv2d(x, run.p(rb + ".c1.w"), run.p(rb + ".c1.b"), 1);
        h = t.group_norm(h, kNormGroups);
        h = t.silu(h);
        h = t.conv2d(h, run.p(rb + ".c2.w"), run.p(rb + ".c2.b"), 1);
        x = t.add(x, h);
    }
    return t.conv2d(x, run.p(p + "final.w"), run.p(p + "final.b"), 0);
}

std::map<SiteId, int> map_taps(ModelRun& run, const MapperStack& stack,
                               const std::map<SiteId, int>& base_taps) {
    std::map<SiteId, int> out;
    for (SiteId site : stack.mapped) {
        auto it = base_taps.find(site);
        if (it == base_taps.end())
            throw std::runtime_error("adapter: base taps missing site " + site.str());
        out[site] = mapper_forward(run, stack, site, it->second);
    }
    return out;
}

int GuidanceFusion::fuse(ModelRun& run, SiteId site, int feature) const {
    auto& t = run.tape;
    int g = guidance.at(site);
    const auto& fs = t.value(feature).shape;
    const auto& gs = t.value(g).shape;
    if (!same_shape(fs, gs))
        throw std::runtime_error("fusion at " + site.str() + ": guidance " + shape_str(gs) +
                                 " does not match site " + shape_str(fs));
    switch (stack->fusion.kind) {
        case FusionKind::kAdd: {
            // zero guidance from an untouched stack stays a bit-exact no-op
            bool zero = !t.requires_grad(g);
            if (zero)
                for (float v : t.value(g).data)
                    if (v != 0.0f) {
                        zero = false;
                        break;
                    }
            return zero ? feature : t.add(feature, g);
        }
        case FusionKind::kGuided:
            return t.add(feature, t.scalar_mul(t.sub(g, feature), stack->fusion.lambda));
        case FusionKind::kSpade: {
            const std::string gp = spade_prefix(site) + "gamma";
            const std::string bp = spade_prefix(site) + "beta";
            int gamma = t.conv2d(g, run.p(gp + ".c1.w"), run.p(gp + ".c1.b"), 1);
            gamma = t.silu(gamma);
            gamma = t.conv2d(gamma, run.p(gp + ".c2.w"), run.p(gp + ".c2.b"), 1);
            int beta = t.conv2d(g, run.p(bp + ".c1.w"), run.p(bp + ".c1.b"), 1);
            beta = t.silu(beta);
            beta = t.conv2d(beta, run.p(bp + ".c2.w"), run.p(bp + ".c2.b"), 1);
            // per-channel zero-mean unit-var normalization of the native feature
            int norm = t.group_norm(feature, fs[1]);
            return t.add(t.mul(gamma, norm), beta);
        }
    }
    throw std::runtime_error("fusion: unreachable");
}

int fused_forward(ModelRun& run, const ModelVersion& up, int z_t_up, const std::vector<int>& ts,
                  const std::vector<int>& tokens, const std::map<SiteId, int>& guidance,
                  const MapperStack& stack) {
    auto sites = up.sites();
    for (const auto& [site, node] : guidance) {
        bool known = false;
        for (const SiteId& s : sites)
            if (s == site) known = true;
        if (!known) throw std::runtime_error("fused_forward: guidance at unknown site " + site.str());
    }
    GuidanceFusion fusion;
    fusion.stack = &stack;
    fusion.guidance = guidance;
    return unet_forward(run, up, z_t_up, ts, tokens, {}, &fusion, nullptr).eps;
}

void save_adapter(const std::string& path_prefix, const MapperStack& stack, uint64_t base_checksum,
                  uint64_t up_checksum, const AdamW* optimizer) {
    std::map<std::string, Tensor> dump;
    for (const auto& [name, e] : stack.params.entries) dump.emplace(name, e.value);
    if (optimizer) {
        for (const auto& [name, t] : const_cast<AdamW*>(optimizer)->moments_m())
            dump.emplace("optim.m." + name, t);
        for (const auto& [name, t] : const_cast<AdamW*>(optimizer)->moments_v())
            dump.emplace("optim.v." + name, t);
    }
    save_checkpoint(path_prefix + ".ckpt", dump);

    nlohmann::json j;
    j["kind"] = "adapter";
    j["placement"] = placement_str(stack.placement);
    j["fusion"] = stack.fusion.str();
    j["lambda"] = stack.fusion.lambda;
    j["steps_trained"] = stack.steps_trained;
    j["optimizer_steps"] = optimizer ? optimizer->step_count() : 0;
    j["base_checksum"] = hex64(base_checksum);
    j["up_checksum"] = hex64(up_checksum);
    j["checkpoint_checksum"] = hex64(file_checksum(path_prefix + ".ckpt"));
    write_text_file(path_prefix + ".json", j.dump(2) + "\n");
}

MapperStack load_adapter(const std::string& path_prefix, const ModelVersion& base,
                         const ModelVersion& up, AdamW* optimizer) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path_prefix + ".json"));
    if (j.at("kind").get<std::string>() != "adapter")
        throw std::runtime_error(path_prefix + ": not an adapter checkpoint");
    if (j.at("base_checksum").get<std::string>() != hex64(base.checkpoint_checksum))
        throw ChecksumMismatchError("adapter " + path_prefix + ": trained against base " +
                                    j.at("base_checksum").get<std::string>() + ", got " +
                                    hex64(base.checkpoint_checksum));
    if (j.at("up_checksum").get<std::string>() != hex64(up.checkpoint_checksum))
        throw ChecksumMismatchError("adapter " + path_prefix + ": trained against upgraded " +
                                    j.at("up_checksum").get<std::string>() + ", got " +
                                    hex64(up.checkpoint_checksum));

    MapperStack st = build_mappers(base.unet, up.unet,
                                   parse_placement(j.at("placement").get<std::string>()),
                                   FusionMode::parse(j.at("fusion").get<std::string>(),
                                                     j.at("lambda").get<float>()),
                                   0);
    st.steps_trained = j.at("steps_trained").get<int>();
    auto tensors = load_checkpoint(path_prefix + ".ckpt");
    for (auto& [name, t] : tensors) {
        if (name.rfind("optim.", 0) == 0) continue;
        if (!st.params.has(name)) throw CorruptCheckpointError("adapter: unexpected parameter " + name);
        Tensor& dst = st.params.at(name);
        if (!same_shape(dst.shape, t.shape))
            throw CorruptCheckpointError("adapter: shape mismatch for " + name);
        dst = std::move(t);
    }
    if (optimizer) {
        for (const auto& name : optimizer->param_names()) {
            auto mit = tensors.find("optim.m." + name);
            auto vit = tensors.find("optim.v." + name);
            if (mit == tensors.end() || vit == tensors.end())
                throw CorruptCheckpointError("adapter: missing optimizer moments for " + name);
            optimizer->moments_m()[name] = mit->second;
            optimizer->moments_v()[name] = vit->second;
        }
        optimizer->set_step_count(j.at("optimizer_steps").get<int>());
    }
    return st;
}

}  // namespace xad
