#include "xad/models.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "xad/checkpoint.hpp"

namespace xad {

namespace {

constexpr int kNormGroups = 4;

void add_conv(ParamStore& ps, Rng& rng, const std::string& name, int out_ch, int in_ch, int k,
              bool zero_init = false) {
    int fan_in = in_ch * k * k;
    ps.add(name + ".w", zero_init ? zeros({out_ch, in_ch, k, k}) : he_normal(rng, {out_ch, in_ch, k, k}, fan_in));
    ps.add(name + ".b", zeros({out_ch}));
}

void add_matrix(ParamStore& ps, Rng& rng, const std::string& name, int rows, int cols) {
    ps.add(name, he_normal(rng, {rows, cols}, rows));
}

void add_resblock(ParamStore& ps, Rng& rng, const std::string& name, int in_ch, int out_ch,
                  int time_dim) {
    add_conv(ps, rng, name + ".c1", out_ch, in_ch, 3);
    add_matrix(ps, rng, name + ".emb", time_dim, out_ch);
    add_conv(ps, rng, name + ".c2", out_ch, out_ch, 3);
    if (in_ch != out_ch) {
        int fan_in = in_ch;
        ps.add(name + ".skip.w", he_normal(rng, {out_ch, in_ch, 1, 1}, fan_in));
    }
}

int fetch_weight(ModelRun& run, const std::string& name, const WeightTransform* wt) {
    int node = run.p(name);
    return wt ? wt->apply(run, name, node) : node;
}

int resblock(ModelRun& run, const std::string& name, int x, int emb, int in_ch, int out_ch,
             const WeightTransform* wt) {
    auto& t = run.tape;
    int h = t.conv2d(x, fetch_weight(run, name + ".c1.w", wt), run.p(name + ".c1.b"), 1);
    int proj = t.matmul(emb, fetch_weight(run, name + ".emb", wt));
    h = t.add_channel_bias(h, proj);
    h = t.group_norm(h, kNormGroups);
    h = t.silu(h);
    h = t.conv2d(h, fetch_weight(run, name + ".c2.w", wt), run.p(name + ".c2.b"), 1);
    int skip = in_ch == out_ch ? x : t.conv2d(x, fetch_weight(run, name + ".skip.w", wt), -1, 0);
    return t.add(h, skip);
}

bool is_zero_constant(const Tape& tape, int node) {
    if (tape.requires_grad(node)) return false;
    for (float v : tape.value(node).data)
        if (v != 0.0f) return false;
    return true;
}

}  // namespace

ModelVersion ModelVersion::make(Role role, uint64_t init_seed) {
    ModelVersion mv;
    mv.role = role;
    Rng rng(splitmix64(init_seed ^ (role == Role::kBase ? 0x1111ull : 0x2222ull)));
    if (role == Role::kBase) {
        mv.prefix = "base.";
        mv.vae = {16, 3, 8, 4, 32};
        mv.unet = {{32, 64, 128}, 64, 32, 19, 8, 4};
    } else {
        mv.prefix = "up.";
        mv.vae = {32, 3, 16, 4, 32};
        mv.unet = {{48, 96, 192}, 96, 48, 19, 16, 4};
    }

    ParamStore& ps = mv.params;
    const std::string vp = mv.prefix + "vae.";
    int w = mv.vae.width, lc = mv.vae.latent_channels, ic = mv.vae.image_channels;
    add_conv(ps, rng, vp + "enc.c0", w, ic, 3);
    add_conv(ps, rng, vp + "enc.c1", w, w, 3);
    add_conv(ps, rng, vp + "enc.c2", w, w, 3);
    add_conv(ps, rng, vp + "enc.out", lc, w, 1);
    add_conv(ps, rng, vp + "dec.c0", w, lc, 3);
    add_conv(ps, rng, vp + "dec.c1", w, w, 3);
    add_conv(ps, rng, vp + "dec.c2", w, w, 3);
    add_conv(ps, rng, vp + "dec.out", ic, w, 3);

    const std::string up = mv.prefix + "unet.";
    const auto& sw = mv.unet.stage_widths;
    int dt = mv.unet.time_embed_dim, dc = mv.unet.cond_embed_dim;
    add_matrix(ps, rng, up + "temb.w1", dt, dt);
    add_matrix(ps, rng, up + "temb.w2", dt, dt);
    ps.add(up + "cond.table", normal_init(rng, {mv.unet.vocab_size, dc}, 0.5));
    add_matrix(ps, rng, up + "cond.proj", dc, dt);
    add_conv(ps, rng, up + "stem", sw[0], lc, 3);
    add_resblock(ps, rng, up + "enc0", sw[0], sw[0], dt);
    add_resblock(ps, rng, up + "enc1", sw[0], sw[1], dt);
    add_resblock(ps, rng, up + "enc2", sw[1], sw[2], dt);
    add_resblock(ps, rng, up + "mid", sw[2], sw[2], dt);
    add_conv(ps, rng, up + "dec2.red", sw[2], sw[2] + sw[2], 1);
    add_resblock(ps, rng, up + "dec2", sw[2], sw[2], dt);
    add_conv(ps, rng, up + "dec1.red", sw[1], sw[2] + sw[1], 1);
    add_resblock(ps, rng, up + "dec1", sw[1], sw[1], dt);
    add_conv(ps, rng, up + "dec0.red", sw[0], sw[1] + sw[0], 1);
    add_resblock(ps, rng, up + "dec0", sw[0], sw[0], dt);
    // zero-initialized output head: an untrained model predicts zero noise
    add_conv(ps, rng, up + "out", lc, sw[0], 3, /*zero_init=*/true);
    return mv;
}

std::vector<SiteId> ModelVersion::sites() const {
    std::vector<SiteId> out;
    for (int s = 0; s < unet.stages(); ++s) out.push_back({Side::kEncoder, s});
    for (int s = 0; s < unet.stages(); ++s) out.push_back({Side::kDecoder, s});
    return out;
}

Tensor sinusoidal_embedding(const std::vector<int>& ts, int dim) {
    int half = dim / 2;
    Tensor out({static_cast<int>(ts.size()), dim});
    for (size_t i = 0; i < ts.size(); ++i) {
        for (int k = 0; k < half; ++k) {
            double freq = std::exp(-std::log(10000.0) * k / half);
            out.at2(static_cast<int>(i), 2 * k) = static_cast<float>(std::sin(ts[i] * freq));
            out.at2(static_cast<int>(i), 2 * k + 1) = static_cast<float>(std::cos(ts[i] * freq));
        }
    }
    return out;
}

namespace {

int time_cond_embedding(ModelRun& run, const ModelVersion& mv, const std::vector<int>& ts,
                        const std::vector<int>& tokens, const WeightTransform* wt) {
    auto& t = run.tape;
    const std::string up = mv.prefix + "unet.";
    int sin = run.c(sinusoidal_embedding(ts, mv.unet.time_embed_dim));
    int e = t.matmul(sin, fetch_weight(run, up + "temb.w1", wt));
    e = t.silu(e);
    e = t.matmul(e, fetch_weight(run, up + "temb.w2", wt));
    int ce = t.embedding(run.p(up + "cond.table"), tokens);
    ce = t.matmul(ce, fetch_weight(run, up + "cond.proj", wt));
    return t.add(e, ce);
}

// Sum all residuals registered for `site` into `feature`, then hand the
// result to the fusion hook. All-zero constant residuals are skipped so a
// freshly attached (zero-initialized) plugin is bit-exactly a no-op.
int apply_site(ModelRun& run, const ModelVersion& mv, SiteId site, int feature,
               const std::vector<Injection>& injections, const SiteFusion* fusion) {
    for (const Injection& inj : injections) {
        if (!(inj.site == site)) continue;
        const auto& fs = run.tape.value(feature).shape;
        const auto& is = run.tape.value(inj.node).shape;
        if (!same_shape(fs, is))
            throw std::runtime_error("injection at " + site.str() + ": shape " + shape_str(is) +
                                     " does not match site " + shape_str(fs));
        if (is_zero_constant(run.tape, inj.node)) continue;
        feature = run.tape.add(feature, inj.node);
    }
    if (fusion && fusion->handles(site)) feature = fusion->fuse(run, site, feature);
    (void)mv;
    return feature;
}

}  // namespace

UnetOut unet_forward(ModelRun& run, const ModelVersion& mv, int z_t, const std::vector<int>& ts,
                     const std::vector<int>& tokens, const std::vector<Injection>& injections,
                     const SiteFusion* fusion, const WeightTransform* weights) {
    auto& t = run.tape;
    const std::string up = mv.prefix + "unet.";
    const auto& zs = t.value(z_t).shape;
    std::vector<int> want = {zs.empty() ? 0 : zs[0], mv.unet.latent_channels, mv.unet.latent_hw,
                             mv.unet.latent_hw};
    if (zs.size() != 4 || zs[1] != want[1] || zs[2] != want[2] || zs[3] != want[3])
        throw std::runtime_error(mv.prefix + "unet: latent shape " + shape_str(zs) + " does not match " +
                                 shape_str(want));
    if (ts.size() != static_cast<size_t>(zs[0]) || tokens.size() != ts.size())
        throw std::runtime_error(mv.prefix + "unet: batch size mismatch between latents, t and tokens");
    for (const Injection& inj : injections) {
        bool known = false;
        for (const SiteId& s : mv.sites())
            if (s == inj.site) known = true;
        if (!known) throw std::runtime_error("injection at unknown site " + inj.site.str());
    }

    const auto& sw = mv.unet.stage_widths;
    int emb = time_cond_embedding(run, mv, ts, tokens, weights);

    UnetOut out;
    int x = t.conv2d(z_t, fetch_weight(run, up + "stem.w", weights), run.p(up + "stem.b"), 1);
    int e0 = resblock(run, up + "enc0", x, emb, sw[0], sw[0], weights);
    e0 = apply_site(run, mv, {Side::kEncoder, 0}, e0, injections, fusion);
    out.taps[{Side::kEncoder, 0}] = e0;
    int e1 = resblock(run, up + "enc1", t.avgpool2x(e0), emb, sw[0], sw[1], weights);
    e1 = apply_site(run, mv, {Side::kEncoder, 1}, e1, injections, fusion);
    out.taps[{Side::kEncoder, 1}] = e1;
    int e2 = resblock(run, up + "enc2", t.avgpool2x(e1), emb, sw[1], sw[2], weights);
    e2 = apply_site(run, mv, {Side::kEncoder, 2}, e2, injections, fusion);
    out.taps[{Side::kEncoder, 2}] = e2;

    int m = resblock(run, up + "mid", e2, emb, sw[2], sw[2], weights);

    int d = t.concat(m, e2, 1);
    d = t.conv2d(d, fetch_weight(run, up + "dec2.red.w", weights), run.p(up + "dec2.red.b"), 0);
    d = apply_site(run, mv, {Side::kDecoder, 2}, d, injections, fusion);
    int d2 = resblock(run, up + "dec2", d, emb, sw[2], sw[2], weights);
    out.taps[{Side::kDecoder, 2}] = d2;

    d = t.concat(t.upsample2x(d2), e1, 1);
    d = t.conv2d(d, fetch_weight(run, up + "dec1.red.w", weights), run.p(up + "dec1.red.b"), 0);
    d = apply_site(run, mv, {Side::kDecoder, 1}, d, injections, fusion);
    int d1 = resblock(run, up + "dec1", d, emb, sw[1], sw[1], weights);
    out.taps[{Side::kDecoder, 1}] = d1;

    d = t.concat(t.upsample2x(d1), e0, 1);
    d = t.conv2d(d, fetch_weight(run, up + "dec0.red.w", weights), run.p(up + "dec0.red.b"), 0);
    d = apply_site(run, mv, {Side::kDecoder, 0}, d, injections, fusion);
    int d0 = resblock(run, up + "dec0", d, emb, sw[0], sw[0], weights);
    out.taps[{Side::kDecoder, 0}] = d0;

    int h = t.group_norm(d0, kNormGroups);
    h = t.silu(h);
    out.eps = t.conv2d(h, fetch_weight(run, up + "out.w", weights), run.p(up + "out.b"), 1);
    return out;
}

int vae_encode_node(ModelRun& run, const ModelVersion& mv, int image) {
    auto& t = run.tape;
    const std::string vp = mv.prefix + "vae.";
    const auto& is = t.value(image).shape;
    if (is.size() != 4 || is[1] != mv.vae.image_channels || is[2] != mv.vae.image_hw ||
        is[3] != mv.vae.image_hw)
        throw std::runtime_error(mv.prefix + "vae encode: image shape " + shape_str(is) +
                                 " does not match hw " + std::to_string(mv.vae.image_hw));
    int h = t.silu(t.conv2d(image, run.p(vp + "enc.c0.w"), run.p(vp + "enc.c0.b"), 1));
    h = t.silu(t.conv2d(h, run.p(vp + "enc.c1.w"), run.p(vp + "enc.c1.b"), 1));
    h = t.avgpool2x(h);
    h = t.silu(t.conv2d(h, run.p(vp + "enc.c2.w"), run.p(vp + "enc.c2.b"), 1));
    return t.conv2d(h, run.p(vp + "enc.out.w"), run.p(vp + "enc.out.b"), 0);
}

int vae_decode_node(ModelRun& run, const ModelVersion& mv, int latent) {
    auto& t = run.tape;
    const std::string vp = mv.prefix + "vae.";
    const auto& ls = t.value(latent).shape;
    if (ls.size() != 4 || ls[1] != mv.vae.latent_channels || ls[2] != mv.vae.latent_hw ||
        ls[3] != mv.vae.latent_hw)
        throw std::runtime_error(mv.prefix + "vae decode: latent shape " + shape_str(ls) +
                                 " does not match hw " + std::to_string(mv.vae.latent_hw));
    int h = t.silu(t.conv2d(latent, run.p(vp + "dec.c0.w"), run.p(vp + "dec.c0.b"), 1));
    h = t.upsample2x(h);
    h = t.silu(t.conv2d(h, run.p(vp + "dec.c1.w"), run.p(vp + "dec.c1.b"), 1));
    h = t.silu(t.conv2d(h, run.p(vp + "dec.c2.w"), run.p(vp + "dec.c2.b"), 1));
    return t.tanh_act(t.conv2d(h, run.p(vp + "dec.out.w"), run.p(vp + "dec.out.b"), 1));
}

Tensor encode_image(const ModelVersion& mv, const Tensor& image) {
    ModelRun run(mv.params);
    run.grad_enabled = false;
    Tensor img = image;
    bool squeeze = false;
    if (img.rank() == 3) {
        img.shape.insert(img.shape.begin(), 1);
        squeeze = true;
    }
    int z = vae_encode_node(run, mv, run.c(img));
    Tensor out = run.tape.value(z);
    for (auto& v : out.data) v *= mv.latent_scale;
    if (squeeze) out.shape.erase(out.shape.begin());
    return out;
}

Tensor decode_latent(const ModelVersion& mv, const Tensor& latent) {
    ModelRun run(mv.params);
    run.grad_enabled = false;
    Tensor z = latent;
    bool squeeze = false;
    if (z.rank() == 3) {
        z.shape.insert(z.shape.begin(), 1);
        squeeze = true;
    }
    for (auto& v : z.data) v /= mv.latent_scale;
    int img = vae_decode_node(run, mv, run.c(z));
    Tensor out = run.tape.value(img);
    if (squeeze) out.shape.erase(out.shape.begin());
    return out;
}

void save_model(const std::string& path_prefix, const ModelVersion& mv) {
    save_store(path_prefix + ".ckpt", mv.params, mv.prefix);
    nlohmann::json j;
    j["kind"] = "model";
    j["role"] = mv.role == Role::kBase ? "base" : "upgraded";
    j["image_hw"] = mv.vae.image_hw;
    j["latent_hw"] = mv.vae.latent_hw;
    j["latent_channels"] = mv.vae.latent_channels;
    j["vae_width"] = mv.vae.width;
    j["stage_widths"] = mv.unet.stage_widths;
    j["time_embed_dim"] = mv.unet.time_embed_dim;
    j["cond_embed_dim"] = mv.unet.cond_embed_dim;
    j["vocab_size"] = mv.unet.vocab_size;
    j["latent_scale"] = mv.latent_scale;
    j["vae_trained"] = mv.vae_trained;
    j["unet_trained"] = mv.unet_trained;
    j["checkpoint_checksum"] = hex64(file_checksum(path_prefix + ".ckpt"));
    write_text_file(path_prefix + ".json", j.dump(2) + "\n");
}

ModelVersion load_model(const std::string& path_prefix) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path_prefix + ".json"));
    Role role = j.at("role").get<std::string>() == "base" ? Role::kBase : Role::kUpgraded;
    ModelVersion mv = ModelVersion::make(role, 0);
    if (j.at("stage_widths").get<std::vector<int>>() != mv.unet.stage_widths ||
        j.at("image_hw").get<int>() != mv.vae.image_hw)
        throw std::runtime_error("model manifest " + path_prefix + ".json does not match the shipped geometry");
    mv.latent_scale = j.at("latent_scale").get<float>();
    mv.vae_trained = j.at("vae_trained").get<bool>();
    mv.unet_trained = j.at("unet_trained").get<bool>();
    load_into_store(path_prefix + ".ckpt", mv.params);
    // pretrained weights load frozen
    if (mv.unet_trained) mv.params.freeze_all();
    else if (mv.vae_trained)
        for (const auto& n : mv.params.names_with_prefix(mv.prefix + "vae.")) mv.params.set_trainable(n, false);
    mv.checkpoint_checksum = file_checksum(path_prefix + ".ckpt");
    std::string recorded = j.at("checkpoint_checksum").get<std::string>();
    if (recorded != hex64(mv.checkpoint_checksum))
        throw ChecksumMismatchError("model " + path_prefix + ": checkpoint checksum " +
                                    hex64(mv.checkpoint_checksum) + " does not match manifest " + recorded);
    return mv;
}

}  // namespace xad
