#include "xad/pipelines.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "xad/checkpoint.hpp"

namespace xad {

namespace {

void check_plugins(const PluginSet& plugins, const ModelVersion& base, const BatchRequest& req) {
    if (plugins.control) {
        auto rep = verify_connector(plugins.control->connector(), base.unet);
        if (!rep.compatible())
            throw std::runtime_error("control branch incompatible with " + base.prefix + "unet:\n" +
                                     rep.str());
        const auto& cs = req.conditions.shape;
        if (cs.size() != 4 || cs[0] != req.size())
            throw std::runtime_error("control branch attached but conditions are missing or mis-batched");
    }
    if (plugins.lora) {
        auto rep = verify_connector(plugins.lora->connector(), base.unet);
        if (!rep.compatible())
            throw std::runtime_error("lora incompatible with " + base.prefix + "unet:\n" + rep.str());
    }
}

std::vector<const ParamStore*> gather_stores(const ModelVersion& base, const ModelVersion* up,
                                             const MapperStack* stack, const PluginSet& plugins) {
    std::vector<const ParamStore*> stores;
    if (stack) stores.push_back(&stack->params);
    stores.push_back(&base.params);
    if (up) stores.push_back(&up->params);
    if (plugins.control) stores.push_back(&plugins.control->params);
    if (plugins.lora) stores.push_back(&plugins.lora->params);
    return stores;
}

struct SampleRngs {
    std::vector<Rng> rngs;

    explicit SampleRngs(const std::vector<uint64_t>& seeds) {
        for (uint64_t s : seeds) rngs.push_back(Rng::fork(s, 0x5a3d1e5ull));
    }

    Tensor draw_latents(const std::vector<int>& shape) {
        Tensor out(shape);
        size_t per = out.data.size() / static_cast<size_t>(shape[0]);
        for (int i = 0; i < shape[0]; ++i)
            for (size_t j = 0; j < per; ++j)
                out.data[static_cast<size_t>(i) * per + j] = static_cast<float>(rngs[static_cast<size_t>(i)].normal());
        return out;
    }
};

std::optional<Tensor> step_noise(SampleRngs& rngs, const std::vector<int>& shape, SamplerKind kind,
                                 int t) {
    if (kind != SamplerKind::kDdpmStochastic || t == 0) return std::nullopt;
    return rngs.draw_latents(shape);
}

// One joint step of both bypasses at level t: guidance flows base -> up,
// both advance with their own reverse step.
void joint_step(const ModelVersion& base, const ModelVersion& up, const MapperStack& stack,
                const PluginSet& plugins, const NoiseSchedule& sched, SamplerKind kind, int t,
                const BatchRequest& req, SampleRngs& rngs, Tensor& zb, Tensor& zu) {
    ModelRun run(std::initializer_list<const ParamStore*>{});
    run.stores = gather_stores(base, &up, &stack, plugins);
    run.grad_enabled = false;
    std::vector<int> ts(static_cast<size_t>(req.size()), t);
    int ztb = run.c(zb);
    int ztu = run.c(zu);
    std::vector<Injection> injections;
    if (plugins.control)
        injections = control_injections(run, *plugins.control, base, ztb, ts, req.tokens_base,
                                        run.c(req.conditions));
    UnetOut bo = unet_forward(run, base, ztb, ts, req.tokens_base, injections, nullptr, plugins.lora);
    auto guidance = map_taps(run, stack, bo.taps);
    int eps_u = fused_forward(run, up, ztu, ts, req.tokens_up, guidance, stack);
    zb = reverse_step(run.tape.value(bo.eps), zb, t, sched, kind, step_noise(rngs, zb.shape, kind, t));
    zu = reverse_step(run.tape.value(eps_u), zu, t, sched, kind, step_noise(rngs, zu.shape, kind, t));
}

void base_step(const ModelVersion& base, const PluginSet& plugins, const NoiseSchedule& sched,
               SamplerKind kind, int t, const BatchRequest& req, SampleRngs& rngs, Tensor& zb) {
    ModelRun run(std::initializer_list<const ParamStore*>{});
    run.stores = gather_stores(base, nullptr, nullptr, plugins);
    run.grad_enabled = false;
    std::vector<int> ts(static_cast<size_t>(req.size()), t);
    int ztb = run.c(zb);
    std::vector<Injection> injections;
    if (plugins.control)
        injections = control_injections(run, *plugins.control, base, ztb, ts, req.tokens_base,
                                        run.c(req.conditions));
    UnetOut bo = unet_forward(run, base, ztb, ts, req.tokens_base, injections, nullptr, plugins.lora);
    zb = reverse_step(run.tape.value(bo.eps), zb, t, sched, kind, step_noise(rngs, zb.shape, kind, t));
}

void plain_up_step(const ModelVersion& up, const NoiseSchedule& sched, SamplerKind kind, int t,
                   const BatchRequest& req, SampleRngs& rngs, Tensor& zu) {
    ModelRun run(up.params);
    run.grad_enabled = false;
    std::vector<int> ts(static_cast<size_t>(req.size()), t);
    UnetOut out = unet_forward(run, up, run.c(zu), ts, req.tokens_up);
    zu = reverse_step(run.tape.value(out.eps), zu, t, sched, kind, step_noise(rngs, zu.shape, kind, t));
}

Tensor upsample_batch(const Tensor& images) {
    int n = images.shape[0], c = images.shape[1], h = images.shape[2], w = images.shape[3];
    Tensor out({n, c, 2 * h, 2 * w});
    for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < 2 * h; ++y)
                for (int x = 0; x < 2 * w; ++x)
                    out.at4(s, ch, y, x) = images.at4(s, ch, y / 2, x / 2);
    return out;
}

void validate_request(const BatchRequest& req) {
    if (req.seeds.empty()) throw std::runtime_error("sampling: empty batch request");
    if (req.tokens_base.size() != req.seeds.size() || req.tokens_up.size() != req.seeds.size())
        throw std::runtime_error("sampling: request token arrays must match the seed count");
}

int t0_from_fraction(double frac, int timesteps, const char* what) {
    if (frac < 0.0 || frac > 1.0)
        throw std::runtime_error(std::string(what) + " must be in [0,1], got " + std::to_string(frac));
    return static_cast<int>(std::lround(frac * timesteps));
}

}  // namespace

Tensor bridge_latent(const Tensor& z_base, const ModelVersion& base, const ModelVersion& up) {
    Tensor z = z_base;
    bool squeeze = false;
    if (z.rank() == 3) {
        z.shape.insert(z.shape.begin(), 1);
        squeeze = true;
    }
    Tensor img = decode_latent(base, z);
    Tensor big = upsample_batch(img);
    Tensor out = encode_image(up, big);
    if (squeeze) out.shape.erase(out.shape.begin());
    return out;
}

Tensor sample_direct(const ModelVersion& base, const ModelVersion& up, const MapperStack& stack,
                     const PluginSet& plugins, const NoiseSchedule& sched, const InferenceConfig& cfg,
                     const BatchRequest& req) {
    validate_request(req);
    check_plugins(plugins, base, req);
    SampleRngs rngs(req.seeds);
    Tensor zb({req.size(), base.vae.latent_channels, base.vae.latent_hw, base.vae.latent_hw});
    Tensor zu({req.size(), up.vae.latent_channels, up.vae.latent_hw, up.vae.latent_hw});
    // per-sample stream order: base latent first, then upgraded
    for (int i = 0; i < req.size(); ++i) {
        Rng& r = rngs.rngs[static_cast<size_t>(i)];
        size_t pb = zb.data.size() / static_cast<size_t>(req.size());
        size_t pu = zu.data.size() / static_cast<size_t>(req.size());
        for (size_t j = 0; j < pb; ++j) zb.data[static_cast<size_t>(i) * pb + j] = static_cast<float>(r.normal());
        for (size_t j = 0; j < pu; ++j) zu.data[static_cast<size_t>(i) * pu + j] = static_cast<float>(r.normal());
    }
    for (int t = sched.timesteps - 1; t >= 0; --t)
        joint_step(base, up, stack, plugins, sched, cfg.sampler, t, req, rngs, zb, zu);
    return decode_latent(up, zu);
}

Tensor sample_plain_upgraded(const ModelVersion& base, const ModelVersion& up,
                             const NoiseSchedule& sched, const InferenceConfig& cfg,
                             const BatchRequest& req) {
    validate_request(req);
    SampleRngs rngs(req.seeds);
    Tensor zb({req.size(), base.vae.latent_channels, base.vae.latent_hw, base.vae.latent_hw});
    Tensor zu({req.size(), up.vae.latent_channels, up.vae.latent_hw, up.vae.latent_hw});
    for (int i = 0; i < req.size(); ++i) {
        Rng& r = rngs.rngs[static_cast<size_t>(i)];
        size_t pb = zb.data.size() / static_cast<size_t>(req.size());
        size_t pu = zu.data.size() / static_cast<size_t>(req.size());
        // the base-space draw is discarded; it keeps the stream aligned with
        // sample_direct so zero-init comparisons are bitwise
        for (size_t j = 0; j < pb; ++j) zb.data[static_cast<size_t>(i) * pb + j] = static_cast<float>(r.normal());
        for (size_t j = 0; j < pu; ++j) zu.data[static_cast<size_t>(i) * pu + j] = static_cast<float>(r.normal());
    }
    for (int t = sched.timesteps - 1; t >= 0; --t)
        plain_up_step(up, sched, cfg.sampler, t, req, rngs, zu);
    return decode_latent(up, zu);
}

Tensor sample_two_stage(const ModelVersion& base, const ModelVersion& up, const MapperStack& stack,
                        const PluginSet& plugins, const NoiseSchedule& sched,
                        const InferenceConfig& cfg, const BatchRequest& req) {
    validate_request(req);
    check_plugins(plugins, base, req);
    int t0 = t0_from_fraction(cfg.alpha, sched.timesteps, "alpha");
    SampleRngs rngs(req.seeds);
    Tensor zb({req.size(), base.vae.latent_channels, base.vae.latent_hw, base.vae.latent_hw});
    for (int i = 0; i < req.size(); ++i) {
        Rng& r = rngs.rngs[static_cast<size_t>(i)];
        size_t pb = zb.data.size() / static_cast<size_t>(req.size());
        for (size_t j = 0; j < pb; ++j) zb.data[static_cast<size_t>(i) * pb + j] = static_cast<float>(r.normal());
    }

    // stage 1: base-only warmup, levels T-1 .. T0
    for (int t = sched.timesteps - 1; t >= t0; --t)
        base_step(base, plugins, sched, cfg.sampler, t, req, rngs, zb);

    // bridge at the stage boundary
    Tensor zu = bridge_latent(zb, base, up);

    // stage 2: joint guided denoising for the remaining levels
    for (int t = t0 - 1; t >= 0; --t)
        joint_step(base, up, stack, plugins, sched, cfg.sampler, t, req, rngs, zb, zu);
    return decode_latent(up, zu);
}

Tensor sdedit_baseline(const ModelVersion& base, const ModelVersion& up, const PluginSet& plugins,
                       const NoiseSchedule& sched, const InferenceConfig& cfg, double t0_frac,
                       const BatchRequest& req) {
    validate_request(req);
    check_plugins(plugins, base, req);
    int t0 = t0_from_fraction(t0_frac, sched.timesteps, "t0_frac");
    SampleRngs rngs(req.seeds);
    Tensor zb({req.size(), base.vae.latent_channels, base.vae.latent_hw, base.vae.latent_hw});
    for (int i = 0; i < req.size(); ++i) {
        Rng& r = rngs.rngs[static_cast<size_t>(i)];
        size_t pb = zb.data.size() / static_cast<size_t>(req.size());
        for (size_t j = 0; j < pb; ++j) zb.data[static_cast<size_t>(i) * pb + j] = static_cast<float>(r.normal());
    }
    for (int t = sched.timesteps - 1; t >= 0; --t)
        base_step(base, plugins, sched, cfg.sampler, t, req, rngs, zb);

    Tensor img16 = decode_latent(base, zb);
    Tensor img32 = upsample_batch(img16);
    Tensor z0u = encode_image(up, img32);
    if (t0 == 0) return decode_latent(up, z0u);  // pure upgraded VAE round-trip

    Tensor eps = rngs.draw_latents(z0u.shape);
    Tensor zu = q_sample(z0u, t0 - 1, eps, sched);
    for (int t = t0 - 1; t >= 0; --t)
        plain_up_step(up, sched, cfg.sampler, t, req, rngs, zu);
    return decode_latent(up, zu);
}

Tensor sample_base_plugin(const ModelVersion& base, const PluginSet& plugins,
                          const NoiseSchedule& sched, const InferenceConfig& cfg,
                          const BatchRequest& req) {
    validate_request(req);
    check_plugins(plugins, base, req);
    SampleRngs rngs(req.seeds);
    Tensor zb({req.size(), base.vae.latent_channels, base.vae.latent_hw, base.vae.latent_hw});
    for (int i = 0; i < req.size(); ++i) {
        Rng& r = rngs.rngs[static_cast<size_t>(i)];
        size_t pb = zb.data.size() / static_cast<size_t>(req.size());
        for (size_t j = 0; j < pb; ++j) zb.data[static_cast<size_t>(i) * pb + j] = static_cast<float>(r.normal());
    }
    for (int t = sched.timesteps - 1; t >= 0; --t)
        base_step(base, plugins, sched, cfg.sampler, t, req, rngs, zb);
    return upsample_batch(decode_latent(base, zb));
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.shape[0] != 3)
        throw std::runtime_error("write_ppm: expected [3,H,W], got " + shape_str(image.shape));
    int h = image.shape[1], w = image.shape[2];
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = image.data[(static_cast<size_t>(c) * h + y) * w + x];
                int byte = static_cast<int>(std::lround((std::min(1.0f, std::max(-1.0f, v)) + 1.0f) * 127.5f));
                out.push_back(static_cast<char>(std::min(255, std::max(0, byte))));
            }
    write_text_file(path, out);
}

Tensor read_ppm(const std::string& path) {
    std::string buf = read_text_file(path);
    if (buf.compare(0, 2, "P6") != 0) throw std::runtime_error("read_ppm: not a P6 file: " + path);
    size_t pos = 2;
    auto next_int = [&]() {
        while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
        size_t start = pos;
        while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
        return std::stoi(buf.substr(start, pos - start));
    };
    int w = next_int(), h = next_int(), maxv = next_int();
    ++pos;  // single whitespace after maxval
    if (maxv != 255 || buf.size() - pos < static_cast<size_t>(3 * w * h))
        throw std::runtime_error("read_ppm: unsupported or truncated file: " + path);
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.data[(static_cast<size_t>(c) * h + y) * w + x] =
                    static_cast<float>(static_cast<uint8_t>(buf[pos + (static_cast<size_t>(y) * w + x) * 3 + c])) / 127.5f - 1.0f;
    return img;
}

}  // namespace xad
