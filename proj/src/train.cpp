#include "xad/train.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace xad {

namespace {

using Clock = std::chrono::steady_clock;

struct LossLog {
    std::string lines;
    std::vector<double> losses;
    Clock::time_point start = Clock::now();

    void record(int step, double loss) {
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
        lines += std::to_string(step) + "," + std::to_string(loss) + "," + std::to_string(ms) + "\n";
        losses.push_back(loss);
    }

    TrainResult finish() const {
        TrainResult r;
        r.metrics_log = lines;
        size_t n = losses.size();
        size_t head = std::min<size_t>(10, n);
        size_t tail = std::min<size_t>(100, n);
        double a = 0, b = 0;
        for (size_t i = 0; i < head; ++i) a += losses[i];
        for (size_t i = n - tail; i < n; ++i) b += losses[i];
        r.initial_loss = head ? a / head : 0;
        r.final_loss = tail ? b / tail : 0;
        return r;
    }
};

std::vector<int> draw_indices(Rng& rng, size_t pool, int batch) {
    std::vector<int> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = rng.uniform_int(0, static_cast<int>(pool) - 1);
    return idx;
}

Tensor stack_images(const Dataset& ds, const std::vector<int>& idx, bool small) {
    const Tensor& first = small ? ds.samples[0].image16 : ds.samples[0].image32;
    int hw = first.shape[1];
    Tensor out({static_cast<int>(idx.size()), 3, hw, hw});
    size_t per = first.data.size();
    for (size_t i = 0; i < idx.size(); ++i) {
        const Tensor& img = small ? ds.samples[static_cast<size_t>(idx[i])].image16
                                  : ds.samples[static_cast<size_t>(idx[i])].image32;
        std::copy(img.data.begin(), img.data.end(), out.data.begin() + static_cast<int64_t>(i * per));
    }
    return out;
}

Tensor stack_latents(const std::vector<Tensor>& latents, const std::vector<int>& idx) {
    const Tensor& first = latents[0];
    std::vector<int> shape = {static_cast<int>(idx.size()), first.shape[0], first.shape[1],
                              first.shape[2]};
    Tensor out(shape);
    size_t per = first.data.size();
    for (size_t i = 0; i < idx.size(); ++i) {
        const Tensor& z = latents[static_cast<size_t>(idx[i])];
        std::copy(z.data.begin(), z.data.end(), out.data.begin() + static_cast<int64_t>(i * per));
    }
    return out;
}

void check_probability(double p, const char* what) {
    if (p < 0.0 || p > 1.0) throw std::runtime_error(std::string(what) + " must be in [0,1]");
}

}  // namespace

std::vector<Tensor> encode_all(const ModelVersion& mv, const Dataset& ds) {
    std::vector<Tensor> out;
    out.reserve(ds.size());
    const int chunk = 64;
    for (size_t at = 0; at < ds.size(); at += chunk) {
        std::vector<int> idx;
        for (size_t i = at; i < std::min(ds.size(), at + chunk); ++i) idx.push_back(static_cast<int>(i));
        Tensor batch = stack_images(ds, idx, mv.vae.image_hw == 16);
        Tensor z = encode_image(mv, batch);
        int n = z.shape[0];
        size_t per = z.data.size() / static_cast<size_t>(n);
        for (int i = 0; i < n; ++i) {
            Tensor one({z.shape[1], z.shape[2], z.shape[3]});
            std::copy(z.data.begin() + static_cast<int64_t>(i * per),
                      z.data.begin() + static_cast<int64_t>((i + 1) * per), one.data.begin());
            out.push_back(std::move(one));
        }
    }
    return out;
}

TrainResult train_vae(ModelVersion& mv, const Dataset& ds, int steps, int batch, double lr,
                      uint64_t seed) {
    if (ds.size() == 0) throw std::runtime_error("train_vae: empty dataset");
    bool small = mv.vae.image_hw == 16;
    Rng rng(splitmix64(seed ^ 0xae0ull));

    auto vae_names = mv.params.names_with_prefix(mv.prefix + "vae.");
    for (const auto& n : vae_names) mv.params.set_trainable(n, true);
    AdamW opt(mv.params, vae_names, lr);

    LossLog log;
    for (int step = 0; step < steps; ++step) {
        auto idx = draw_indices(rng, ds.size(), batch);
        Tensor images = stack_images(ds, idx, small);
        ModelRun run(mv.params);
        int x = run.c(images);
        int z = vae_encode_node(run, mv, x);
        int rec = vae_decode_node(run, mv, z);
        int loss = run.tape.mse(rec, x);
        log.record(step, run.tape.value(loss)[0]);
        run.tape.backward(loss);
        opt.step(run.grads());
    }

    // latent standardization scale: unit variance over the training set
    mv.latent_scale = 1.0f;
    double mean = 0, m2 = 0;
    int64_t count = 0;
    for (size_t at = 0; at < ds.size(); at += 64) {
        std::vector<int> idx;
        for (size_t i = at; i < std::min(ds.size(), at + 64); ++i) idx.push_back(static_cast<int>(i));
        ModelRun run(mv.params);
        run.grad_enabled = false;
        int z = vae_encode_node(run, mv, run.c(stack_images(ds, idx, small)));
        for (float v : run.tape.value(z).data) {
            ++count;
            double d = v - mean;
            mean += d / static_cast<double>(count);
            m2 += d * (v - mean);
        }
    }
    double var = m2 / static_cast<double>(count);
    mv.latent_scale = static_cast<float>(1.0 / std::sqrt(std::max(var, 1e-12)));
    mv.vae_trained = true;
    for (const auto& n : vae_names) mv.params.set_trainable(n, false);
    return log.finish();
}

TrainResult train_unet(ModelVersion& mv, const Dataset& ds, const NoiseSchedule& sched, int steps,
                       int batch, double lr, double null_prob, uint64_t seed) {
    if (ds.size() == 0) throw std::runtime_error("train_unet: empty dataset");
    if (!mv.vae_trained) throw std::runtime_error("train_unet: untrained VAE for " + mv.prefix);
    check_probability(null_prob, "null_prob");
    Rng rng(splitmix64(seed ^ 0x03e7ull));

    std::vector<Tensor> latents = encode_all(mv, ds);
    auto unet_names = mv.params.names_with_prefix(mv.prefix + "unet.");
    for (const auto& n : unet_names) mv.params.set_trainable(n, true);
    AdamW opt(mv.params, unet_names, lr);

    LossLog log;
    for (int step = 0; step < steps; ++step) {
        auto idx = draw_indices(rng, ds.size(), batch);
        std::vector<int> ts(idx.size());
        Tensor z0 = stack_latents(latents, idx);
        Tensor eps(z0.shape);
        std::vector<int> tokens(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            ts[i] = rng.uniform_int(0, sched.timesteps - 1);
            tokens[i] = rng.uniform() < null_prob
                            ? kNullToken
                            : label_token(ds.samples[static_cast<size_t>(idx[i])].label);
        }
        for (auto& v : eps.data) v = static_cast<float>(rng.normal());
        Tensor z_t(z0.shape);
        size_t per = z0.data.size() / idx.size();
        for (size_t i = 0; i < idx.size(); ++i) {
            double a = sched.sqrt_alpha_bar(ts[i]);
            double b = sched.sqrt_one_minus_alpha_bar(ts[i]);
            for (size_t j = i * per; j < (i + 1) * per; ++j)
                z_t.data[j] = static_cast<float>(a * z0.data[j] + b * eps.data[j]);
        }

        ModelRun run(mv.params);
        UnetOut out = unet_forward(run, mv, run.c(z_t), ts, tokens);
        int loss = run.tape.mse(out.eps, run.c(eps));
        log.record(step, run.tape.value(loss)[0]);
        run.tape.backward(loss);
        opt.step(run.grads());
    }
    mv.unet_trained = true;
    mv.params.freeze_all();
    return log.finish();
}

TrainResult train_control_branch(ControlBranch& cb, const ModelVersion& base, const Dataset& ds,
                                 const NoiseSchedule& sched, int steps, int batch, double lr,
                                 uint64_t seed) {
    if (ds.size() == 0) throw std::runtime_error("train_control_branch: empty dataset");
    if (!base.unet_trained) throw std::runtime_error("train_control_branch: base UNet not trained");
    if (!base.params.trainable_names().empty())
        throw std::runtime_error("train_control_branch: base model must be frozen");
    Rng rng(splitmix64(seed ^ 0xc0117ull));

    std::vector<Tensor> latents = encode_all(base, ds);
    AdamW opt(cb.params, cb.params.names(), lr);

    LossLog log;
    for (int step = 0; step < steps; ++step) {
        auto idx = draw_indices(rng, ds.size(), batch);
        int n = static_cast<int>(idx.size());
        std::vector<int> ts(idx.size());
        std::vector<int> tokens(idx.size());
        Tensor z0 = stack_latents(latents, idx);
        Tensor eps(z0.shape);
        Tensor cond({n, 1, 32, 32});
        for (size_t i = 0; i < idx.size(); ++i) {
            const ToySample& s = ds.samples[static_cast<size_t>(idx[i])];
            ts[i] = rng.uniform_int(0, sched.timesteps - 1);
            tokens[i] = label_token(s.label);
            for (int p = 0; p < 32 * 32; ++p)
                cond.data[i * 1024 + static_cast<size_t>(p)] = s.condition_edge[static_cast<size_t>(p)] ? 1.0f : 0.0f;
        }
        for (auto& v : eps.data) v = static_cast<float>(rng.normal());
        Tensor z_t(z0.shape);
        size_t per = z0.data.size() / idx.size();
        for (size_t i = 0; i < idx.size(); ++i) {
            double a = sched.sqrt_alpha_bar(ts[i]);
            double b = sched.sqrt_one_minus_alpha_bar(ts[i]);
            for (size_t j = i * per; j < (i + 1) * per; ++j)
                z_t.data[j] = static_cast<float>(a * z0.data[j] + b * eps.data[j]);
        }

        ModelRun run({&cb.params, &base.params});
        int zt = run.c(z_t);
        auto injections = control_injections(run, cb, base, zt, ts, tokens, run.c(cond));
        UnetOut out = unet_forward(run, base, zt, ts, tokens, injections);
        int loss = run.tape.mse(out.eps, run.c(eps));
        log.record(step, run.tape.value(loss)[0]);
        run.tape.backward(loss);
        opt.step(run.grads());
    }
    cb.trained = true;
    cb.params.freeze_all();
    return log.finish();
}

TrainResult train_lora(LowRankDelta& delta, const ModelVersion& base, const Dataset& ds,
                       const NoiseSchedule& sched, int steps, int batch, double lr, uint64_t seed) {
    if (!base.unet_trained) throw std::runtime_error("train_lora: base UNet not trained");
    if (!base.params.trainable_names().empty())
        throw std::runtime_error("train_lora: base model must be frozen");
    Dataset style;
    for (const auto& s : ds.samples)
        if (s.label.style == Style::kOutline) style.samples.push_back(s);
    if (style.size() == 0) throw std::runtime_error("train_lora: no outline-style samples in dataset");
    Rng rng(splitmix64(seed ^ 0x10a4ull));

    std::vector<Tensor> latents = encode_all(base, style);
    AdamW opt(delta.params, delta.params.names(), lr);

    LossLog log;
    for (int step = 0; step < steps; ++step) {
        auto idx = draw_indices(rng, style.size(), batch);
        std::vector<int> ts(idx.size());
        std::vector<int> tokens(idx.size());
        Tensor z0 = stack_latents(latents, idx);
        Tensor eps(z0.shape);
        for (size_t i = 0; i < idx.size(); ++i) {
            ts[i] = rng.uniform_int(0, sched.timesteps - 1);
            tokens[i] = label_token(style.samples[static_cast<size_t>(idx[i])].label);
        }
        for (auto& v : eps.data) v = static_cast<float>(rng.normal());
        Tensor z_t(z0.shape);
        size_t per = z0.data.size() / idx.size();
        for (size_t i = 0; i < idx.size(); ++i) {
            double a = sched.sqrt_alpha_bar(ts[i]);
            double b = sched.sqrt_one_minus_alpha_bar(ts[i]);
            for (size_t j = i * per; j < (i + 1) * per; ++j)
                z_t.data[j] = static_cast<float>(a * z0.data[j] + b * eps.data[j]);
        }

        ModelRun run({&delta.params, &base.params});
        UnetOut out = unet_forward(run, base, run.c(z_t), ts, tokens, {}, nullptr, &delta);
        int loss = run.tape.mse(out.eps, run.c(eps));
        log.record(step, run.tape.value(loss)[0]);
        run.tape.backward(loss);
        opt.step(run.grads());
    }
    delta.trained = true;
    delta.params.freeze_all();
    return log.finish();
}

AdapterBatch draw_adapter_batch(Rng& rng, const Dataset& ds, const std::vector<Tensor>& latents_base,
                                const std::vector<Tensor>& latents_up, const NoiseSchedule& sched,
                                const AdapterTrainConfig& cfg) {
    AdapterBatch b;
    b.indices = draw_indices(rng, ds.size(), cfg.batch);
    b.ts.resize(b.indices.size());
    Tensor z0b = stack_latents(latents_base, b.indices);
    Tensor z0u = stack_latents(latents_up, b.indices);
    b.eps_base = Tensor(z0b.shape);
    b.eps_up = Tensor(z0u.shape);
    b.tokens_base.resize(b.indices.size());
    b.tokens_up.resize(b.indices.size());
    size_t per_b = z0b.data.size() / b.indices.size();
    size_t per_u = z0u.data.size() / b.indices.size();
    b.z_t_base = Tensor(z0b.shape);
    b.z_t_up = Tensor(z0u.shape);
    for (size_t i = 0; i < b.indices.size(); ++i) {
        // one t per sample, shared by both bypasses; noises are independent
        // per space (the latent shapes differ)
        b.ts[i] = rng.uniform_int(0, sched.timesteps - 1);
        for (size_t j = i * per_b; j < (i + 1) * per_b; ++j)
            b.eps_base.data[j] = static_cast<float>(rng.normal());
        for (size_t j = i * per_u; j < (i + 1) * per_u; ++j)
            b.eps_up.data[j] = static_cast<float>(rng.normal());
        double ab = sched.sqrt_alpha_bar(b.ts[i]);
        double bb = sched.sqrt_one_minus_alpha_bar(b.ts[i]);
        for (size_t j = i * per_b; j < (i + 1) * per_b; ++j)
            b.z_t_base.data[j] = static_cast<float>(ab * z0b.data[j] + bb * b.eps_base.data[j]);
        for (size_t j = i * per_u; j < (i + 1) * per_u; ++j)
            b.z_t_up.data[j] = static_cast<float>(ab * z0u.data[j] + bb * b.eps_up.data[j]);

        int label = label_token(ds.samples[static_cast<size_t>(b.indices[i])].label);
        int cb = cfg.base_prompt_label ? label : kNullToken;
        b.tokens_base[i] = rng.uniform() < cfg.null_prob_base ? kNullToken : cb;
        b.tokens_up[i] = rng.uniform() < cfg.null_prob_upgraded ? kNullToken : label;
    }
    return b;
}

TrainResult train_adapter(const ModelVersion& base, const ModelVersion& up, MapperStack& stack,
                          const Dataset& ds, const NoiseSchedule& sched,
                          const AdapterTrainConfig& cfg, AdamW* external_optimizer) {
    if (ds.size() == 0) throw std::runtime_error("train_adapter: empty dataset");
    if (!base.unet_trained || !up.unet_trained)
        throw std::runtime_error("train_adapter: both versions must be pretrained");
    check_probability(cfg.null_prob_upgraded, "null_prob_upgraded");
    check_probability(cfg.null_prob_base, "null_prob_base");

    // strict freezing: the assembled system may train mapper parameters only
    std::string offenders;
    for (const auto& n : base.params.trainable_names()) offenders += " " + n;
    for (const auto& n : up.params.trainable_names()) offenders += " " + n;
    if (!offenders.empty())
        throw std::runtime_error("train_adapter: trainable parameters outside the mapper stack:" +
                                 offenders);

    Rng rng(splitmix64(cfg.seed ^ 0xada9ull));
    std::vector<Tensor> latents_base = encode_all(base, ds);
    std::vector<Tensor> latents_up = encode_all(up, ds);

    AdamW local(stack.params, stack.params.names(), cfg.lr);
    AdamW& opt = external_optimizer ? *external_optimizer : local;

    LossLog log;
    for (int step = 0; step < cfg.steps; ++step) {
        AdapterBatch b = draw_adapter_batch(rng, ds, latents_base, latents_up, sched, cfg);
        ModelRun run({&stack.params, &base.params, &up.params});
        int ztb = run.c(b.z_t_base);
        int ztu = run.c(b.z_t_up);
        UnetOut base_out = unet_forward(run, base, ztb, b.ts, b.tokens_base);
        auto guidance = map_taps(run, stack, base_out.taps);
        int eps_pred = fused_forward(run, up, ztu, b.ts, b.tokens_up, guidance, stack);
        int loss = run.tape.mse(eps_pred, run.c(b.eps_up));
        log.record(step, run.tape.value(loss)[0]);
        run.tape.backward(loss);
        auto grads = run.grads();
        for (const auto& [name, g] : grads)
            if (name.rfind("adapter.", 0) != 0)
                throw std::runtime_error("train_adapter: gradient for non-adapter parameter " + name);
        opt.step(grads);
        ++stack.steps_trained;
    }
    return log.finish();
}

}  // namespace xad
