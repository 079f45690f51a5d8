// SPDX-License-Identifier: Apache-2.0
#include "mcdm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "mcdm/errors.hpp"
#include "mcdm/rng.hpp"

namespace mcdm::diff {

using namespace ag;

// ---- schedule ----

NoiseSchedule make_noise_schedule(int64_t t_steps, double beta_start, double beta_end,
                                  const std::string& kind) {
    if (kind != "linear") throw ConfigError("unknown noise schedule kind '" + kind + "'");
    if (t_steps < 2) throw PreconditionError("noise schedule needs t_steps >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw PreconditionError("noise schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.t_steps = t_steps;
    s.beta.resize(size_t(t_steps));
    s.alpha_bar.resize(size_t(t_steps) + 1);
    s.alpha_bar[0] = 1.0;
    for (int64_t t = 1; t <= t_steps; ++t) {
        double frac = double(t - 1) / double(t_steps - 1);
        s.beta[size_t(t - 1)] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar[size_t(t)] = s.alpha_bar[size_t(t - 1)] * (1.0 - s.beta[size_t(t - 1)]);
    }
    return s;
}

Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.t_steps)
        throw PreconditionError("q_sample timestep out of range [0, " +
                                std::to_string(sched.t_steps) + "]");
    check_same_shape(z0, eps, "q_sample");
    double ab = sched.alpha_bar_at(t);
    double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    Tensor out(z0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c0 * z0.data[i] + c1 * eps.data[i];
    return out;
}

Tensor sinusoidal_embedding(double pos, int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw PreconditionError("embedding dim must be even and >= 2");
    Tensor e({dim});
    int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::pow(10000.0, -double(i) / double(half));
        e.data[size_t(i)] = std::sin(pos * freq);
        e.data[size_t(half + i)] = std::cos(pos * freq);
    }
    return e;
}

// ---- VAE ----

Vae::Vae(const VaeConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.latent_channels < 1 || cfg.base_channels < 1)
        throw ConfigError("vae channel counts must be positive");
    auto rng = make_rng(seed, "vae_init");
    int64_t c = cfg.base_channels, cz = cfg.latent_channels;
    auto conv = [&](const std::string& name, int64_t co, int64_t ci, VarPtr& w, VarPtr& b) {
        w = params_.add(name + ".w", nn::fanin_normal(rng, {co, ci, 3, 3}, ci * 9));
        b = params_.add(name + ".b", Tensor({co}));
    };
    conv("enc1", c, 1, we1_, be1_);
    conv("enc2", 2 * c, c, we2_, be2_);
    conv("enc3", 2 * cz, 2 * c, we3_, be3_);
    conv("dec1", 2 * c, cz, wd1_, bd1_);
    conv("dec2", c, 2 * c, wd2_, bd2_);
    conv("dec3", c, c, wd3_, bd3_);
    conv("dec4", 1, c, wd4_, bd4_);
    // mid-grey starting point keeps early reconstructions off the clamp rails
    bd4_->val.data[0] = 0.5;
}

std::pair<VarPtr, VarPtr> Vae::encode(const VarPtr& frames) const {
    if (frames->val.ndim() != 4 || frames->val.shape[1] != 1)
        throw PreconditionError("vae encoder expects [N,1,H,W]");
    int64_t H = frames->val.shape[2], W = frames->val.shape[3];
    if (H % 4 != 0 || W % 4 != 0 || H < 8 || W < 8)
        throw PreconditionError("vae frame size must be a multiple of 4 and at least 8");
    auto h = leaky_relu(nn::conv2d(frames, we1_, be1_, 2, 1), 0.1);
    h = leaky_relu(nn::conv2d(h, we2_, be2_, 2, 1), 0.1);
    auto both = nn::conv2d(h, we3_, be3_, 1, 1); // [N, 2*C_z, H/4, W/4]
    int64_t cz = cfg_.latent_channels;
    return {slice(both, 1, 0, cz), slice(both, 1, cz, cz)};
}

VarPtr Vae::decode(const VarPtr& z) const {
    if (z->val.ndim() != 4 || z->val.shape[1] != cfg_.latent_channels)
        throw PreconditionError("vae decoder expects [N," + std::to_string(cfg_.latent_channels) +
                                ",h,w]");
    auto h = leaky_relu(nn::conv2d(z, wd1_, bd1_, 1, 1), 0.1);
    h = nn::upsample_nearest2x(h);
    h = leaky_relu(nn::conv2d(h, wd2_, bd2_, 1, 1), 0.1);
    h = nn::upsample_nearest2x(h);
    h = leaky_relu(nn::conv2d(h, wd3_, bd3_, 1, 1), 0.1);
    return clamp01(nn::conv2d(h, wd4_, bd4_, 1, 1));
}

VarPtr Vae::kl(const VarPtr& mean, const VarPtr& logvar) const {
    // mean over elements of -0.5 (1 + logvar - mean^2 - exp(logvar))
    auto one = constant(Tensor(mean->val.shape, 1.0));
    auto term = sub(sub(add(one, logvar), mul(mean, mean)), exp_v(logvar));
    return scale(mean_all(term), -0.5);
}

Tensor Vae::encode_clip(const data::VideoClip& clip) const {
    NoGrad guard;
    int64_t HW = clip.H * clip.W;
    Tensor out;
    const int64_t chunk = 16;
    std::vector<Tensor> parts;
    for (int64_t t0 = 0; t0 < clip.T; t0 += chunk) {
        int64_t n = std::min(chunk, clip.T - t0);
        Tensor frames({n, 1, clip.H, clip.W});
        std::copy(clip.frames.begin() + t0 * HW, clip.frames.begin() + (t0 + n) * HW,
                  frames.data.begin());
        parts.push_back(encode(variable(std::move(frames))).first->val);
    }
    int64_t cz = cfg_.latent_channels, h = clip.H / 4, w = clip.W / 4;
    out = Tensor({clip.T, cz, h, w});
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
        off += p.data.size();
    }
    if (!out.all_finite())
        throw NumericError("latent encoding of clip '" + clip.id + "' is not finite");
    return out;
}

data::VideoClip Vae::decode_clip(const Tensor& latents, double fps, const std::string& id) const {
    NoGrad guard;
    if (latents.ndim() != 4 || latents.shape[1] != cfg_.latent_channels)
        throw PreconditionError("latents must be [T,C_z,h,w]");
    if (!latents.all_finite()) throw NumericError("latents for clip '" + id + "' are not finite");
    int64_t T = latents.shape[0], h = latents.shape[2], w = latents.shape[3];
    data::VideoClip clip;
    clip.id = id;
    clip.T = T;
    clip.H = 4 * h;
    clip.W = 4 * w;
    clip.fps = fps;
    clip.frames.resize(size_t(T) * clip.H * clip.W);
    auto img = decode(variable(Tensor(latents.shape, latents.data)));
    std::copy(img->val.data.begin(), img->val.data.end(), clip.frames.begin());
    return clip;
}

std::vector<VarPtr> Vae::parameters() const {
    std::vector<VarPtr> out;
    for (const auto& [n, v] : params_.items) out.push_back(v);
    return out;
}

namespace {

store::Checkpoint params_to_checkpoint(const nn::ParamSet& params, uint64_t config_hash,
                                       int64_t step) {
    store::Checkpoint ck;
    ck.config_hash = config_hash;
    ck.step = step;
    for (const auto& [n, v] : params.items) ck.tensors.emplace_back(n, v->val);
    return ck;
}

void params_from_checkpoint(nn::ParamSet& params, const store::Checkpoint& ck) {
    for (auto& [name, v] : params.items) {
        bool found = false;
        for (const auto& [n, t] : ck.tensors)
            if (n == name) {
                if (!t.same_shape(v->val))
                    throw IoError("checkpoint tensor '" + name + "' has shape " + t.shape_str() +
                                  ", expected " + v->val.shape_str());
                v->val = t;
                found = true;
                break;
            }
        if (!found) throw IoError("checkpoint is missing tensor '" + name + "'");
    }
}

} // namespace

store::Checkpoint Vae::to_checkpoint(uint64_t config_hash, int64_t step) const {
    return params_to_checkpoint(params_, config_hash, step);
}

void Vae::load_parameters(const store::Checkpoint& ck) { params_from_checkpoint(params_, ck); }

Vae train_vae(const std::vector<data::VideoClip>& clips, const VaeConfig& cfg, int64_t steps,
              uint64_t seed, VaeTrainStats* stats) {
    if (clips.empty()) throw ConfigError("vae training set is empty");
    int64_t H = clips[0].H, W = clips[0].W;
    int64_t total_frames = 0;
    for (const auto& c : clips) {
        if (c.H != H || c.W != W)
            throw PreconditionError("all clips must share one frame size");
        total_frames += c.T;
    }

    Vae model(cfg, seed);
    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    nn::Adam opt(model.parameters(), ac);
    auto rng = make_rng(seed, "vae_data");
    auto nrng = make_rng(seed, "vae_noise");
    int64_t B = std::min<int64_t>(cfg.batch, total_frames);

    for (int64_t step = 0; step < steps; ++step) {
        Tensor batch({B, 1, H, W});
        for (int64_t i = 0; i < B; ++i) {
            const auto& clip = clips[size_t(rng.uniform_int(0, int64_t(clips.size()) - 1))];
            int64_t t = rng.uniform_int(0, clip.T - 1);
            std::copy(clip.frames.begin() + t * H * W, clip.frames.begin() + (t + 1) * H * W,
                      batch.data.begin() + i * H * W);
        }
        auto x = variable(std::move(batch));
        auto [mean, logvar] = model.encode(x);
        Tensor noise(mean->val.shape);
        nrng.fill_normal(noise);
        auto z = add(mean, mul(exp_v(scale(logvar, 0.5)), constant(std::move(noise))));
        auto recon = mse(model.decode(z), x);
        auto kl = model.kl(mean, logvar);
        auto loss = add(recon, scale(kl, cfg.kl_weight));
        opt.zero_grad();
        backward(loss);
        opt.step();
        if (stats) {
            stats->total.push_back(loss->val.data[0]);
            stats->recon.push_back(recon->val.data[0]);
            stats->kl.push_back(kl->val.data[0]);
        }
    }
    return model;
}

// ---- denoiser ----

Denoiser::Denoiser(const DenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.residual_blocks < 1) throw ConfigError("denoiser needs at least one residual block");
    if (cfg.base_channels < 1 || cfg.latent_channels < 1 || cfg.embed_dim < 2 ||
        cfg.embed_dim % 2 != 0)
        throw ConfigError("denoiser channel/embedding sizes invalid (embed_dim must be even)");
    if (cfg.groups < 1 || cfg.base_channels % cfg.groups != 0)
        throw ConfigError("base_channels must be divisible by the normalisation group count");
    if (cfg.cond_dim < 1) throw ConfigError("cond_dim must be positive");
    if (!(cfg.p_drop >= 0.0 && cfg.p_drop < 1.0)) throw ConfigError("p_drop must be in [0,1)");

    auto rng = make_rng(seed, "denoiser_init");
    int64_t C = cfg.base_channels, cz = cfg.latent_channels, E = cfg.embed_dim;

    w_time_ = params_.add("cond.time.w", nn::fanin_normal(rng, {E, E}, E));
    b_time_ = params_.add("cond.time.b", Tensor({E}));
    w_mot_ = params_.add("cond.motion.w", nn::fanin_normal(rng, {cfg.cond_dim, E}, cfg.cond_dim));
    b_mot_ = params_.add("cond.motion.b", Tensor({E}));
    null_emb_ = params_.add("cond.null", nn::fanin_normal(rng, {1, E}, E));

    w_in_ = params_.add("in.w", nn::fanin_normal(rng, {C, cz, 3, 3}, cz * 9));
    b_in_ = params_.add("in.b", Tensor({C}));

    blocks_.resize(size_t(cfg.residual_blocks));
    for (int64_t i = 0; i < cfg.residual_blocks; ++i) {
        auto& bl = blocks_[size_t(i)];
        std::string p = "block" + std::to_string(i) + ".";
        bl.g1 = params_.add(p + "norm1.g", Tensor({C}, 1.0));
        bl.h1 = params_.add(p + "norm1.b", Tensor({C}));
        bl.w1 = params_.add(p + "conv1.w", nn::fanin_normal(rng, {C, C, 3, 3}, C * 9));
        bl.b1 = params_.add(p + "conv1.b", Tensor({C}));
        // zero projection: modulation starts as identity
        bl.w_cond = params_.add(p + "cond.w", Tensor({E, 2 * C}));
        bl.b_cond = params_.add(p + "cond.b", Tensor({2 * C}));
        bl.g2 = params_.add(p + "norm2.g", Tensor({C}, 1.0));
        bl.h2 = params_.add(p + "norm2.b", Tensor({C}));
        bl.w2 = params_.add(p + "conv2.w", nn::fanin_normal(rng, {C, C, 3, 3}, C * 9));
        bl.b2 = params_.add(p + "conv2.b", Tensor({C}));
        if (cfg.temporal_attention) {
            bl.wq = params_.add(p + "attn.q", nn::fanin_normal(rng, {C, C}, C));
            bl.wk = params_.add(p + "attn.k", nn::fanin_normal(rng, {C, C}, C));
            bl.wv = params_.add(p + "attn.v", nn::fanin_normal(rng, {C, C}, C));
            // zero output projection: attention starts as a no-op
            bl.wo = params_.add(p + "attn.o", Tensor({C, C}));
        }
    }
    g_out_ = params_.add("out.norm.g", Tensor({C}, 1.0));
    h_out_ = params_.add("out.norm.b", Tensor({C}));
    // zero final conv: the untrained model predicts zero noise
    w_out_ = params_.add("out.w", Tensor({cz, C, 3, 3}));
    b_out_ = params_.add("out.b", Tensor({cz}));
}

namespace {

// group normalisation of [T,C,h,w] via row-wise standardisation
VarPtr group_norm(const VarPtr& x, int64_t groups, const VarPtr& gamma, const VarPtr& beta) {
    int64_t T = x->val.shape[0], C = x->val.shape[1], h = x->val.shape[2], w = x->val.shape[3];
    auto flat = reshape(x, {T * groups, (C / groups) * h * w});
    auto normed = reshape(nn::norm_lastdim(flat), {T, C, h, w});
    return nn::channel_scale_bias(normed, gamma, beta);
}

} // namespace

VarPtr Denoiser::cond_embedding(int64_t t, const Tensor* cond) const {
    auto te = constant(Tensor({1, cfg_.embed_dim},
                              sinusoidal_embedding(double(t), cfg_.embed_dim).data));
    auto e = nn::linear(te, w_time_, b_time_);
    if (cond) {
        if (cond->ndim() != 1 || cond->shape[0] != cfg_.cond_dim)
            throw PreconditionError("condition vector must have dim " +
                                    std::to_string(cfg_.cond_dim));
        auto mv = constant(Tensor({1, cfg_.cond_dim}, cond->data));
        e = add(e, nn::linear(mv, w_mot_, b_mot_));
    } else {
        e = add(e, null_emb_);
    }
    return silu(e); // [1, E]
}

VarPtr Denoiser::forward(const VarPtr& z, int64_t t, const Tensor* cond) const {
    if (z->val.ndim() != 4 || z->val.shape[1] != cfg_.latent_channels)
        throw PreconditionError("denoiser expects [T," + std::to_string(cfg_.latent_channels) +
                                ",h,w]");
    if (t < 1) throw PreconditionError("denoiser timestep must be >= 1");
    int64_t T = z->val.shape[0], C = cfg_.base_channels;
    int64_t h = z->val.shape[2], w = z->val.shape[3];

    auto e = cond_embedding(t, cond);
    auto x = nn::conv2d(z, w_in_, b_in_, 1, 1);

    for (const auto& bl : blocks_) {
        auto a = nn::conv2d(silu(group_norm(x, cfg_.groups, bl.g1, bl.h1)), bl.w1, bl.b1, 1, 1);
        auto st = nn::linear(e, bl.w_cond, bl.b_cond); // [1, 2C]
        a = nn::film(a, slice(st, 1, 0, C), slice(st, 1, C, C), T);
        a = nn::conv2d(silu(group_norm(a, cfg_.groups, bl.g2, bl.h2)), bl.w2, bl.b2, 1, 1);
        x = add(x, a);
        if (cfg_.temporal_attention && T > 1) {
            // per-location single-head attention across the T frames
            Tensor pos({1, T, C});
            for (int64_t f = 0; f < T; ++f) {
                Tensor pe = sinusoidal_embedding(double(f), C);
                std::copy(pe.data.begin(), pe.data.end(), pos.data.begin() + f * C);
            }
            Tensor pos_tiled({h * w, T, C});
            for (int64_t s = 0; s < h * w; ++s)
                std::copy(pos.data.begin(), pos.data.end(),
                          pos_tiled.data.begin() + s * T * C);
            auto seq = permute(reshape(x, {T, C, h * w}), {2, 0, 1}); // [h*w, T, C]
            auto y = add(seq, constant(std::move(pos_tiled)));
            auto q = matmul(y, bl.wq);
            auto k = matmul(y, bl.wk);
            auto v = matmul(seq, bl.wv);
            auto att = softmax_lastdim(scale(matmul(q, permute(k, {0, 2, 1})),
                                             1.0 / std::sqrt(double(C))));
            auto out = matmul(matmul(att, v), bl.wo);
            x = add(x, reshape(permute(out, {1, 2, 0}), {T, C, h, w}));
        }
    }
    return nn::conv2d(silu(group_norm(x, cfg_.groups, g_out_, h_out_)), w_out_, b_out_, 1, 1);
}

std::vector<VarPtr> Denoiser::parameters() const {
    std::vector<VarPtr> out;
    for (const auto& [n, v] : params_.items) out.push_back(v);
    return out;
}

store::Checkpoint Denoiser::to_checkpoint(uint64_t config_hash, int64_t step) const {
    return params_to_checkpoint(params_, config_hash, step);
}

void Denoiser::load_parameters(const store::Checkpoint& ck) {
    params_from_checkpoint(params_, ck);
}

// ---- latent store ----

void write_latent_store(const std::string& path, const std::vector<LatentClip>& clips) {
    std::vector<store::FeatureRecord> records;
    for (const auto& c : clips) {
        if (c.z.ndim() != 4) throw PreconditionError("latent clip '" + c.id + "' must be 4D");
        if (!c.z.all_finite())
            throw PreconditionError("latent clip '" + c.id + "' is not finite");
        store::FeatureRecord rec;
        rec.id = c.id;
        rec.values.reserve(4 + c.z.data.size());
        for (int i = 0; i < 4; ++i) rec.values.push_back(float(c.z.shape[size_t(i)]));
        for (double v : c.z.data) rec.values.push_back(float(v));
        records.push_back(std::move(rec));
    }
    store::write_features(path, records);
}

std::vector<LatentClip> read_latent_store(const std::string& path) {
    std::vector<LatentClip> out;
    for (const auto& rec : store::read_features(path)) {
        if (rec.values.size() < 4)
            throw IoError("latent record '" + rec.id + "' is missing its shape header");
        std::vector<int64_t> shape(4);
        int64_t numel = 1;
        for (int i = 0; i < 4; ++i) {
            shape[size_t(i)] = int64_t(rec.values[size_t(i)]);
            if (shape[size_t(i)] < 1)
                throw IoError("latent record '" + rec.id + "' has a non-positive dimension");
            numel *= shape[size_t(i)];
        }
        if (int64_t(rec.values.size()) != 4 + numel)
            throw IoError("latent record '" + rec.id + "' holds " +
                          std::to_string(rec.values.size() - 4) + " values, header implies " +
                          std::to_string(numel));
        LatentClip c;
        c.id = rec.id;
        c.z = Tensor(shape);
        for (int64_t i = 0; i < numel; ++i) c.z.data[size_t(i)] = double(rec.values[size_t(4 + i)]);
        out.push_back(std::move(c));
    }
    return out;
}

// ---- training ----

Denoiser train_lvdm(const std::vector<LatentClip>& latents,
                    const std::vector<store::FeatureRecord>& motions, const NoiseSchedule& sched,
                    const DenoiserConfig& cfg, double lr, int64_t steps, uint64_t seed,
                    std::vector<double>* losses) {
    if (latents.empty()) throw ConfigError("latent store is empty");
    if (motions.empty()) throw LookupError("motion store is empty");
    std::unordered_map<std::string, const store::FeatureRecord*> by_id;
    for (const auto& m : motions) by_id[m.id] = &m;
    std::set<std::string> missing;
    for (const auto& l : latents)
        if (!by_id.count(l.id)) missing.insert(l.id);
    if (!missing.empty()) {
        std::string msg = "missing motion vectors for:";
        for (const auto& id : missing) msg += " " + id;
        throw LookupError(msg);
    }
    std::vector<Tensor> conds;
    for (const auto& l : latents) {
        const auto& rec = *by_id[l.id];
        if (int64_t(rec.values.size()) != cfg.cond_dim)
            throw PreconditionError("motion vector '" + rec.id + "' has dim " +
                                    std::to_string(rec.values.size()) + ", config expects " +
                                    std::to_string(cfg.cond_dim));
        Tensor c({cfg.cond_dim});
        for (int64_t i = 0; i < cfg.cond_dim; ++i) c.data[size_t(i)] = double(rec.values[size_t(i)]);
        conds.push_back(std::move(c));
    }

    Denoiser model(cfg, seed);
    nn::AdamConfig ac;
    ac.lr = lr;
    nn::Adam opt(model.parameters(), ac);
    auto rng = make_rng(seed, "lvdm_data");
    auto nrng = make_rng(seed, "lvdm_noise");

    for (int64_t step = 0; step < steps; ++step) {
        int64_t ci = rng.uniform_int(0, int64_t(latents.size()) - 1);
        int64_t t = rng.uniform_int(1, sched.t_steps);
        bool drop = rng.uniform(0.0, 1.0) < cfg.p_drop;
        Tensor eps(latents[size_t(ci)].z.shape);
        nrng.fill_normal(eps);
        Tensor zt = q_sample(latents[size_t(ci)].z, t, eps, sched);
        auto pred = model.forward(variable(std::move(zt)), t,
                                  drop ? nullptr : &conds[size_t(ci)]);
        auto loss = mse(pred, constant(std::move(eps)));
        opt.zero_grad();
        backward(loss);
        opt.step();
        if (losses) losses->push_back(loss->val.data[0]);
    }
    return model;
}

// ---- sampling ----

Sampler sampler_from(const std::string& name) {
    if (name == "ancestral") return Sampler::ancestral;
    if (name == "deterministic") return Sampler::deterministic;
    throw ConfigError("unknown sampler '" + name + "' (expected ancestral or deterministic)");
}

data::VideoClip sample_video(const Denoiser& den, const Vae& vae, const NoiseSchedule& sched,
                             const Tensor* cond, int64_t t_frames, int64_t h, int64_t w,
                             Sampler sampler, uint64_t seed) {
    if (t_frames < 1) throw PreconditionError("sampling needs t_frames >= 1");
    if (h < 1 || w < 1) throw PreconditionError("latent size must be positive");
    NoGrad guard;
    auto rng = make_rng(seed, "sample");
    int64_t cz = den.config().latent_channels;
    Tensor z({t_frames, cz, h, w});
    rng.fill_normal(z);

    for (int64_t t = sched.t_steps; t >= 1; --t) {
        auto eps_hat = den.forward(variable(Tensor(z.shape, z.data)), t, cond)->val;
        double ab_t = sched.alpha_bar_at(t), ab_p = sched.alpha_bar_at(t - 1);
        if (sampler == Sampler::ancestral) {
            double alpha = sched.alpha_at(t), beta = sched.beta_at(t);
            double c_eps = beta / std::sqrt(1.0 - ab_t);
            double inv_sqrt_a = 1.0 / std::sqrt(alpha);
            double sigma = t > 1 ? std::sqrt((1.0 - ab_p) / (1.0 - ab_t) * beta) : 0.0;
            for (size_t i = 0; i < z.data.size(); ++i) {
                double mu = inv_sqrt_a * (z.data[i] - c_eps * eps_hat.data[i]);
                z.data[i] = mu + (sigma > 0.0 ? sigma * rng.normal() : 0.0);
            }
        } else {
            double sa = std::sqrt(ab_t);
            double se = std::sqrt(1.0 - ab_t);
            for (size_t i = 0; i < z.data.size(); ++i) {
                double x0 = (z.data[i] - se * eps_hat.data[i]) / sa;
                z.data[i] = std::sqrt(ab_p) * x0 + std::sqrt(1.0 - ab_p) * eps_hat.data[i];
            }
        }
    }
    if (!z.all_finite()) throw NumericError("sampled latents are not finite");
    return vae.decode_clip(z, 30.0, "sample-" + std::to_string(seed));
}

} // namespace mcdm::diff
