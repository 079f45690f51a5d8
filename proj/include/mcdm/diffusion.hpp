// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcdm/autograd.hpp"
#include "mcdm/data.hpp"
#include "mcdm/nn.hpp"
#include "mcdm/store.hpp"

namespace mcdm::diff {

using ag::VarPtr;

// DDPM beta schedule with the alpha_bar(0) = 1 convention; all products kept
// in double precision.
struct NoiseSchedule {
    int64_t t_steps = 0;
    std::vector<double> beta;      // beta[t-1] is beta_t for t in [1, t_steps]
    std::vector<double> alpha_bar; // alpha_bar[t] for t in [0, t_steps], [0] == 1

    double beta_at(int64_t t) const { return beta[size_t(t - 1)]; }
    double alpha_at(int64_t t) const { return 1.0 - beta[size_t(t - 1)]; }
    double alpha_bar_at(int64_t t) const { return alpha_bar[size_t(t)]; }
};

NoiseSchedule make_noise_schedule(int64_t t_steps, double beta_start, double beta_end,
                                  const std::string& kind = "linear");

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps; t = 0 returns z0 exactly.
Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const NoiseSchedule& sched);

// Sinusoidal embedding of an integer position, dim must be even.
Tensor sinusoidal_embedding(double pos, int64_t dim);

// ---- per-frame VAE ----

struct VaeConfig {
    int64_t latent_channels = 4;
    int64_t base_channels = 16;
    double kl_weight = 1e-4;
    double lr = 1e-3;
    int64_t batch = 8;
};

class Vae {
public:
    Vae(const VaeConfig& cfg, uint64_t seed);

    // frames [N,1,H,W] with H,W divisible by 4 -> mean/logvar [N,C_z,H/4,W/4]
    std::pair<VarPtr, VarPtr> encode(const VarPtr& frames) const;
    VarPtr decode(const VarPtr& z) const; // [N,C_z,h,w] -> [N,1,4h,4w], clamped to [0,1]
    VarPtr kl(const VarPtr& mean, const VarPtr& logvar) const;

    // Inference helpers (no tape): posterior-mean latents for a whole clip and
    // frame decoding back to [0,1] planes. Throws on non-finite latents.
    Tensor encode_clip(const data::VideoClip& clip) const; // [T,C_z,h,w]
    data::VideoClip decode_clip(const Tensor& latents, double fps,
                                const std::string& id) const;

    const VaeConfig& config() const { return cfg_; }
    std::vector<VarPtr> parameters() const;
    store::Checkpoint to_checkpoint(uint64_t config_hash, int64_t step) const;
    void load_parameters(const store::Checkpoint& ck);

private:
    VaeConfig cfg_;
    nn::ParamSet params_;
    VarPtr we1_, be1_, we2_, be2_, we3_, be3_;
    VarPtr wd1_, bd1_, wd2_, bd2_, wd3_, bd3_, wd4_, bd4_;
};

struct VaeTrainStats {
    std::vector<double> total, recon, kl;
};

Vae train_vae(const std::vector<data::VideoClip>& clips, const VaeConfig& cfg, int64_t steps,
              uint64_t seed, VaeTrainStats* stats);

// ---- motion-conditioned denoiser ----

struct DenoiserConfig {
    int64_t residual_blocks = 4;
    int64_t base_channels = 32;
    int64_t latent_channels = 4;
    int64_t cond_dim = 1536;   // MotionVector length
    int64_t embed_dim = 64;    // timestep/motion embedding width
    int64_t groups = 8;        // feature-normalisation groups
    bool temporal_attention = true;
    double p_drop = 0.1;       // condition dropout during training
};

class Denoiser {
public:
    Denoiser(const DenoiserConfig& cfg, uint64_t seed);

    // z [T,C_z,h,w], training timestep t >= 1; cond = nullptr selects the
    // learned null embedding. Output has the shape of z.
    VarPtr forward(const VarPtr& z, int64_t t, const Tensor* cond) const;

    const DenoiserConfig& config() const { return cfg_; }
    std::vector<VarPtr> parameters() const;
    store::Checkpoint to_checkpoint(uint64_t config_hash, int64_t step) const;
    void load_parameters(const store::Checkpoint& ck);

private:
    VarPtr cond_embedding(int64_t t, const Tensor* cond) const;

    DenoiserConfig cfg_;
    nn::ParamSet params_;
    VarPtr w_time_, b_time_, w_mot_, b_mot_, null_emb_;
    VarPtr w_in_, b_in_, w_out_, b_out_, g_out_, h_out_;
    struct Block {
        VarPtr g1, h1, w1, b1;    // norm affine + first conv
        VarPtr w_cond, b_cond;    // embedding -> (scale, shift)
        VarPtr g2, h2, w2, b2;    // norm affine + second conv
        VarPtr wq, wk, wv, wo;    // temporal attention projections
    };
    std::vector<Block> blocks_;
};

// ---- latent store and training ----

struct LatentClip {
    std::string id;
    Tensor z; // [T,C_z,h,w]
};

void write_latent_store(const std::string& path, const std::vector<LatentClip>& clips);
std::vector<LatentClip> read_latent_store(const std::string& path);

// One optimisation step draws a clip, a timestep, and noise; the objective is
// the MSE between the injected and predicted noise. Condition dropout follows
// cfg.p_drop. Missing/empty motion records fail before the first step.
Denoiser train_lvdm(const std::vector<LatentClip>& latents,
                    const std::vector<store::FeatureRecord>& motions, const NoiseSchedule& sched,
                    const DenoiserConfig& cfg, double lr, int64_t steps, uint64_t seed,
                    std::vector<double>* losses);

enum class Sampler { ancestral, deterministic };
Sampler sampler_from(const std::string& name);

// Reverse process from seeded Gaussian latents, decoded per frame.
data::VideoClip sample_video(const Denoiser& den, const Vae& vae, const NoiseSchedule& sched,
                             const Tensor* cond, int64_t t_frames, int64_t h, int64_t w,
                             Sampler sampler, uint64_t seed);

} // namespace mcdm::diff
