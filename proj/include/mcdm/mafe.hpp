// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcdm/autograd.hpp"
#include "mcdm/data.hpp"
#include "mcdm/nn.hpp"
#include "mcdm/store.hpp"

namespace mcdm::mafe {

using ag::VarPtr;

struct MafeConfig {
    std::vector<int64_t> channels = {64, 128, 256, 512};
    int attention_window = 7;
    int head_channels = 32;
    int pyramid_levels = 3;
    double lambda1 = 1.0;
    double lambda2 = 0.01;
    double lr = 2e-4;
    int64_t warmup = 2000;
    int64_t batch = 8;
    std::string schedule = "cosine";
};

// (x, y) grid on [-1,1]^2, tensor [2,H,W]; corners hit +-1 exactly.
Tensor coordinate_grid(int64_t H, int64_t W);

// Per-scale feature maps, both frames batched along dim 0: rows [0,N) hold
// frame 0 of each sample, rows [N,2N) frame 1.
struct Appearance {
    std::vector<VarPtr> scales; // 4 entries, [2N, C_s, H_s, W_s]
    int64_t n = 0;
};

// Bidirectional motion features for the two deepest scales; rows [0,N) hold
// the forward direction, rows [N,2N) the backward one.
struct Motion {
    VarPtr s2, s3; // [2N, C_s, H_s, W_s]
    int64_t n = 0;
};

struct Prediction {
    VarPtr image;   // [N,1,H,W] in [0,1]
    VarPtr flow_t0; // [N,2,H,W] pixels, mid -> frame 0 sampling offsets
    VarPtr flow_t1; // [N,2,H,W]
    VarPtr mask;    // [N,1,H,W] in [0,1]
};

class Mafe {
public:
    Mafe(const MafeConfig& cfg, uint64_t seed);

    Appearance encode(const VarPtr& I0, const VarPtr& I1) const; // [N,1,H,W] each
    Motion motion(const Appearance& app) const;
    Prediction synthesize(const VarPtr& I0, const VarPtr& I1, const Appearance& app,
                          const Motion& mot) const;

    // mean over H,W then direction-major flatten, scale 2 then scale 3: [N, 2*C2+2*C3]
    VarPtr motion_vector(const Motion& mot) const;
    int64_t motion_dim() const { return 2 * cfg_.channels[2] + 2 * cfg_.channels[3]; }

    // pooled scale-3 appearance vs pseudo embeddings, averaged over the two frames
    VarPtr reid_loss(const Appearance& app, const Tensor& emb0, const Tensor& emb1) const;

    const MafeConfig& config() const { return cfg_; }
    std::vector<VarPtr> parameters() const;
    store::Checkpoint to_checkpoint(uint64_t config_hash, int64_t step) const;
    void load_parameters(const store::Checkpoint& ck);

private:
    MafeConfig cfg_;
    nn::ParamSet params_;
    VarPtr w_stem_, b_stem_, w_b1_, b_b1_, w_b2_, b_b2_, w_b2r_, b_b2r_, w_b3_, b_b3_, w_b3r_,
        b_b3r_;
    VarPtr w_proj2_, b_proj2_, w_proj3_, b_proj3_;
    VarPtr w_redm_, b_redm_, w_reda_, b_reda_, w_h1_, b_h1_, w_h2_, b_h2_, w_out_, b_out_;
};

// One training example with its pseudo ground truths attached.
struct PairBundle {
    data::FramePair pair;
    Tensor pseudo_flow; // [2,H,W] u then v, frame resolution, direction I0 -> I1
    Tensor flow_mask;   // [1,H,W] in {0,1}
    Tensor emb0, emb1;  // [C3] pseudo embeddings
    bool has_flow = false;
    bool has_emb = false;
};

struct TrainStats {
    std::vector<double> total, lap, reid, flow;
};

// Seeded Adam training over the bundles; stats receive one entry per step.
Mafe train_mafe(const std::vector<PairBundle>& dataset, const MafeConfig& cfg, int64_t steps,
                uint64_t seed, TrainStats* stats);

} // namespace mcdm::mafe
