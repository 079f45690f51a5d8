// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcdm/autograd.hpp"
#include "mcdm/data.hpp"
#include "mcdm/nn.hpp"
#include "mcdm/store.hpp"

namespace mcdm::pseudo {

using ag::VarPtr;

// InfoNCE over cosine similarities: anchors and positives aligned row by row,
// negatives shared across anchors.
VarPtr contrastive_loss(const VarPtr& anchors, const VarPtr& positives, const VarPtr& negatives,
                        double tau);

struct ReidConfig {
    int64_t embed_dim = 512;
    std::vector<int64_t> channels = {16, 32};
    double lr = 1e-3;
    double tau = 0.07;
    int64_t batch_videos = 4;
    int64_t steps = 300;
};

class ReidEmbedder {
public:
    ReidEmbedder(const ReidConfig& cfg, uint64_t seed);
    VarPtr embed(const VarPtr& frames) const; // [N,1,H,W] -> [N,D], unit rows
    std::vector<VarPtr> parameters() const;
    store::Checkpoint to_checkpoint(uint64_t config_hash, int64_t step) const;
    void load_parameters(const store::Checkpoint& ck);
    const ReidConfig& config() const { return cfg_; }

private:
    ReidConfig cfg_;
    nn::ParamSet params_;
    VarPtr w1_, b1_, w2_, b2_, w3_, b3_;
};

struct ReidResult {
    ReidEmbedder model;
    std::vector<store::FeatureRecord> embeddings; // keyed "video_id#frame_index"
    std::vector<double> losses;
};

ReidResult train_reid(const std::vector<data::VideoClip>& clips, const ReidConfig& cfg,
                      uint64_t seed);

// Integer-displacement SAD matching; ties prefer the smaller displacement
// norm, then smaller v, then smaller u. Grid points every `stride` pixels,
// densified by nearest assignment.
data::FlowField block_match_flow(const Tensor& I0, const Tensor& I1, int patch, int search,
                                 int stride);

// Bilinear resize with displacement rescaling: u by W2/W, v by H2/H.
data::FlowField resample_flow(const data::FlowField& f, int64_t H2, int64_t W2);

// Masked MSE of the predicted midpoint flows against the +-0.5 linear split
// of the pair flow. pseudo: [N,2,H,W] (u,v), mask: [N,1,H,W] in {0,1}. An
// all-zero mask yields 0 with a warning.
VarPtr flow_loss(const VarPtr& pred_t0, const VarPtr& pred_t1, const Tensor& pseudo,
                 const Tensor& mask);

} // namespace mcdm::pseudo
