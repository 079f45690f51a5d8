// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mcdm/autograd.hpp"
#include "mcdm/rng.hpp"

namespace mcdm::nn {

using ag::Var;
using ag::VarPtr;

// ---- fused layers (manual backward) ----

// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] or nullptr. Zero padding.
VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad);

// x: [N,K] @ w: [K,M] + b: [M] (b may be nullptr)
VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b);

// Global average pool [N,C,H,W] -> [N,C]
VarPtr avg_pool_global(const VarPtr& x);

// Row-wise L2 normalisation of [N,K]
VarPtr l2_normalize_rows(const VarPtr& x, double eps = 1e-12);

// Row-wise standardisation of [R,K]: (x - mean) / sqrt(var + eps)
VarPtr norm_lastdim(const VarPtr& x, double eps = 1e-5);

// Per-channel affine on [N,C,H,W]
VarPtr channel_scale_bias(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta);

// Feature-wise modulation: x[N*T,C,H,W] * (1+s[N,C]) + t[N,C]; rows r map to sample r/T.
VarPtr film(const VarPtr& x, const VarPtr& s, const VarPtr& t, int64_t frames_per_sample);

// Nearest-neighbour 2x upsampling of [N,C,H,W]
VarPtr upsample_nearest2x(const VarPtr& x);

// Bilinear resize (corner-aligned sampling) of [N,C,H,W] -> [N,C,H2,W2]
VarPtr bilinear_resize(const VarPtr& x, int64_t H2, int64_t W2);

// Backward warp with border clamping: out(p) = img(p + flow(p)).
// img: [N,C,H,W], flow: [N,2,H,W] in pixels (channel 0 = x/col, 1 = y/row).
VarPtr bilinear_warp(const VarPtr& img, const VarPtr& flow);

// Local-window attention between two feature maps.
// For every location p of fa, softmax over the (window x window) neighbourhood
// of p in fb using scaled dot-product similarity; outputs, concatenated along
// channels: expected coordinate offset under the attention weights (2 channels,
// units of the coords grid) followed by the attended fb features (C channels).
// fa, fb: [N,C,H,W]; coords: [2,H,W]; returns [N,2+C,H,W].
VarPtr window_attention(const VarPtr& fa, const VarPtr& fb, const Tensor& coords, int window);

// ---- pyramid primitives (5-tap binomial, whole-sample symmetric padding) ----

VarPtr binomial_blur(const VarPtr& x);                              // [N,C,H,W]
VarPtr decimate2(const VarPtr& x);                                  // keep even rows/cols
VarPtr upsample_zero_blur(const VarPtr& x, int64_t Ht, int64_t Wt); // zero-insert, 2*blur, crop to target

// ---- parameters / init ----

struct ParamSet {
    std::vector<std::pair<std::string, VarPtr>> items;
    VarPtr add(const std::string& name, Tensor init) {
        auto v = ag::variable(std::move(init), true);
        items.emplace_back(name, v);
        return v;
    }
    VarPtr find(const std::string& name) const {
        for (const auto& [n, v] : items)
            if (n == name) return v;
        return nullptr;
    }
};

Tensor fanin_normal(Rng& rng, std::vector<int64_t> shape, int64_t fan_in);

// ---- optimizer ----

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<VarPtr> params, AdamConfig cfg);
    void step(double lr_scale = 1.0);
    void zero_grad();
    int64_t steps() const { return t_; }

    // exposes state for checkpointing
    std::vector<VarPtr>& params() { return params_; }
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }
    void set_steps(int64_t t) { t_ = t; }

private:
    std::vector<VarPtr> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// Warmup + cosine decay multiplier in [0,1] for step t of total_steps.
double lr_schedule(const std::string& kind, int64_t t, int64_t warmup, int64_t total_steps);

} // namespace mcdm::nn
