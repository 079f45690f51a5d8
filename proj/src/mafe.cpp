// SPDX-License-Identifier: Apache-2.0
#include "mcdm/mafe.hpp"

#include <algorithm>
#include <cmath>

#include "mcdm/errors.hpp"
#include "mcdm/pseudo.hpp"
#include "mcdm/pyramid.hpp"
#include "mcdm/rng.hpp"

namespace mcdm::mafe {

using namespace ag;

Tensor coordinate_grid(int64_t H, int64_t W) {
    if (H < 2 || W < 2) throw PreconditionError("coordinate grid needs H,W >= 2");
    Tensor g({2, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            g.at3(0, y, x) = -1.0 + 2.0 * double(x) / double(W - 1);
            g.at3(1, y, x) = -1.0 + 2.0 * double(y) / double(H - 1);
        }
    return g;
}

Mafe::Mafe(const MafeConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.channels.size() != 4) throw ConfigError("encoder expects 4 channel widths");
    for (int64_t c : cfg.channels)
        if (c < 1) throw ConfigError("encoder channel widths must be positive");
    if (cfg.attention_window < 3 || cfg.attention_window % 2 == 0)
        throw ConfigError("attention window must be odd and at least 3");
    if (cfg.head_channels < 1) throw ConfigError("head_channels must be positive");
    if (cfg.pyramid_levels < 1) throw ConfigError("pyramid_levels must be positive");

    auto rng = make_rng(seed, "mafe_init");
    int64_t c0 = cfg.channels[0], c1 = cfg.channels[1], c2 = cfg.channels[2],
            c3 = cfg.channels[3], hc = cfg.head_channels;

    auto conv = [&](const std::string& name, int64_t co, int64_t ci, int64_t k, VarPtr& w,
                    VarPtr& b) {
        w = params_.add(name + ".w", nn::fanin_normal(rng, {co, ci, k, k}, ci * k * k));
        b = params_.add(name + ".b", Tensor({co}));
    };
    conv("enc.stem", c0, 1, 3, w_stem_, b_stem_);
    conv("enc.b1", c1, c0, 3, w_b1_, b_b1_);
    conv("enc.b2", c2, c1, 3, w_b2_, b_b2_);
    conv("enc.b2r", c2, c2, 3, w_b2r_, b_b2r_);
    conv("enc.b3", c3, c2, 3, w_b3_, b_b3_);
    conv("enc.b3r", c3, c3, 3, w_b3r_, b_b3r_);
    conv("mot.proj2", c2, 2 + c2, 1, w_proj2_, b_proj2_);
    conv("mot.proj3", c3, 2 + c3, 1, w_proj3_, b_proj3_);
    conv("head.redm", hc, c2 + c3, 1, w_redm_, b_redm_);
    conv("head.reda", hc, c2, 1, w_reda_, b_reda_);
    conv("head.h1", hc, 4 * hc + 2, 3, w_h1_, b_h1_);
    conv("head.h2", hc, hc, 3, w_h2_, b_h2_);
    // zero head: at initialisation the prediction is the plain frame average
    w_out_ = params_.add("head.out.w", Tensor({6, hc, 3, 3}));
    b_out_ = params_.add("head.out.b", Tensor({6}));
}

Appearance Mafe::encode(const VarPtr& I0, const VarPtr& I1) const {
    if (I0->val.ndim() != 4 || I0->val.shape[1] != 1)
        throw PreconditionError("encoder expects [N,1,H,W] frames");
    check_same_shape(I0->val, I1->val, "encode");
    int64_t H = I0->val.shape[2], W = I0->val.shape[3];
    if (H % 8 != 0 || W % 8 != 0 || H < 16 || W < 16)
        throw PreconditionError("frame size must be a multiple of 8 and at least 16");

    auto x = concat({I0, I1}, 0); // both frames share the encoder weights
    Appearance app;
    app.n = I0->val.shape[0];
    auto s0 = leaky_relu(nn::conv2d(x, w_stem_, b_stem_, 2, 1), 0.1);
    auto s1 = leaky_relu(nn::conv2d(s0, w_b1_, b_b1_, 1, 1), 0.1);
    auto s2 = leaky_relu(nn::conv2d(s1, w_b2_, b_b2_, 2, 1), 0.1);
    s2 = leaky_relu(nn::conv2d(s2, w_b2r_, b_b2r_, 1, 1), 0.1);
    auto s3 = leaky_relu(nn::conv2d(s2, w_b3_, b_b3_, 2, 1), 0.1);
    s3 = leaky_relu(nn::conv2d(s3, w_b3r_, b_b3r_, 1, 1), 0.1);
    app.scales = {s0, s1, s2, s3};
    return app;
}

Motion Mafe::motion(const Appearance& app) const {
    if (app.scales.size() != 4) throw PreconditionError("appearance is missing scales");
    int64_t N = app.n;
    auto direction_pair = [&](const VarPtr& feat, const VarPtr& wp, const VarPtr& bp) {
        int64_t H = feat->val.shape[2], W = feat->val.shape[3];
        Tensor coords = coordinate_grid(H, W);
        auto f0 = slice(feat, 0, 0, N);
        auto f1 = slice(feat, 0, N, N);
        auto fwd = nn::window_attention(f0, f1, coords, cfg_.attention_window);
        auto bwd = nn::window_attention(f1, f0, coords, cfg_.attention_window);
        auto m = concat({fwd, bwd}, 0);
        return leaky_relu(nn::conv2d(m, wp, bp, 1, 0), 0.1);
    };
    Motion mot;
    mot.n = N;
    mot.s2 = direction_pair(app.scales[2], w_proj2_, b_proj2_);
    mot.s3 = direction_pair(app.scales[3], w_proj3_, b_proj3_);
    return mot;
}

Prediction Mafe::synthesize(const VarPtr& I0, const VarPtr& I1, const Appearance& app,
                            const Motion& mot) const {
    int64_t N = app.n, H = I0->val.shape[2], W = I0->val.shape[3];
    int64_t H4 = mot.s2->val.shape[2], W4 = mot.s2->val.shape[3];

    auto merge_halves = [&](const VarPtr& x) {
        return concat({slice(x, 0, 0, N), slice(x, 0, N, N)}, 1);
    };
    auto m3u = nn::bilinear_resize(mot.s3, H4, W4);
    auto md = leaky_relu(nn::conv2d(concat({mot.s2, m3u}, 1), w_redm_, b_redm_, 1, 0), 0.1);
    auto ad = leaky_relu(nn::conv2d(app.scales[2], w_reda_, b_reda_, 1, 0), 0.1);
    auto feat = concat({merge_halves(md), merge_halves(ad)}, 1); // [N,4*hc,H4,W4]
    auto up = nn::bilinear_resize(feat, H, W);

    auto h = concat({up, I0, I1}, 1);
    h = leaky_relu(nn::conv2d(h, w_h1_, b_h1_, 1, 1), 0.1);
    h = leaky_relu(nn::conv2d(h, w_h2_, b_h2_, 1, 1), 0.1);
    auto out = nn::conv2d(h, w_out_, b_out_, 1, 1); // [N,6,H,W]

    Prediction p;
    p.flow_t0 = slice(out, 1, 0, 2);
    p.flow_t1 = slice(out, 1, 2, 2);
    p.mask = sigmoid(slice(out, 1, 4, 1));
    auto residual = slice(out, 1, 5, 1);
    auto warped0 = nn::bilinear_warp(I0, p.flow_t0);
    auto warped1 = nn::bilinear_warp(I1, p.flow_t1);
    auto ones = constant(Tensor(p.mask->val.shape, 1.0));
    auto blend = add(mul(p.mask, warped0), mul(sub(ones, p.mask), warped1));
    p.image = clamp01(add(blend, residual));
    return p;
}

VarPtr Mafe::motion_vector(const Motion& mot) const {
    int64_t N = mot.n;
    auto split = [&](const VarPtr& s) {
        auto g = nn::avg_pool_global(s); // [2N,C]
        return std::pair<VarPtr, VarPtr>(slice(g, 0, 0, N), slice(g, 0, N, N));
    };
    auto [f2, b2] = split(mot.s2);
    auto [f3, b3] = split(mot.s3);
    return concat({f2, b2, f3, b3}, 1);
}

VarPtr Mafe::reid_loss(const Appearance& app, const Tensor& emb0, const Tensor& emb1) const {
    int64_t N = app.n, C = cfg_.channels[3];
    if (emb0.ndim() != 2 || emb0.shape[0] != N || emb0.shape[1] != C)
        throw PreconditionError("reid targets must be [N," + std::to_string(C) + "]");
    check_same_shape(emb0, emb1, "reid_loss");
    auto g = nn::l2_normalize_rows(nn::avg_pool_global(app.scales[3]));
    auto a0 = slice(g, 0, 0, N);
    auto a1 = slice(g, 0, N, N);
    return scale(add(mse(a0, constant(emb0)), mse(a1, constant(emb1))), 0.5);
}

std::vector<VarPtr> Mafe::parameters() const {
    std::vector<VarPtr> out;
    for (const auto& [n, v] : params_.items) out.push_back(v);
    return out;
}

store::Checkpoint Mafe::to_checkpoint(uint64_t config_hash, int64_t step) const {
    store::Checkpoint ck;
    ck.config_hash = config_hash;
    ck.step = step;
    for (const auto& [n, v] : params_.items) ck.tensors.emplace_back(n, v->val);
    return ck;
}

void Mafe::load_parameters(const store::Checkpoint& ck) {
    for (auto& [name, v] : params_.items) {
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

Mafe train_mafe(const std::vector<PairBundle>& dataset, const MafeConfig& cfg, int64_t steps,
                uint64_t seed, TrainStats* stats) {
    if (dataset.empty()) throw ConfigError("training set has no frame pairs");
    int64_t H = dataset[0].pair.I0.shape[0], W = dataset[0].pair.I0.shape[1];
    for (const auto& b : dataset)
        if (b.pair.I0.shape[0] != H || b.pair.I0.shape[1] != W)
            throw PreconditionError("all training pairs must share one frame size");

    Mafe model(cfg, seed);
    int64_t C3 = cfg.channels[3];
    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    nn::Adam opt(model.parameters(), ac);
    auto rng = make_rng(seed, "mafe_data");
    int64_t B = std::min<int64_t>(cfg.batch, int64_t(dataset.size()));

    for (int64_t step = 0; step < steps; ++step) {
        Tensor i0({B, 1, H, W}), i1({B, 1, H, W}), igt({B, 1, H, W});
        Tensor pseudo({B, 2, H, W}), mask({B, 1, H, W});
        Tensor e0({B, C3}), e1({B, C3});
        std::vector<int64_t> with_emb;
        for (int64_t i = 0; i < B; ++i) {
            const auto& bundle = dataset[size_t(rng.uniform_int(0, int64_t(dataset.size()) - 1))];
            std::copy(bundle.pair.I0.data.begin(), bundle.pair.I0.data.end(),
                      i0.data.begin() + i * H * W);
            std::copy(bundle.pair.I1.data.begin(), bundle.pair.I1.data.end(),
                      i1.data.begin() + i * H * W);
            std::copy(bundle.pair.IGT.data.begin(), bundle.pair.IGT.data.end(),
                      igt.data.begin() + i * H * W);
            if (bundle.has_flow) {
                std::copy(bundle.pseudo_flow.data.begin(), bundle.pseudo_flow.data.end(),
                          pseudo.data.begin() + i * 2 * H * W);
                std::copy(bundle.flow_mask.data.begin(), bundle.flow_mask.data.end(),
                          mask.data.begin() + i * H * W);
            }
            if (bundle.has_emb) {
                with_emb.push_back(i);
                std::copy(bundle.emb0.data.begin(), bundle.emb0.data.end(),
                          e0.data.begin() + i * C3);
                std::copy(bundle.emb1.data.begin(), bundle.emb1.data.end(),
                          e1.data.begin() + i * C3);
            }
        }

        auto I0 = variable(std::move(i0), false);
        auto I1 = variable(std::move(i1), false);
        auto IGT = variable(std::move(igt), false);
        auto app = model.encode(I0, I1);
        auto mot = model.motion(app);
        auto pred = model.synthesize(I0, I1, app, mot);

        auto l_lap = pyr::laplacian_loss(pred.image, IGT, cfg.pyramid_levels);

        VarPtr l_reid;
        if (int64_t(with_emb.size()) == B) {
            l_reid = model.reid_loss(app, e0, e1);
        } else if (with_emb.empty()) {
            l_reid = ag::scalar(0.0);
        } else {
            // partial targets: mean squared error over the covered rows only
            auto g = nn::l2_normalize_rows(nn::avg_pool_global(app.scales[3]));
            VarPtr acc;
            for (int64_t i : with_emb) {
                Tensor t0({1, C3}), t1({1, C3});
                std::copy(e0.data.begin() + i * C3, e0.data.begin() + (i + 1) * C3,
                          t0.data.begin());
                std::copy(e1.data.begin() + i * C3, e1.data.begin() + (i + 1) * C3,
                          t1.data.begin());
                auto d0 = sub(slice(g, 0, i, 1), constant(std::move(t0)));
                auto d1 = sub(slice(g, 0, B + i, 1), constant(std::move(t1)));
                auto term = add(sum_all(mul(d0, d0)), sum_all(mul(d1, d1)));
                acc = acc ? add(acc, term) : term;
            }
            l_reid = scale(acc, 0.5 / (double(with_emb.size()) * double(C3)));
        }

        auto l_flow = pseudo::flow_loss(pred.flow_t0, pred.flow_t1, pseudo, mask);
        auto loss = pyr::total_loss(l_lap, l_reid, l_flow, cfg.lambda1, cfg.lambda2);

        opt.zero_grad();
        backward(loss);
        opt.step(nn::lr_schedule(cfg.schedule, step, cfg.warmup, steps));
        if (stats) {
            stats->total.push_back(loss->val.data[0]);
            stats->lap.push_back(l_lap->val.data[0]);
            stats->reid.push_back(l_reid->val.data[0]);
            stats->flow.push_back(l_flow->val.data[0]);
        }
    }
    return model;
}

} // namespace mcdm::mafe
