// SPDX-License-Identifier: Apache-2.0
#include "mcdm/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "mcdm/errors.hpp"
#include "mcdm/rng.hpp"

namespace mcdm::pseudo {

using namespace ag;

// ---- contrastive ----

VarPtr contrastive_loss(const VarPtr& anchors, const VarPtr& positives, const VarPtr& negatives,
                        double tau) {
    if (tau <= 0) throw PreconditionError("contrastive temperature must be positive");
    if (anchors->val.ndim() != 2 || !anchors->val.same_shape(positives->val))
        throw PreconditionError("contrastive anchors/positives must be matching [A,D]");
    if (anchors->val.shape[0] < 1) throw PreconditionError("contrastive needs >= 1 anchor");
    if (negatives->val.ndim() != 2 || negatives->val.shape[0] < 1)
        throw PreconditionError("contrastive needs a non-empty negative batch");
    if (negatives->val.shape[1] != anchors->val.shape[1])
        throw PreconditionError("contrastive embedding dims differ");
    int64_t A = anchors->val.shape[0], D = anchors->val.shape[1];

    auto an = nn::l2_normalize_rows(anchors);
    auto pn = nn::l2_normalize_rows(positives);
    auto ng = nn::l2_normalize_rows(negatives);
    auto ones = constant(Tensor({D, 1}, 1.0));
    auto pos_logit = matmul(mul(an, pn), ones);            // [A,1] cosine per row
    auto neg_logits = matmul(an, permute(ng, {1, 0}));     // [A,M]
    auto logits = scale(concat({pos_logit, neg_logits}, 1), 1.0 / tau);
    auto sm = softmax_lastdim(logits);
    auto p0 = slice(sm, 1, 0, 1); // probability of the positive
    (void)A;
    return neg(mean_all(log_v(p0)));
}

// ---- embedder ----

ReidEmbedder::ReidEmbedder(const ReidConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.channels.size() != 2) throw ConfigError("reid embedder expects 2 hidden widths");
    auto rng = make_rng(seed, "reid_init");
    int64_t c0 = cfg.channels[0], c1 = cfg.channels[1], D = cfg.embed_dim;
    w1_ = params_.add("conv1.w", nn::fanin_normal(rng, {c0, 1, 3, 3}, 9));
    b1_ = params_.add("conv1.b", Tensor({c0}));
    w2_ = params_.add("conv2.w", nn::fanin_normal(rng, {c1, c0, 3, 3}, c0 * 9));
    b2_ = params_.add("conv2.b", Tensor({c1}));
    w3_ = params_.add("conv3.w", nn::fanin_normal(rng, {D, c1, 3, 3}, c1 * 9));
    b3_ = params_.add("conv3.b", Tensor({D}));
}

VarPtr ReidEmbedder::embed(const VarPtr& frames) const {
    if (frames->val.ndim() != 4 || frames->val.shape[1] != 1)
        throw PreconditionError("reid embedder expects [N,1,H,W]");
    auto h = leaky_relu(nn::conv2d(frames, w1_, b1_, 2, 1), 0.1);
    h = leaky_relu(nn::conv2d(h, w2_, b2_, 2, 1), 0.1);
    h = nn::conv2d(h, w3_, b3_, 2, 1);
    return nn::l2_normalize_rows(nn::avg_pool_global(h));
}

std::vector<VarPtr> ReidEmbedder::parameters() const {
    std::vector<VarPtr> out;
    for (const auto& [n, v] : params_.items) out.push_back(v);
    return out;
}

store::Checkpoint ReidEmbedder::to_checkpoint(uint64_t config_hash, int64_t step) const {
    store::Checkpoint ck;
    ck.config_hash = config_hash;
    ck.step = step;
    for (const auto& [n, v] : params_.items) ck.tensors.emplace_back(n, v->val);
    return ck;
}

void ReidEmbedder::load_parameters(const store::Checkpoint& ck) {
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

// ---- reid training ----

ReidResult train_reid(const std::vector<data::VideoClip>& clips, const ReidConfig& cfg,
                      uint64_t seed) {
    if (clips.size() < 2)
        throw ConfigError("re-identification training needs at least 2 videos to form negatives");
    for (const auto& c : clips)
        if (c.T < 2) throw PreconditionError("clip '" + c.id + "' has fewer than 2 frames");

    ReidEmbedder model(cfg, seed);
    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    nn::Adam opt(model.parameters(), ac);
    auto rng = make_rng(seed, "reid_sample");

    int64_t B = std::min<int64_t>(cfg.batch_videos, int64_t(clips.size()));
    if (B < 2) B = 2;
    std::vector<double> losses;
    std::vector<int64_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);

    for (int64_t step = 0; step < cfg.steps; ++step) {
        // pick B distinct videos
        for (int64_t i = 0; i < B; ++i) {
            int64_t j = rng.uniform_int(i, int64_t(order.size()) - 1);
            std::swap(order[i], order[j]);
        }
        int64_t H = clips[order[0]].H, W = clips[order[0]].W;
        Tensor batch({2 * B, 1, H, W});
        for (int64_t i = 0; i < B; ++i) {
            const auto& clip = clips[order[i]];
            int64_t a = rng.uniform_int(0, clip.T - 1);
            int64_t p = rng.uniform_int(0, clip.T - 2);
            if (p >= a) ++p;
            std::copy(clip.frames.begin() + a * H * W, clip.frames.begin() + (a + 1) * H * W,
                      batch.data.begin() + i * H * W);
            std::copy(clip.frames.begin() + p * H * W, clip.frames.begin() + (p + 1) * H * W,
                      batch.data.begin() + (B + i) * H * W);
        }
        auto emb = model.embed(variable(batch, false)); // [2B,D]
        VarPtr loss;
        for (int64_t i = 0; i < B; ++i) {
            auto anchor = slice(emb, 0, i, 1);
            auto positive = slice(emb, 0, B + i, 1);
            std::vector<VarPtr> negs;
            for (int64_t j = 0; j < B; ++j)
                if (j != i) negs.push_back(slice(emb, 0, B + j, 1));
            auto term = contrastive_loss(anchor, positive, concat(negs, 0), cfg.tau);
            loss = loss ? add(loss, term) : term;
        }
        loss = scale(loss, 1.0 / double(B));
        opt.zero_grad();
        backward(loss);
        opt.step(nn::lr_schedule("constant", step, 0, cfg.steps));
        losses.push_back(loss->val.data[0]);
    }

    // embed every frame of every clip
    std::vector<store::FeatureRecord> records;
    for (const auto& clip : clips) {
        int64_t HW = clip.H * clip.W;
        const int64_t chunk = 16;
        for (int64_t t0 = 0; t0 < clip.T; t0 += chunk) {
            int64_t n = std::min(chunk, clip.T - t0);
            Tensor frames({n, 1, clip.H, clip.W});
            std::copy(clip.frames.begin() + t0 * HW, clip.frames.begin() + (t0 + n) * HW,
                      frames.data.begin());
            auto emb = model.embed(variable(std::move(frames), false));
            for (int64_t i = 0; i < n; ++i) {
                store::FeatureRecord rec;
                rec.id = clip.id + "#" + std::to_string(t0 + i);
                rec.values.resize(cfg.embed_dim);
                for (int64_t d = 0; d < cfg.embed_dim; ++d)
                    rec.values[d] = float(emb->val.data[i * cfg.embed_dim + d]);
                records.push_back(std::move(rec));
            }
        }
    }
    return ReidResult{std::move(model), std::move(records), std::move(losses)};
}

// ---- block matching ----

data::FlowField block_match_flow(const Tensor& I0, const Tensor& I1, int patch, int search,
                                 int stride) {
    check_same_shape(I0, I1, "block_match_flow");
    if (I0.ndim() != 2) throw PreconditionError("block_match_flow expects [H,W] frames");
    if (patch < 1 || patch % 2 == 0) throw PreconditionError("patch must be odd and positive");
    if (search < 1) throw PreconditionError("search must be >= 1");
    if (stride < 1) throw PreconditionError("stride must be >= 1");
    int64_t H = I0.shape[0], W = I0.shape[1];
    if (patch > H || patch > W)
        throw PreconditionError("patch " + std::to_string(patch) + " larger than frame " +
                                std::to_string(H) + "x" + std::to_string(W));

    auto clampi = [](int64_t i, int64_t n) { return std::min(std::max(i, int64_t(0)), n - 1); };
    int r = patch / 2;
    int64_t ny = (H + stride - 1) / stride, nx = (W + stride - 1) / stride;
    std::vector<double> gu(ny * nx), gv(ny * nx);
    for (int64_t gy = 0; gy < ny; ++gy)
        for (int64_t gx = 0; gx < nx; ++gx) {
            int64_t y = gy * stride, x = gx * stride;
            double best_sad = 1e300;
            int64_t best_d2 = 0;
            int best_dv = 0, best_du = 0;
            for (int dv = -search; dv <= search; ++dv)
                for (int du = -search; du <= search; ++du) {
                    double sad = 0;
                    for (int py = -r; py <= r; ++py)
                        for (int px = -r; px <= r; ++px) {
                            double a = I0.data[clampi(y + py, H) * W + clampi(x + px, W)];
                            double b =
                                I1.data[clampi(y + dv + py, H) * W + clampi(x + du + px, W)];
                            sad += std::abs(a - b);
                        }
                    int64_t d2 = int64_t(du) * du + int64_t(dv) * dv;
                    bool better =
                        sad < best_sad ||
                        (sad == best_sad &&
                         (d2 < best_d2 ||
                          (d2 == best_d2 && (dv < best_dv || (dv == best_dv && du < best_du)))));
                    if (better) {
                        best_sad = sad;
                        best_d2 = d2;
                        best_dv = dv;
                        best_du = du;
                    }
                }
            gu[gy * nx + gx] = best_du;
            gv[gy * nx + gx] = best_dv;
        }

    data::FlowField f{Tensor({H, W}), Tensor({H, W}), Tensor({H, W}, 1.0)};
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            int64_t gy = std::min((y + (stride - 1) / 2) / stride, ny - 1);
            int64_t gx = std::min((x + (stride - 1) / 2) / stride, nx - 1);
            f.u.at2(y, x) = gu[gy * nx + gx];
            f.v.at2(y, x) = gv[gy * nx + gx];
        }
    return f;
}

data::FlowField resample_flow(const data::FlowField& f, int64_t H2, int64_t W2) {
    if (H2 < 2 || W2 < 2) throw PreconditionError("resample_flow target must be >= 2x2");
    int64_t H = f.u.shape[0], W = f.u.shape[1];
    auto resize_plane = [&](const Tensor& p, double scale_val) {
        auto v = variable(Tensor({1, 1, H, W}, p.data), false);
        auto r = nn::bilinear_resize(v, H2, W2);
        Tensor out({H2, W2});
        for (int64_t i = 0; i < H2 * W2; ++i) out.data[i] = r->val.data[i] * scale_val;
        return out;
    };
    data::FlowField out;
    out.u = resize_plane(f.u, double(W2) / double(W));
    out.v = resize_plane(f.v, double(H2) / double(H));
    Tensor m = resize_plane(f.mask, 1.0);
    out.mask = Tensor({H2, W2});
    for (int64_t i = 0; i < H2 * W2; ++i) out.mask.data[i] = m.data[i] > 0.5 ? 1.0 : 0.0;
    return out;
}

// ---- flow loss ----

VarPtr flow_loss(const VarPtr& pred_t0, const VarPtr& pred_t1, const Tensor& pseudo,
                 const Tensor& mask) {
    if (pred_t0->val.ndim() != 4 || pred_t0->val.shape[1] != 2)
        throw PreconditionError("flow_loss predictions must be [N,2,H,W]");
    check_same_shape(pred_t0->val, pred_t1->val, "flow_loss");
    check_same_shape(pred_t0->val, pseudo, "flow_loss pseudo");
    if (mask.ndim() != 4 || mask.shape[1] != 1 || mask.shape[0] != pseudo.shape[0] ||
        mask.shape[2] != pseudo.shape[2] || mask.shape[3] != pseudo.shape[3])
        throw PreconditionError("flow_loss mask must be [N,1,H,W]");

    double count = 0;
    for (double v : mask.data) count += v;
    if (count == 0) {
        std::cerr << "warning: flow loss mask excludes every pixel; returning 0\n";
        return ag::scalar(0.0);
    }

    Tensor t0(pseudo.shape), t1(pseudo.shape);
    for (size_t i = 0; i < pseudo.data.size(); ++i) {
        t0.data[i] = -0.5 * pseudo.data[i];
        t1.data[i] = 0.5 * pseudo.data[i];
    }
    int64_t N = pseudo.shape[0], HW = pseudo.shape[2] * pseudo.shape[3];
    Tensor m2({N, 2, pseudo.shape[2], pseudo.shape[3]});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < 2; ++c)
            std::copy(mask.data.begin() + n * HW, mask.data.begin() + (n + 1) * HW,
                      m2.data.begin() + (n * 2 + c) * HW);

    auto mv = constant(std::move(m2));
    auto d0 = sub(pred_t0, constant(std::move(t0)));
    auto d1 = sub(pred_t1, constant(std::move(t1)));
    auto sq_sum = add(sum_all(mul(mv, mul(d0, d0))), sum_all(mul(mv, mul(d1, d1))));
    return scale(sq_sum, 1.0 / (4.0 * count));
}

} // namespace mcdm::pseudo
