// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mcdm/data.hpp"
#include "mcdm/errors.hpp"
#include "mcdm/mafe.hpp"
#include "mcdm/nn.hpp"
#include "mcdm/pyramid.hpp"
#include "mcdm/rng.hpp"
#include "reference_impls.hpp"
#include "testutil.hpp"

using namespace mcdm;
using namespace mcdm::ag;
using mafe::Mafe;
using mafe::MafeConfig;

namespace {

MafeConfig micro_config() {
    MafeConfig cfg;
    cfg.channels = {8, 16, 32, 64};
    cfg.attention_window = 3;
    cfg.head_channels = 8;
    cfg.pyramid_levels = 3;
    return cfg;
}

VarPtr random_frames(Rng& rng, int64_t N, int64_t H, int64_t W) {
    Tensor t({N, 1, H, W});
    rng.fill_uniform(t, 0.0, 1.0);
    return variable(t);
}

} // namespace

TEST_CASE("coordinate grid examples") {
    auto g2 = mafe::coordinate_grid(2, 2);
    REQUIRE(g2.shape == std::vector<int64_t>{2, 2, 2});
    CHECK(g2.at3(0, 0, 0) == -1.0);
    CHECK(g2.at3(0, 0, 1) == 1.0);
    CHECK(g2.at3(0, 1, 0) == -1.0);
    CHECK(g2.at3(1, 0, 0) == -1.0);
    CHECK(g2.at3(1, 1, 0) == 1.0);

    auto g3 = mafe::coordinate_grid(3, 2);
    CHECK(g3.at3(1, 0, 0) == -1.0);
    CHECK(g3.at3(1, 1, 0) == 0.0);
    CHECK(g3.at3(1, 2, 0) == 1.0);

    auto g28 = mafe::coordinate_grid(28, 28);
    double step = 2.0 / 27.0;
    for (int64_t y = 0; y < 28; ++y)
        for (int64_t x = 0; x < 28; ++x) {
            CHECK(g28.at3(0, y, x) == doctest::Approx(-1.0 + step * double(x)).epsilon(1e-12));
            CHECK(g28.at3(1, y, x) == doctest::Approx(-1.0 + step * double(y)).epsilon(1e-12));
        }

    CHECK_THROWS_AS(mafe::coordinate_grid(1, 4), PreconditionError);
    CHECK_THROWS_AS(mafe::coordinate_grid(4, 1), PreconditionError);
}

TEST_CASE("encoder shapes at full and desk resolution") {
    MafeConfig cfg; // default widths
    Mafe model(cfg, 0);
    auto rng = make_rng(0, "enc_shapes");

    auto app = model.encode(random_frames(rng, 1, 112, 112), random_frames(rng, 1, 112, 112));
    REQUIRE(app.scales.size() == 4);
    CHECK(app.scales[2]->val.shape == std::vector<int64_t>{2, 256, 28, 28});
    CHECK(app.scales[3]->val.shape == std::vector<int64_t>{2, 512, 14, 14});

    Mafe micro(micro_config(), 0);
    auto app32 = micro.encode(random_frames(rng, 2, 32, 32), random_frames(rng, 2, 32, 32));
    CHECK(app32.scales[0]->val.shape == std::vector<int64_t>{4, 8, 16, 16});
    CHECK(app32.scales[1]->val.shape == std::vector<int64_t>{4, 16, 16, 16});
    CHECK(app32.scales[2]->val.shape == std::vector<int64_t>{4, 32, 8, 8});
    CHECK(app32.scales[3]->val.shape == std::vector<int64_t>{4, 64, 4, 4});
}

TEST_CASE("encoder preconditions and shared weights") {
    Mafe model(micro_config(), 3);
    auto rng = make_rng(3, "enc_shared");
    auto I = random_frames(rng, 2, 32, 32);
    auto J = random_frames(rng, 2, 32, 48);
    CHECK_THROWS_AS(model.encode(I, J), PreconditionError);
    CHECK_THROWS_AS(model.encode(random_frames(rng, 1, 20, 20), random_frames(rng, 1, 20, 20)),
                    PreconditionError);

    // identical frames produce bitwise-identical feature halves
    auto app = model.encode(I, I);
    for (const auto& s : app.scales) {
        int64_t half = s->val.numel() / 2;
        for (int64_t i = 0; i < half; ++i) CHECK(s->val.data[i] == s->val.data[half + i]);
    }
}

TEST_CASE("uniform appearance gives zero interior offsets") {
    int64_t C = 6, H = 8, W = 8;
    int win = 3;
    Tensor f(std::vector<int64_t>{1, C, H, W}, 0.7);
    auto fa = variable(f), fb = variable(f);
    auto out = nn::window_attention(fa, fb, mafe::coordinate_grid(H, W), win);
    REQUIRE(out->val.shape == std::vector<int64_t>{1, 2 + C, H, W});
    for (int64_t y = 1; y < H - 1; ++y)
        for (int64_t x = 1; x < W - 1; ++x) {
            CHECK(std::abs(out->val.at4(0, 0, y, x)) < 1e-12);
            CHECK(std::abs(out->val.at4(0, 1, y, x)) < 1e-12);
        }
}

TEST_CASE("one-cell shift moves the expected offset one cell along x") {
    // distinct one-hot feature per location; frame b is frame a shifted by one
    // cell along x, so the only matching neighbour sits at +1 cell
    int64_t H = 8, W = 8, C = H * W;
    double kappa = 80.0;
    Tensor a({1, C, H, W}), b({1, C, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) a.at4(0, y * W + x, y, x) = kappa;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            int64_t sx = std::max<int64_t>(x - 1, 0);
            for (int64_t c = 0; c < C; ++c) b.at4(0, c, y, x) = a.at4(0, c, y, sx);
        }
    auto out = nn::window_attention(variable(a), variable(b), mafe::coordinate_grid(H, W), 7);
    double cell = 2.0 / double(W - 1);
    for (int64_t y = 3; y < 5; ++y)
        for (int64_t x = 3; x < 5; ++x) {
            CHECK(out->val.at4(0, 0, y, x) == doctest::Approx(cell).epsilon(0.02));
            CHECK(std::abs(out->val.at4(0, 1, y, x)) < 0.01);
        }
}

TEST_CASE("swapping the frames swaps the motion directions exactly") {
    Mafe model(micro_config(), 5);
    auto rng = make_rng(5, "mot_swap");
    auto I0 = random_frames(rng, 2, 32, 32);
    auto I1 = random_frames(rng, 2, 32, 32);
    auto m_fwd = model.motion(model.encode(I0, I1));
    auto m_swp = model.motion(model.encode(I1, I0));
    int64_t half2 = m_fwd.s2->val.numel() / 2, half3 = m_fwd.s3->val.numel() / 2;
    for (int64_t i = 0; i < half2; ++i) {
        CHECK(m_fwd.s2->val.data[i] == m_swp.s2->val.data[half2 + i]);
        CHECK(m_fwd.s2->val.data[half2 + i] == m_swp.s2->val.data[i]);
    }
    for (int64_t i = 0; i < half3; ++i) {
        CHECK(m_fwd.s3->val.data[i] == m_swp.s3->val.data[half3 + i]);
        CHECK(m_fwd.s3->val.data[half3 + i] == m_swp.s3->val.data[i]);
    }
}

TEST_CASE("untrained head predicts the frame average") {
    Mafe model(micro_config(), 7);
    auto rng = make_rng(7, "zero_head");
    auto I0 = random_frames(rng, 2, 32, 32);
    auto I1 = random_frames(rng, 2, 32, 32);
    auto app = model.encode(I0, I1);
    auto pred = model.synthesize(I0, I1, app, model.motion(app));

    REQUIRE(pred.image->val.shape == std::vector<int64_t>{2, 1, 32, 32});
    REQUIRE(pred.flow_t0->val.shape == std::vector<int64_t>{2, 2, 32, 32});
    REQUIRE(pred.flow_t1->val.shape == std::vector<int64_t>{2, 2, 32, 32});
    REQUIRE(pred.mask->val.shape == std::vector<int64_t>{2, 1, 32, 32});
    for (size_t i = 0; i < pred.image->val.data.size(); ++i) {
        double want = 0.5 * (I0->val.data[i] + I1->val.data[i]);
        CHECK(pred.image->val.data[i] == doctest::Approx(want).epsilon(1e-15));
    }
    for (double v : pred.flow_t0->val.data) CHECK(v == 0.0);
    for (double v : pred.flow_t1->val.data) CHECK(v == 0.0);
    for (double v : pred.mask->val.data) CHECK(v == 0.5);
}

TEST_CASE("oracle flows on a two-pixel shift reproduce the shifted middle") {
    // I1 = I0 shifted by (2,0): with flows (-1,0)/(+1,0) and a 0.5 blend the
    // composition must land on I0 shifted by (1,0) away from the borders
    auto rng = make_rng(9, "mid_shift");
    int64_t H = 16, W = 16;
    Tensor i0({1, 1, H, W});
    rng.fill_uniform(i0, 0.0, 1.0);
    Tensor i1({1, 1, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            i1.at4(0, 0, y, x) = i0.at4(0, 0, y, std::max<int64_t>(x - 2, 0));

    Tensor f0({1, 2, H, W}), f1({1, 2, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            f0.at4(0, 0, y, x) = -1.0;
            f1.at4(0, 0, y, x) = 1.0;
        }
    auto w0 = nn::bilinear_warp(variable(i0), variable(f0));
    auto w1 = nn::bilinear_warp(variable(i1), variable(f1));
    auto mid = clamp01(scale(add(w0, w1), 0.5));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 3; x < W - 3; ++x)
            CHECK(mid->val.at4(0, 0, y, x) ==
                  doctest::Approx(i0.at4(0, 0, y, x - 1)).epsilon(1e-6));
}

TEST_CASE("motion vector layout and dimensions") {
    MafeConfig def;
    CHECK(Mafe(def, 0).motion_dim() == 1536);

    auto cfg = micro_config();
    Mafe model(cfg, 11);
    CHECK(model.motion_dim() == 2 * 32 + 2 * 64);

    // constant value per (direction, channel) surfaces unchanged, in order:
    // scale-2 forward, scale-2 backward, scale-3 forward, scale-3 backward
    int64_t N = 2, C2 = 32, C3 = 64;
    Tensor s2({2 * N, C2, 8, 8}), s3({2 * N, C3, 4, 4});
    for (int64_t r = 0; r < 2 * N; ++r)
        for (int64_t c = 0; c < C2; ++c)
            for (int64_t i = 0; i < 64; ++i) s2.data[(r * C2 + c) * 64 + i] = double(r * 100 + c);
    for (int64_t r = 0; r < 2 * N; ++r)
        for (int64_t c = 0; c < C3; ++c)
            for (int64_t i = 0; i < 16; ++i)
                s3.data[(r * C3 + c) * 16 + i] = double(r * 1000 + c) * 0.5;
    mafe::Motion mot{variable(s2), variable(s3), N};
    auto v = model.motion_vector(mot);
    REQUIRE(v->val.shape == std::vector<int64_t>{N, 2 * C2 + 2 * C3});
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C2; ++c) {
            CHECK(v->val.at2(n, c) == double(n * 100 + c));
            CHECK(v->val.at2(n, C2 + c) == double((N + n) * 100 + c));
        }
        for (int64_t c = 0; c < C3; ++c) {
            CHECK(v->val.at2(n, 2 * C2 + c) == double(n * 1000 + c) * 0.5);
            CHECK(v->val.at2(n, 2 * C2 + C3 + c) == double((N + n) * 1000 + c) * 0.5);
        }
    }

    mafe::Motion zero{variable(Tensor({2, 32, 8, 8})), variable(Tensor({2, 64, 4, 4})), 1};
    auto zv = model.motion_vector(zero);
    for (double x : zv->val.data) CHECK(x == 0.0);
}

TEST_CASE("reid loss examples and loop reference") {
    auto cfg = micro_config();
    Mafe model(cfg, 13);
    auto rng = make_rng(13, "reid_loss");
    auto I0 = random_frames(rng, 2, 32, 32);
    auto I1 = random_frames(rng, 2, 32, 32);
    auto app = model.encode(I0, I1);
    int64_t N = 2, C = cfg.channels[3];

    // read back the pooled normalized features to use as exact targets
    auto pooled = nn::l2_normalize_rows(nn::avg_pool_global(app.scales[3]));
    Tensor e0({N, C}), e1({N, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            e0.at2(n, c) = pooled->val.at2(n, c);
            e1.at2(n, c) = pooled->val.at2(N + n, c);
        }
    CHECK(model.reid_loss(app, e0, e1)->val.data[0] == doctest::Approx(0.0).epsilon(1e-15));

    // shifting every coordinate by delta raises the loss to exactly delta^2
    double delta = 0.13;
    Tensor e0d = e0, e1d = e1;
    for (auto& v : e0d.data) v += delta;
    for (auto& v : e1d.data) v += delta;
    CHECK(model.reid_loss(app, e0d, e1d)->val.data[0] ==
          doctest::Approx(delta * delta).epsilon(1e-12));

    // random targets against a loop reference
    Tensor r0({N, C}), r1({N, C});
    rng.fill_normal(r0);
    rng.fill_normal(r1);
    double want = 0;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            double d0 = pooled->val.at2(n, c) - r0.at2(n, c);
            double d1 = pooled->val.at2(N + n, c) - r1.at2(n, c);
            want += d0 * d0 + d1 * d1;
        }
    want = 0.5 * want / double(N * C);
    CHECK(model.reid_loss(app, r0, r1)->val.data[0] == doctest::Approx(want).epsilon(1e-10));

    Tensor bad({N, C + 1});
    CHECK_THROWS_AS(model.reid_loss(app, bad, bad), PreconditionError);
}

TEST_CASE("reid loss gradcheck through the pooled features") {
    int64_t N = 1, C = 6;
    auto rng = make_rng(17, "reid_grad");
    Tensor s3({2 * N, C, 3, 3});
    rng.fill_normal(s3);
    Tensor e0({N, C}), e1({N, C});
    rng.fill_normal(e0);
    rng.fill_normal(e1);

    auto build = [&](const std::vector<VarPtr>& in) {
        auto g = nn::l2_normalize_rows(nn::avg_pool_global(in[0]));
        auto a0 = slice(g, 0, 0, N);
        auto a1 = slice(g, 0, N, N);
        return scale(add(mse(a0, constant(e0)), mse(a1, constant(e1))), 0.5);
    };
    auto res = testutil::grad_check({variable(s3, true)}, build);
    CHECK(res.max_rel < 1e-3);
}

TEST_CASE("resolution covariance doubles feature maps but not the vector dim") {
    auto cfg = micro_config();
    Mafe model(cfg, 19);
    auto rng = make_rng(19, "res_cov");
    auto a32 = model.encode(random_frames(rng, 1, 32, 32), random_frames(rng, 1, 32, 32));
    auto a64 = model.encode(random_frames(rng, 1, 64, 64), random_frames(rng, 1, 64, 64));
    for (size_t s = 0; s < 4; ++s) {
        CHECK(a64.scales[s]->val.shape[2] == 2 * a32.scales[s]->val.shape[2]);
        CHECK(a64.scales[s]->val.shape[3] == 2 * a32.scales[s]->val.shape[3]);
        CHECK(a64.scales[s]->val.shape[1] == a32.scales[s]->val.shape[1]);
    }
    auto v32 = model.motion_vector(model.motion(a32));
    auto v64 = model.motion_vector(model.motion(a64));
    CHECK(v32->val.shape == v64->val.shape);
}

TEST_CASE("checkpoint round trip restores identical predictions") {
    auto cfg = micro_config();
    Mafe a(cfg, 21), b(cfg, 22);
    auto rng = make_rng(21, "mafe_ck");
    auto I0 = random_frames(rng, 1, 32, 32);
    auto I1 = random_frames(rng, 1, 32, 32);

    auto ck = a.to_checkpoint(99, 5);
    CHECK(ck.config_hash == 99);
    b.load_parameters(ck);
    auto appa = a.encode(I0, I1);
    auto appb = b.encode(I0, I1);
    auto pa = a.synthesize(I0, I1, appa, a.motion(appa));
    auto pb = b.synthesize(I0, I1, appb, b.motion(appb));
    CHECK(testutil::max_abs_diff(pa.image->val, pb.image->val) == 0.0);

    auto bad = ck;
    bad.tensors.pop_back();
    CHECK_THROWS_AS(b.load_parameters(bad), IoError);
}

TEST_CASE("config validation") {
    auto cfg = micro_config();
    cfg.attention_window = 4;
    CHECK_THROWS_AS(Mafe(cfg, 0), ConfigError);
    cfg.attention_window = 1;
    CHECK_THROWS_AS(Mafe(cfg, 0), ConfigError);
    cfg = micro_config();
    cfg.channels = {8, 16, 32};
    CHECK_THROWS_AS(Mafe(cfg, 0), ConfigError);
    cfg = micro_config();
    cfg.head_channels = 0;
    CHECK_THROWS_AS(Mafe(cfg, 0), ConfigError);
}

namespace {

std::vector<mafe::PairBundle> phantom_bundles(int64_t C3, uint64_t seed, int count) {
    std::vector<mafe::PairBundle> out;
    auto erng = make_rng(seed, "bundle_emb");
    for (int k = 0; k < count; ++k) {
        data::PhantomSpec spec;
        spec.height = spec.width = 32;
        spec.base_radius = 8.0;
        spec.pulse_amplitude = 0.3;
        spec.period = 8;
        spec.seed = seed + uint64_t(k);
        auto clip = data::generate_phantom(spec, 9).first;
        clip.id = "pb" + std::to_string(k);

        mafe::PairBundle b;
        b.pair = data::select_frame_pair(clip, data::PairStrategy::max_diff, 8);
        auto flow = data::phantom_flow_between(spec, b.pair.i0, b.pair.i1);
        b.pseudo_flow = Tensor({2, 32, 32});
        std::copy(flow.u.data.begin(), flow.u.data.end(), b.pseudo_flow.data.begin());
        std::copy(flow.v.data.begin(), flow.v.data.end(), b.pseudo_flow.data.begin() + 32 * 32);
        b.flow_mask = Tensor({1, 32, 32});
        std::copy(flow.mask.data.begin(), flow.mask.data.end(), b.flow_mask.data.begin());
        b.has_flow = true;

        Tensor e({2, C3});
        erng.fill_normal(e);
        for (int64_t r = 0; r < 2; ++r) {
            double s = 0;
            for (int64_t c = 0; c < C3; ++c) s += e.at2(r, c) * e.at2(r, c);
            s = std::sqrt(s);
            for (int64_t c = 0; c < C3; ++c) e.at2(r, c) /= s;
        }
        b.emb0 = Tensor({C3});
        b.emb1 = Tensor({C3});
        std::copy(e.data.begin(), e.data.begin() + C3, b.emb0.data.begin());
        std::copy(e.data.begin() + C3, e.data.end(), b.emb1.data.begin());
        b.has_emb = true;
        out.push_back(std::move(b));
    }
    return out;
}

} // namespace

TEST_CASE("training is deterministic for a fixed seed") {
    auto cfg = micro_config();
    cfg.batch = 2;
    cfg.lr = 1e-3;
    cfg.warmup = 2;
    auto bundles = phantom_bundles(cfg.channels[3], 31, 2);
    mafe::TrainStats s1, s2;
    auto m1 = mafe::train_mafe(bundles, cfg, 5, 77, &s1);
    auto m2 = mafe::train_mafe(bundles, cfg, 5, 77, &s2);
    REQUIRE(s1.total.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
        CHECK(s1.total[i] == s2.total[i]);
        CHECK(s1.lap[i] == s2.lap[i]);
        CHECK(s1.reid[i] == s2.reid[i]);
        CHECK(s1.flow[i] == s2.flow[i]);
    }
    auto c1 = m1.to_checkpoint(0, 0);
    auto c2 = m2.to_checkpoint(0, 0);
    for (size_t t = 0; t < c1.tensors.size(); ++t)
        CHECK(testutil::max_abs_diff(c1.tensors[t].second, c2.tensors[t].second) == 0.0);

    CHECK_THROWS_AS(mafe::train_mafe({}, cfg, 1, 0, nullptr), ConfigError);
}

TEST_CASE("overfitting one pair cuts the loss below a quarter") {
    auto cfg = micro_config();
    cfg.batch = 1;
    cfg.lr = 2e-3;
    cfg.warmup = 20;
    cfg.schedule = "cosine";
    auto bundles = phantom_bundles(cfg.channels[3], 41, 1);
    mafe::TrainStats stats;
    mafe::train_mafe(bundles, cfg, 500, 5, &stats);
    REQUIRE(stats.total.size() == 500);
    double initial = stats.total.front();
    double last = stats.total.back();
    INFO("initial=", initial, " final=", last);
    CHECK(last < 0.25 * initial);
}
