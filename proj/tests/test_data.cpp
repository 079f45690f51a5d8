// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mcdm/data.hpp"
#include "mcdm/errors.hpp"
#include "mcdm/store.hpp"

using namespace mcdm;
using namespace mcdm::data;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
    fs::path path;
    TmpDir(const char* tag) {
        path = fs::temp_directory_path() / (std::string("mcdm_data_") + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string root() const { return path.string(); }
};

store::VideoU8 quantize(const VideoClip& clip) {
    store::VideoU8 v;
    v.fps = float(clip.fps);
    v.T = clip.T;
    v.H = clip.H;
    v.W = clip.W;
    v.C = 1;
    v.data.resize(clip.frames.size());
    for (size_t i = 0; i < clip.frames.size(); ++i)
        v.data[i] = uint8_t(std::lround(clip.frames[i] * 255.0));
    return v;
}

PhantomSpec small_spec(uint64_t seed) {
    PhantomSpec s;
    s.base_radius = 8;
    s.period = 16;
    s.height = 32;
    s.width = 32;
    s.seed = seed;
    return s;
}

void write_manifest(const std::string& root, const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ofstream f(root + "/manifest.txt");
    for (const auto& [id, split] : rows) f << id << "," << split << "\n";
}

} // namespace

TEST_CASE("manifest filtering and grayscale collapse") {
    TmpDir dir("load");
    std::vector<std::pair<std::string, std::string>> rows;
    for (int i = 0; i < 3; ++i) {
        auto [clip, flows] = generate_phantom(small_spec(i), 16);
        clip.id = "train_" + std::to_string(i);
        store::write_video(dir.root() + "/" + clip.id + ".mcvr", quantize(clip));
        rows.emplace_back(clip.id, "train");
    }
    // one val clip stored as 3 identical-ish channels
    store::VideoU8 v3;
    v3.T = 4;
    v3.H = 8;
    v3.W = 8;
    v3.C = 3;
    v3.data.resize(4 * 3 * 64);
    for (int64_t t = 0; t < 4; ++t)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t p = 0; p < 64; ++p) v3.data[(t * 3 + c) * 64 + p] = uint8_t(10 * (c + 1));
    store::write_video(dir.root() + "/valclip.mcvr", v3);
    rows.emplace_back("valclip", "val");
    write_manifest(dir.root(), rows);

    auto train = load_video_dataset(dir.root(), "train");
    CHECK(train.size() == 3);
    auto val = load_video_dataset(dir.root(), "val");
    REQUIRE(val.size() == 1);
    CHECK(val[0].T == 4);
    // channels 10,20,30 average to 20
    CHECK(val[0].px(0, 0, 0) == doctest::Approx(20.0 / 255.0).epsilon(1e-12));
    for (double x : val[0].frames) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
        CHECK(std::isfinite(x));
    }
}

TEST_CASE("missing manifest and empty split") {
    TmpDir dir("errs");
    CHECK_THROWS_AS(load_video_dataset(dir.root(), "train"), ConfigError);

    write_manifest(dir.root(), {{"ghost", "train"}});
    // listed file absent: skipped with warning, split drains empty
    CHECK_THROWS_AS(load_video_dataset(dir.root(), "train"), ConfigError);
    CHECK_THROWS_AS(load_video_dataset(dir.root(), "launch"), ConfigError);
}

TEST_CASE("short clips are skipped with a warning") {
    TmpDir dir("short");
    store::VideoU8 v;
    v.T = 2;
    v.H = 8;
    v.W = 8;
    v.C = 1;
    v.data.assign(2 * 64, 100);
    store::write_video(dir.root() + "/tiny.mcvr", v);
    auto [clip, flows] = generate_phantom(small_spec(5), 16);
    clip.id = "ok";
    store::write_video(dir.root() + "/ok.mcvr", quantize(clip));
    write_manifest(dir.root(), {{"tiny", "train"}, {"ok", "train"}});
    auto got = load_video_dataset(dir.root(), "train");
    REQUIRE(got.size() == 1);
    CHECK(got[0].id == "ok");
}

TEST_CASE("phantom determinism and static case") {
    auto spec = small_spec(7);
    auto [c1, f1] = generate_phantom(spec, 20);
    auto [c2, f2] = generate_phantom(spec, 20);
    CHECK(c1.frames == c2.frames);
    REQUIRE(f1.size() == f2.size());
    for (size_t i = 0; i < f1.size(); ++i) {
        CHECK(f1[i].u.data == f2[i].u.data);
        CHECK(f1[i].v.data == f2[i].v.data);
    }

    auto stat = spec;
    stat.pulse_amplitude = 0.0;
    stat.speckle_sigma = 0.0;
    auto [cs, fls] = generate_phantom(stat, 16);
    for (int64_t t = 1; t < cs.T; ++t)
        for (int64_t p = 0; p < cs.H * cs.W; ++p)
            CHECK(cs.frames[t * cs.H * cs.W + p] == cs.frames[p]);
    for (const auto& f : fls) {
        for (double x : f.u.data) CHECK(x == 0.0);
        for (double x : f.v.data) CHECK(x == 0.0);
    }
}

TEST_CASE("phantom dataset round trip within quantization") {
    TmpDir dir("round");
    std::vector<std::pair<std::string, std::string>> rows;
    for (int i = 0; i < 8; ++i) {
        auto spec = small_spec(100 + i);
        auto [clip, flows] = generate_phantom(spec, 32);
        clip.id = "ph" + std::to_string(i);
        store::write_video(dir.root() + "/" + clip.id + ".mcvr", quantize(clip));
        rows.emplace_back(clip.id, "train");
    }
    write_manifest(dir.root(), rows);
    auto clips = load_video_dataset(dir.root(), "train");
    REQUIRE(clips.size() == 8);
    for (const auto& c : clips) {
        CHECK(c.T == 32);
        CHECK(c.H == 32);
        CHECK(c.W == 32);
    }
    auto [orig, flows] = generate_phantom(small_spec(100), 32);
    const auto& re = clips[0];
    double worst = 0;
    for (size_t i = 0; i < orig.frames.size(); ++i)
        worst = std::max(worst, std::abs(orig.frames[i] - re.frames[i]));
    CHECK(worst <= 1.0 / 255.0);
}

TEST_CASE("phantom flow magnitude bound") {
    PhantomSpec spec;
    spec.base_radius = 10;
    spec.pulse_amplitude = 0.2;
    spec.height = 64;
    spec.width = 64;
    for (int64_t period : {4, 8, 16}) {
        spec.period = period;
        auto [clip, flows] = generate_phantom(spec, period * 2);
        double bound = 2.0 * 0.2 * 10.0 * M_PI / double(period) + 1.0;
        double worst = 0;
        for (const auto& f : flows) {
            for (double x : f.u.data) worst = std::max(worst, std::abs(x));
            for (double x : f.v.data) worst = std::max(worst, std::abs(x));
        }
        CHECK(worst <= bound);
        CHECK(worst > 0.0);
    }
}

TEST_CASE("pairwise phantom flow matches the analytic scaling field") {
    auto spec = small_spec(9);
    auto f = phantom_flow_between(spec, 0, 8);
    auto radius = [&](int64_t t) {
        return spec.base_radius *
               (1.0 + spec.pulse_amplitude * std::sin(2.0 * M_PI * t / double(spec.period)));
    };
    double s = radius(8) / radius(0) - 1.0;
    double cx = double(spec.width - 1) / 2.0, cy = double(spec.height - 1) / 2.0;
    bool any = false;
    for (int64_t y = 0; y < spec.height; ++y)
        for (int64_t x = 0; x < spec.width; ++x)
            if (f.mask.at2(y, x) == 1.0) {
                any = true;
                CHECK(f.u.at2(y, x) == doctest::Approx((double(x) - cx) * s).epsilon(1e-12));
                CHECK(f.v.at2(y, x) == doctest::Approx((double(y) - cy) * s).epsilon(1e-12));
            } else {
                CHECK(f.u.at2(y, x) == 0.0);
            }
    CHECK(any);
}

TEST_CASE("select_frame_pair strategies and errors") {
    auto spec = small_spec(11);
    auto [clip, flows] = generate_phantom(spec, 32);
    clip.id = "p";

    SUBCASE("max_diff finds the half-period gap") {
        auto pair = select_frame_pair(clip, PairStrategy::max_diff, 16);
        int64_t gap = pair.i1 - pair.i0;
        CHECK(gap >= 7);
        CHECK(gap <= 9);
        CHECK(pair.mid == (pair.i0 + pair.i1) / 2);
    }
    SUBCASE("max_diff equals brute force") {
        auto pair = select_frame_pair(clip, PairStrategy::max_diff, 16);
        double best = -1;
        int64_t bi0 = -1, bi1 = -1;
        int64_t HW = clip.H * clip.W;
        for (int64_t a = 0; a < 16; ++a)
            for (int64_t b = a + 1; b <= 16; ++b) {
                double acc = 0;
                for (int64_t p = 0; p < HW; ++p)
                    acc += std::abs(clip.frames[a * HW + p] - clip.frames[b * HW + p]);
                acc /= double(HW);
                if (acc > best) {
                    best = acc;
                    bi0 = a;
                    bi1 = b;
                }
            }
        CHECK(pair.i0 == bi0);
        CHECK(pair.i1 == bi1);
    }
    SUBCASE("constant clip ties break to smallest pair") {
        VideoClip flat;
        flat.id = "flat";
        flat.T = 8;
        flat.H = 4;
        flat.W = 4;
        flat.frames.assign(8 * 16, 0.5);
        auto pair = select_frame_pair(flat, PairStrategy::max_diff, 4);
        CHECK(pair.i0 == 0);
        CHECK(pair.i1 == 1);
    }
    SUBCASE("fixed_stride arithmetic") {
        auto pair = select_frame_pair(clip, PairStrategy::fixed_stride, 16);
        CHECK(pair.i0 == 0);
        CHECK(pair.i1 == 16);
        CHECK(pair.mid == 8);
    }
    SUBCASE("window larger than clip") {
        CHECK_THROWS_AS(select_frame_pair(clip, PairStrategy::max_diff, 33), PreconditionError);
    }
    SUBCASE("strategy parsing") {
        CHECK(pair_strategy_from("max_diff") == PairStrategy::max_diff);
        CHECK_THROWS_AS(pair_strategy_from("best"), ConfigError);
    }
}

TEST_CASE("enumerate_pairs is deterministic and tiles the clip") {
    auto spec = small_spec(13);
    auto [clip, flows] = generate_phantom(spec, 33);
    clip.id = "p";
    auto pairs = enumerate_pairs(clip, PairStrategy::max_diff, 16);
    CHECK(pairs.size() == 2);
    CHECK(pairs[0].i0 >= 0);
    CHECK(pairs[0].i1 <= 16);
    CHECK(pairs[1].i0 >= 16);
    auto again = enumerate_pairs(clip, PairStrategy::max_diff, 16);
    for (size_t i = 0; i < pairs.size(); ++i) {
        CHECK(pairs[i].i0 == again[i].i0);
        CHECK(pairs[i].i1 == again[i].i1);
    }
}
