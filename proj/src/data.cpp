// SPDX-License-Identifier: Apache-2.0
#include "mcdm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mcdm/errors.hpp"
#include "mcdm/rng.hpp"
#include "mcdm/store.hpp"

namespace mcdm::data {

Tensor VideoClip::frame(int64_t t) const {
    if (t < 0 || t >= T) throw PreconditionError("frame index out of range");
    Tensor out({H, W});
    std::copy(frames.begin() + t * H * W, frames.begin() + (t + 1) * H * W, out.data.begin());
    return out;
}

PairStrategy pair_strategy_from(const std::string& name) {
    if (name == "max_diff") return PairStrategy::max_diff;
    if (name == "fixed_stride") return PairStrategy::fixed_stride;
    throw ConfigError("unknown pair strategy '" + name + "' (expected max_diff or fixed_stride)");
}

std::string pair_strategy_name(PairStrategy s) {
    return s == PairStrategy::max_diff ? "max_diff" : "fixed_stride";
}

// ---- dataset loading ----

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

std::vector<VideoClip> load_video_dataset(const std::string& root, const std::string& split) {
    if (split != "train" && split != "val" && split != "test")
        throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
    std::string manifest_path = root + "/manifest.txt";
    std::ifstream manifest(manifest_path);
    if (!manifest) throw ConfigError("missing manifest '" + manifest_path + "'");

    std::vector<std::string> ids;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(manifest, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw ConfigError("malformed manifest line " + std::to_string(lineno) + " in '" +
                              manifest_path + "': expected `id,split`");
        std::string id = trim(line.substr(0, comma));
        std::string sp = trim(line.substr(comma + 1));
        if (sp != "train" && sp != "val" && sp != "test")
            throw ConfigError("unknown split '" + sp + "' on manifest line " +
                              std::to_string(lineno));
        if (sp == split) ids.push_back(id);
    }

    std::vector<VideoClip> clips;
    for (const auto& id : ids) {
        std::string path = root + "/" + id + ".mcvr";
        store::VideoU8 raw;
        try {
            raw = store::read_video(path);
        } catch (const IoError& e) {
            std::cerr << "warning: skipping '" << id << "': " << e.what() << "\n";
            continue;
        }
        if (raw.T < 3) {
            std::cerr << "warning: skipping '" << id << "': only " << raw.T
                      << " frame(s), need at least 3\n";
            continue;
        }
        VideoClip clip;
        clip.id = id;
        clip.T = raw.T;
        clip.H = raw.H;
        clip.W = raw.W;
        clip.fps = raw.fps;
        clip.frames.resize(size_t(raw.T) * raw.H * raw.W);
        int64_t HW = raw.H * raw.W;
        for (int64_t t = 0; t < raw.T; ++t)
            for (int64_t p = 0; p < HW; ++p) {
                double acc = 0;
                for (int64_t c = 0; c < raw.C; ++c)
                    acc += raw.data[(t * raw.C + c) * HW + p];
                clip.frames[t * HW + p] = acc / (255.0 * double(raw.C));
            }
        clips.push_back(std::move(clip));
    }
    if (clips.empty())
        throw ConfigError("split '" + split + "' is empty after loading from '" + root + "'");
    return clips;
}

// ---- phantom ----

namespace {

struct PhantomGeom {
    double cx, cy;       // ellipse center
    double apex_x, apex_y;
    double half_angle;   // radians
    double radius(const PhantomSpec& s, int64_t t) const {
        return s.base_radius *
               (1.0 + s.pulse_amplitude * std::sin(2.0 * M_PI * double(t) / double(s.period)));
    }
    bool in_cone(int64_t y, int64_t x) const {
        double dx = double(x) - apex_x, dy = double(y) - apex_y;
        if (dy <= 0) return false;
        return std::atan2(std::abs(dx), dy) <= half_angle;
    }
};

PhantomGeom make_geom(const PhantomSpec& spec) {
    PhantomGeom g;
    g.cx = double(spec.width - 1) / 2.0;
    g.cy = double(spec.height - 1) / 2.0;
    g.apex_x = g.cx;
    g.apex_y = 1.0;
    g.half_angle = spec.cone_angle_deg * M_PI / 360.0;
    return g;
}

void validate(const PhantomSpec& spec) {
    if (spec.period < 4) throw PreconditionError("phantom period must be >= 4 frames");
    if (spec.pulse_amplitude < 0 || spec.pulse_amplitude >= 1)
        throw PreconditionError("phantom pulse_amplitude must lie in [0,1)");
    if (spec.base_radius <= 0) throw PreconditionError("phantom base_radius must be positive");
    if (spec.speckle_sigma < 0) throw PreconditionError("phantom speckle_sigma must be >= 0");
    if (spec.height < 8 || spec.width < 8)
        throw PreconditionError("phantom frames must be at least 8x8");
}

} // namespace

std::pair<VideoClip, std::vector<FlowField>> generate_phantom(const PhantomSpec& spec,
                                                              int64_t num_frames) {
    validate(spec);
    if (num_frames < spec.period)
        throw PreconditionError("phantom needs num_frames >= period");
    PhantomGeom g = make_geom(spec);
    int64_t H = spec.height, W = spec.width;

    Tensor speckle({H, W});
    Rng rng(spec.seed);
    for (auto& v : speckle.data) v = rng.normal() * spec.speckle_sigma;

    VideoClip clip;
    clip.T = num_frames;
    clip.H = H;
    clip.W = W;
    clip.frames.resize(size_t(num_frames) * H * W);
    for (int64_t t = 0; t < num_frames; ++t) {
        double r = g.radius(spec, t);
        double a = r, b = 0.8 * r;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double val = 0.0;
                if (g.in_cone(y, x)) {
                    double dx = double(x) - g.cx, dy = double(y) - g.cy;
                    double rho = std::sqrt((dx / a) * (dx / a) + (dy / b) * (dy / b));
                    if (rho < 0.8) {
                        val = 0.12;
                    } else if (rho <= 1.2) {
                        double theta = std::atan2(dy, dx);
                        val = 0.8 + 0.15 * std::cos(6.0 * theta);
                    } else {
                        val = 0.4;
                        if (rho > 1.35) val += speckle.at2(y, x);
                    }
                    val = std::min(std::max(val, 0.0), 1.0);
                }
                clip.frames[(t * H + y) * W + x] = val;
            }
    }

    std::vector<FlowField> flows;
    flows.reserve(size_t(num_frames - 1));
    for (int64_t t = 0; t + 1 < num_frames; ++t)
        flows.push_back(phantom_flow_between(spec, t, t + 1));
    return {std::move(clip), std::move(flows)};
}

FlowField phantom_flow_between(const PhantomSpec& spec, int64_t t0, int64_t t1) {
    validate(spec);
    PhantomGeom g = make_geom(spec);
    int64_t H = spec.height, W = spec.width;
    double r0 = g.radius(spec, t0), r1 = g.radius(spec, t1);
    double s = r1 / r0 - 1.0;
    FlowField f{Tensor({H, W}), Tensor({H, W}), Tensor({H, W})};
    double a = r0, b = 0.8 * r0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            if (!g.in_cone(y, x)) continue;
            double dx = double(x) - g.cx, dy = double(y) - g.cy;
            double rho = std::sqrt((dx / a) * (dx / a) + (dy / b) * (dy / b));
            if (rho < 0.8 || rho > 1.2) continue;
            f.u.at2(y, x) = dx * s;
            f.v.at2(y, x) = dy * s;
            f.mask.at2(y, x) = 1.0;
        }
    return f;
}

// ---- frame pair selection ----

FramePair select_frame_pair(const VideoClip& clip, PairStrategy strategy, int64_t window,
                            int64_t start) {
    if (window < 3) throw PreconditionError("pair window must be >= 3");
    if (clip.T < window)
        throw PreconditionError("clip '" + clip.id + "' has " + std::to_string(clip.T) +
                                " frames, need at least the window of " + std::to_string(window));
    if (start < 0 || start >= clip.T) throw PreconditionError("pair window start out of range");

    int64_t i0 = -1, i1 = -1;
    if (strategy == PairStrategy::fixed_stride) {
        if (start + window > clip.T - 1)
            throw PreconditionError("fixed_stride pair (" + std::to_string(start) + "," +
                                    std::to_string(start + window) + ") exceeds clip length " +
                                    std::to_string(clip.T));
        i0 = start;
        i1 = start + window;
    } else {
        int64_t lo = start, hi = std::min(clip.T - 1, start + window);
        int64_t HW = clip.H * clip.W;
        double best = -1.0;
        for (int64_t a = lo; a < hi; ++a)
            for (int64_t b = a + 1; b <= hi; ++b) {
                double acc = 0;
                const double* fa = clip.frames.data() + a * HW;
                const double* fb = clip.frames.data() + b * HW;
                for (int64_t p = 0; p < HW; ++p) acc += std::abs(fa[p] - fb[p]);
                acc /= double(HW);
                if (acc > best) {
                    best = acc;
                    i0 = a;
                    i1 = b;
                }
                // ties keep the lexicographically smallest (i0,i1): earlier
                // iterations win because the scan order is lexicographic
            }
    }

    FramePair pair;
    pair.video_id = clip.id;
    pair.i0 = i0;
    pair.i1 = i1;
    pair.mid = (i0 + i1) / 2;
    pair.I0 = clip.frame(i0);
    pair.I1 = clip.frame(i1);
    pair.IGT = clip.frame(pair.mid);
    return pair;
}

std::vector<FramePair> enumerate_pairs(const VideoClip& clip, PairStrategy strategy,
                                       int64_t window) {
    std::vector<FramePair> pairs;
    for (int64_t start = 0; start + window <= clip.T - 1; start += window)
        pairs.push_back(select_frame_pair(clip, strategy, window, start));
    if (pairs.empty())
        throw PreconditionError("clip '" + clip.id + "' is too short for window " +
                                std::to_string(window));
    return pairs;
}

} // namespace mcdm::data
