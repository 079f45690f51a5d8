// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcdm/tensor.hpp"

namespace mcdm::data {

struct VideoClip {
    std::string id;
    int64_t T = 0, H = 0, W = 0;
    double fps = 30.0;
    std::vector<double> frames; // [T,H,W], values in [0,1]

    Tensor frame(int64_t t) const;
    double px(int64_t t, int64_t y, int64_t x) const { return frames[(t * H + y) * W + x]; }
};

struct FramePair {
    std::string video_id;
    int64_t i0 = 0, i1 = 0, mid = 0;
    Tensor I0, I1, IGT; // [H,W]
};

// Pulsing-ellipse test pattern inside a scan cone. The ring band around the
// ellipse boundary carries an angular texture that moves exactly with the
// radial scaling field, so the analytic flow is a usable oracle.
struct PhantomSpec {
    double base_radius = 10.0;
    double pulse_amplitude = 0.2; // fraction in [0,1)
    int64_t period = 16;          // frames per pulse cycle, >= 4
    double speckle_sigma = 0.05;
    double cone_angle_deg = 90.0; // full opening angle
    uint64_t seed = 0;
    int64_t height = 112, width = 112;
};

struct FlowField {
    Tensor u, v;  // [H,W] pixel displacements
    Tensor mask;  // [H,W] in {0,1}; 1 where the flow is defined
};

enum class PairStrategy { max_diff, fixed_stride };
PairStrategy pair_strategy_from(const std::string& name);
std::string pair_strategy_name(PairStrategy s);

// Reads <root>/manifest.txt (lines `id,split`) and loads <root>/<id>.mcvr for
// every id of the requested split. Channels are averaged to one plane, u8
// values scaled to [0,1].
std::vector<VideoClip> load_video_dataset(const std::string& root, const std::string& split);

// Frames plus analytic flow between consecutive frames (num_frames-1 entries).
std::pair<VideoClip, std::vector<FlowField>> generate_phantom(const PhantomSpec& spec,
                                                              int64_t num_frames);

// Exact displacement field of the phantom from frame t0 to frame t1,
// restricted to the ring band visible at t0.
FlowField phantom_flow_between(const PhantomSpec& spec, int64_t t0, int64_t t1);

// One pair from the window starting at `start`. max_diff searches all pairs
// with start <= i0 < i1 <= start+window; fixed_stride returns (start, start+window).
FramePair select_frame_pair(const VideoClip& clip, PairStrategy strategy, int64_t window,
                            int64_t start = 0);

// Deterministic training enumeration: windows tiled every `window` frames.
std::vector<FramePair> enumerate_pairs(const VideoClip& clip, PairStrategy strategy,
                                       int64_t window);

} // namespace mcdm::data
