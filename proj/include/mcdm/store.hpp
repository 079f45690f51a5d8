// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcdm/tensor.hpp"

namespace mcdm::store {

// ---- feature store ("MCFS") ----

struct FeatureRecord {
    std::string id;
    std::vector<float> values;
};

void write_features(const std::string& path, const std::vector<FeatureRecord>& records);
std::vector<FeatureRecord> read_features(const std::string& path);

// ---- flow store ("MCFL"): T fields of [2,H,W] f32, u-plane then v-plane ----

struct FlowSeries {
    int64_t H = 0, W = 0, T = 0;
    std::vector<float> data; // T * 2 * H * W

    float& u(int64_t t, int64_t y, int64_t x) { return data[(t * 2 + 0) * H * W + y * W + x]; }
    float& v(int64_t t, int64_t y, int64_t x) { return data[(t * 2 + 1) * H * W + y * W + x]; }
    float u(int64_t t, int64_t y, int64_t x) const {
        return data[(t * 2 + 0) * H * W + y * W + x];
    }
    float v(int64_t t, int64_t y, int64_t x) const {
        return data[(t * 2 + 1) * H * W + y * W + x];
    }
};

void write_flows(const std::string& path, const FlowSeries& flows);
FlowSeries read_flows(const std::string& path);

// ---- raw video container ("MCVR"): u8 frames, [T,C,H,W] ----

struct VideoU8 {
    float fps = 30.0f;
    int64_t T = 0, H = 0, W = 0, C = 0;
    std::vector<uint8_t> data; // T*C*H*W
};

void write_video(const std::string& path, const VideoU8& video);
VideoU8 read_video(const std::string& path);

// ---- checkpoint ("MCPT"): named f32 tensors plus optimizer moments ----

struct Checkpoint {
    uint64_t config_hash = 0;
    int64_t step = 0;
    int64_t opt_steps = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
    bool has_opt_state = false;
    std::vector<Tensor> opt_m, opt_v; // parallel to tensors when present
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

} // namespace mcdm::store
