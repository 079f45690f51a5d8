// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcdm/data.hpp"
#include "mcdm/diffusion.hpp"
#include "mcdm/mafe.hpp"
#include "mcdm/pseudo.hpp"

namespace mcdm::config {

struct DataSection {
    std::string root;       // explicit dataset dir; empty keeps it inside the run dir
    int64_t count = 64;     // phantom clips to generate
    int64_t frames = 32;
    int64_t height = 112, width = 112;
    double base_radius = 28.0;
    std::vector<double> amplitudes = {0.15, 0.3}; // one motion class per entry
    int64_t period = 16;
    double speckle_sigma = 0.05;
    double cone_angle = 90.0;
    double val_fraction = 0.25;
    int64_t window = 16;    // frame-pair selection window
    std::string pair_strategy = "max_diff";
};

struct MafeSection {
    std::vector<int64_t> channels = {64, 128, 256, 512};
    int64_t attention_window = 7;
    int64_t head_channels = 32;
    int64_t pyramid_levels = 3;
    double lambda1 = 1.0;
    double lambda2 = 0.01;
    double lr = 2e-4;
    int64_t warmup = 2000;
    int64_t batch = 8;
    std::string schedule = "cosine";
    int64_t steps = 20000;
};

struct ReidSection {
    int64_t embed_dim = 512;
    std::vector<int64_t> channels = {16, 32};
    double lr = 1e-3;
    int64_t batch_videos = 4;
    int64_t steps = 300;
};

struct PseudoSection {
    double tau = 0.07;
    int64_t patch = 7;
    int64_t search = 4;
    int64_t stride = 2;
    std::string method = "block_match"; // or "import" (analytic phantom flow)
    ReidSection reid;
};

struct VaeSection {
    int64_t latent_channels = 4;
    int64_t base_channels = 16;
    double kl_weight = 1e-4;
    double lr = 1e-3;
    int64_t batch = 8;
    int64_t steps = 5000;
};

struct DiffusionSection {
    int64_t t_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int64_t blocks = 4;
    int64_t base_channels = 32;
    int64_t embed_dim = 64;
    int64_t groups = 8;
    bool temporal_attention = true;
    double p_drop = 0.1;
    double lr = 1e-4;
    int64_t steps = 10000;
    std::string sampler = "ancestral";
    int64_t sample_frames = 16;
    VaeSection vae;
};

struct EvalSection {
    std::vector<int64_t> clip_lengths = {16};
    uint64_t embedder_seed = 0;
    int64_t embedder_dim = 16;
};

struct RunConfig {
    uint64_t seed = 0;
    DataSection data;
    MafeSection mafe;
    PseudoSection pseudo;
    DiffusionSection diffusion;
    EvalSection eval;
};

// Strict merge over the defaults above: every key must be known, every value
// well typed, every constraint satisfied. Errors carry the full key path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
void validate(const RunConfig& cfg);

// Full canonical dump (all fields, sorted keys) and its FNV-1a hash. The hash
// routes artifacts, so equal configs always share paths.
nlohmann::json to_json(const RunConfig& cfg);
uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(uint64_t h);

// views into the module-level configs
mafe::MafeConfig mafe_config(const RunConfig& cfg);
pseudo::ReidConfig reid_config(const RunConfig& cfg);
diff::VaeConfig vae_config(const RunConfig& cfg);
diff::DenoiserConfig denoiser_config(const RunConfig& cfg); // cond dim follows mafe channels
diff::NoiseSchedule noise_schedule(const RunConfig& cfg);
data::PhantomSpec phantom_spec(const RunConfig& cfg, int64_t index); // per-clip class + seed

} // namespace mcdm::config
