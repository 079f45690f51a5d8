// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcdm/config.hpp"
#include "mcdm/mafe.hpp"
#include "mcdm/metrics.hpp"

namespace mcdm::pipeline {

// Every artifact of a run lives under <root>/<config hash>, so two runs with
// the same config share their caches and different configs never collide.
struct Paths {
    std::string root;
    std::string run_dir;
    std::string dataset_dir;

    std::string stamp(const std::string& stage) const;
    std::string manifest() const;
    std::string video(const std::string& id) const;
    std::string spec_sidecar() const;
    std::string reid_ckpt() const;
    std::string embeddings() const;
    std::string flow(const std::string& id) const;
    std::string flow_mask(const std::string& id) const;
    std::string mafe_ckpt() const;
    std::string motion() const;
    std::string vae_ckpt() const;
    std::string latents() const;
    std::string lvdm_ckpt() const;
    std::string losses(const std::string& stage) const;
    std::string sample_dir() const;
    std::string sample_manifest() const;
    std::string report_txt() const;
    std::string report_json() const;
    std::string ablation_txt() const;
    std::string ablation_json() const;
};

// Cache root priority: --out flag, then MCDM_CACHE, then "out".
Paths resolve_paths(const config::RunConfig& cfg, const std::string& out_flag);

bool stage_done(const Paths& paths, const std::string& stage);
void mark_done(const Paths& paths, const std::string& stage);

// Canonical stage order for a full run.
const std::vector<std::string>& stage_order();

struct SampleRequest {
    std::string cond_id;    // empty selects the first validation clip
    int64_t frames = 0;     // 0 selects the configured sample length
    uint64_t noise_seed = 0;
};

void run_phantom_gen(const config::RunConfig& cfg, const Paths& paths);
void run_train_reid(const config::RunConfig& cfg, const Paths& paths);
void run_gen_flow(const config::RunConfig& cfg, const Paths& paths);
void run_train_mafe(const config::RunConfig& cfg, const Paths& paths);
void run_extract_motion(const config::RunConfig& cfg, const Paths& paths);
void run_train_vae(const config::RunConfig& cfg, const Paths& paths);
void run_train_lvdm(const config::RunConfig& cfg, const Paths& paths);
std::string run_sample(const config::RunConfig& cfg, const Paths& paths,
                       const SampleRequest& req); // returns the written video path
metrics::MetricReport run_evaluate(const config::RunConfig& cfg, const Paths& paths);

// Runs the named stages in canonical order; completed stages are skipped via
// their stamp files. Unknown stage names are rejected.
void run_pipeline(const config::RunConfig& cfg, const Paths& paths,
                  const std::vector<std::string>& stages);

// Training bundles for the train split, pseudo supervision attached.
std::vector<mafe::PairBundle> build_bundles(const config::RunConfig& cfg, const Paths& paths);

struct AblationCell {
    double lambda1 = 0.0, lambda2 = 0.0;
    bool failed = false;
    double psnr = 0.0;                                     // held-out middle-frame PSNR
    double total = 0.0, lap = 0.0, reid = 0.0, flow = 0.0; // means over the last steps
};

// Trains one model per (lambda1, lambda2) cell, row major, and scores each on
// the held-out pairs. A cell whose training goes non-finite is marked failed
// and the sweep continues.
std::vector<AblationCell> run_ablation(const config::RunConfig& cfg, const Paths& paths,
                                       const std::vector<double>& lambda1s,
                                       const std::vector<double>& lambda2s);

// Side-by-side table from evaluation reports; empty out_path prints to stdout.
void run_report(const std::vector<std::string>& report_jsons, const std::string& out_path);

} // namespace mcdm::pipeline
