// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcdm/config.hpp"
#include "mcdm/errors.hpp"
#include "mcdm/pipeline.hpp"

namespace {

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"motion-conditioned video pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_flag;
    uint64_t seed = 0;
    app.add_option("--config", config_path, "json run configuration file");
    auto* seed_opt = app.add_option("--seed", seed, "override the configured seed");
    app.add_option("--out", out_flag, "artifact cache root (default $MCDM_CACHE or ./out)");

    auto* sc_pg = app.add_subcommand("phantom-gen", "generate the phantom dataset");
    auto* sc_reid = app.add_subcommand("train-reid", "train the frame embedder");
    auto* sc_flow = app.add_subcommand("gen-flow", "write pseudo flow for training pairs");
    std::string flow_method;
    int64_t flow_patch = 0, flow_search = 0, flow_stride = 0;
    sc_flow->add_option("--method", flow_method, "block_match or import");
    sc_flow->add_option("--patch", flow_patch, "matching patch size (odd)");
    sc_flow->add_option("--search", flow_search, "search radius in pixels");
    sc_flow->add_option("--stride", flow_stride, "grid stride in pixels");
    auto* sc_mafe = app.add_subcommand("train-mafe", "train the feature extractor");
    auto* sc_motion = app.add_subcommand("extract-motion", "write per-clip motion vectors");
    auto* sc_vae = app.add_subcommand("train-vae", "train the frame autoencoder");
    auto* sc_lvdm = app.add_subcommand("train-lvdm", "train the latent denoiser");
    auto* sc_sample = app.add_subcommand("sample", "generate a video clip");
    std::string cond_id;
    int64_t sample_frames = 0;
    uint64_t noise_seed = 0;
    sc_sample->add_option("--cond-id", cond_id, "conditioning clip (default: first val clip)");
    sc_sample->add_option("--frames", sample_frames, "frame count (default: configured length)");
    sc_sample->add_option("--noise-seed", noise_seed, "seed of the sampling noise");
    auto* sc_eval = app.add_subcommand("evaluate", "compute the metric report");
    auto* sc_ablate = app.add_subcommand("ablate", "sweep the loss-weight grid");
    std::string l1_str, l2_str;
    sc_ablate->add_option("--l1", l1_str, "comma list of lambda1 values");
    sc_ablate->add_option("--l2", l2_str, "comma list of lambda2 values");
    auto* sc_report = app.add_subcommand("report", "tabulate evaluation reports");
    std::vector<std::string> report_inputs;
    std::string report_out;
    sc_report->add_option("inputs", report_inputs, "report.json files")->required();
    sc_report->add_option("--output", report_out, "write the table here instead of stdout");

    for (auto* sc : app.get_subcommands({})) sc->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        if (code != 0) std::cout << "status=error: invalid command line" << std::endl;
        return code;
    }

    try {
        mcdm::config::RunConfig cfg;
        if (!config_path.empty()) cfg = mcdm::config::load_config(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (*sc_flow) {
            if (!flow_method.empty()) cfg.pseudo.method = flow_method;
            if (flow_patch > 0) cfg.pseudo.patch = flow_patch;
            if (flow_search > 0) cfg.pseudo.search = flow_search;
            if (flow_stride > 0) cfg.pseudo.stride = flow_stride;
        }
        mcdm::config::validate(cfg);
        auto paths = mcdm::pipeline::resolve_paths(cfg, out_flag);

        if (*sc_pg) {
            mcdm::pipeline::run_phantom_gen(cfg, paths);
        } else if (*sc_reid) {
            mcdm::pipeline::run_train_reid(cfg, paths);
        } else if (*sc_flow) {
            mcdm::pipeline::run_gen_flow(cfg, paths);
        } else if (*sc_mafe) {
            mcdm::pipeline::run_train_mafe(cfg, paths);
        } else if (*sc_motion) {
            mcdm::pipeline::run_extract_motion(cfg, paths);
        } else if (*sc_vae) {
            mcdm::pipeline::run_train_vae(cfg, paths);
        } else if (*sc_lvdm) {
            mcdm::pipeline::run_train_lvdm(cfg, paths);
        } else if (*sc_sample) {
            auto file = mcdm::pipeline::run_sample(cfg, paths,
                                                   {cond_id, sample_frames, noise_seed});
            std::cout << "sample=" << file << "\n";
        } else if (*sc_eval) {
            mcdm::pipeline::run_evaluate(cfg, paths);
        } else if (*sc_ablate) {
            std::vector<double> l1s = l1_str.empty() ? std::vector<double>{0.0, 1.0, 5.0, 10.0}
                                                     : parse_list(l1_str);
            std::vector<double> l2s = l2_str.empty()
                                          ? std::vector<double>{0.0, 0.005, 0.01, 0.05, 0.1}
                                          : parse_list(l2_str);
            mcdm::pipeline::run_ablation(cfg, paths, l1s, l2s);
        } else if (*sc_report) {
            mcdm::pipeline::run_report(report_inputs, report_out);
        }
        std::cout << "status=ok" << std::endl;
        return 0;
    } catch (const std::exception& e) {
        std::cout << "status=error: " << e.what() << std::endl;
        return 1;
    }
}
