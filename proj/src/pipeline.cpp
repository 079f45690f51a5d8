// SPDX-License-Identifier: Apache-2.0
#include "mcdm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mcdm/autograd.hpp"
#include "mcdm/data.hpp"
#include "mcdm/diffusion.hpp"
#include "mcdm/errors.hpp"
#include "mcdm/pseudo.hpp"
#include "mcdm/store.hpp"

namespace mcdm::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- paths ----

std::string Paths::stamp(const std::string& stage) const {
    return run_dir + "/stamps/" + stage + ".done";
}
std::string Paths::manifest() const { return dataset_dir + "/manifest.txt"; }
std::string Paths::video(const std::string& id) const { return dataset_dir + "/" + id + ".mcvr"; }
std::string Paths::spec_sidecar() const { return dataset_dir + "/phantom_specs.json"; }
std::string Paths::reid_ckpt() const { return run_dir + "/reid.mcpt"; }
std::string Paths::embeddings() const { return run_dir + "/embeddings.mcfs"; }
std::string Paths::flow(const std::string& id) const { return run_dir + "/flows/" + id + ".mcfl"; }
std::string Paths::flow_mask(const std::string& id) const {
    return run_dir + "/flows/" + id + ".mask.mcfl";
}
std::string Paths::mafe_ckpt() const { return run_dir + "/mafe.mcpt"; }
std::string Paths::motion() const { return run_dir + "/motion.mcfs"; }
std::string Paths::vae_ckpt() const { return run_dir + "/vae.mcpt"; }
std::string Paths::latents() const { return run_dir + "/latents.mcfs"; }
std::string Paths::lvdm_ckpt() const { return run_dir + "/lvdm.mcpt"; }
std::string Paths::losses(const std::string& stage) const {
    return run_dir + "/" + stage + "_losses.txt";
}
std::string Paths::sample_dir() const { return run_dir + "/samples"; }
std::string Paths::sample_manifest() const { return run_dir + "/samples/manifest.txt"; }
std::string Paths::report_txt() const { return run_dir + "/reports/report.txt"; }
std::string Paths::report_json() const { return run_dir + "/reports/report.json"; }
std::string Paths::ablation_txt() const { return run_dir + "/ablation.txt"; }
std::string Paths::ablation_json() const { return run_dir + "/ablation.json"; }

Paths resolve_paths(const config::RunConfig& cfg, const std::string& out_flag) {
    Paths p;
    if (!out_flag.empty()) {
        p.root = out_flag;
    } else if (const char* env = std::getenv("MCDM_CACHE"); env && *env) {
        p.root = env;
    } else {
        p.root = "out";
    }
    p.run_dir = p.root + "/" + config::hash_hex(config::config_hash(cfg));
    p.dataset_dir = cfg.data.root.empty() ? p.run_dir + "/dataset" : cfg.data.root;
    return p;
}

bool stage_done(const Paths& paths, const std::string& stage) {
    return fs::exists(paths.stamp(stage));
}

void mark_done(const Paths& paths, const std::string& stage) {
    fs::create_directories(fs::path(paths.stamp(stage)).parent_path());
    std::ofstream out(paths.stamp(stage));
    out << stage << "\n";
}

const std::vector<std::string>& stage_order() {
    static const std::vector<std::string> order = {
        "phantom-gen",    "train-reid", "gen-flow",   "train-mafe", "extract-motion",
        "train-vae",      "train-lvdm", "sample",     "evaluate"};
    return order;
}

// ---- shared helpers ----

namespace {

bool skip_if_done(const Paths& paths, const std::string& stage) {
    if (stage_done(paths, stage)) {
        std::cout << "[" << stage << "] already complete, skipping (" << paths.stamp(stage)
                  << ")\n";
        return true;
    }
    return false;
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw PreconditionError("missing artifact '" + path + "'; run `" + producer + "` first");
}

void write_losses(const std::string& path, const std::vector<double>& losses) {
    std::ofstream out(path);
    out.precision(17);
    for (size_t i = 0; i < losses.size(); ++i) out << i << " " << losses[i] << "\n";
}

store::VideoU8 to_u8(const data::VideoClip& clip) {
    store::VideoU8 v;
    v.fps = float(clip.fps);
    v.T = clip.T;
    v.H = clip.H;
    v.W = clip.W;
    v.C = 1;
    v.data.resize(size_t(clip.T * clip.H * clip.W));
    for (size_t i = 0; i < v.data.size(); ++i) {
        double x = std::min(1.0, std::max(0.0, clip.frames[i]));
        v.data[i] = uint8_t(std::lround(x * 255.0));
    }
    return v;
}

data::VideoClip clip_from_u8(const store::VideoU8& v, const std::string& id) {
    data::VideoClip c;
    c.id = id;
    c.T = v.T;
    c.H = v.H;
    c.W = v.W;
    c.fps = v.fps;
    c.frames.assign(size_t(v.T * v.H * v.W), 0.0);
    int64_t plane = v.H * v.W;
    for (int64_t t = 0; t < v.T; ++t)
        for (int64_t ch = 0; ch < v.C; ++ch)
            for (int64_t i = 0; i < plane; ++i)
                c.frames[size_t(t * plane + i)] +=
                    double(v.data[size_t((t * v.C + ch) * plane + i)]) / (255.0 * double(v.C));
    return c;
}

std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path + "'");
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw IoError("malformed manifest line '" + line + "' in " + path);
        rows.emplace_back(line.substr(0, comma), line.substr(comma + 1));
    }
    return rows;
}

void write_spec_sidecar(const std::string& path,
                        const std::vector<std::pair<std::string, data::PhantomSpec>>& specs) {
    json j = json::object();
    for (const auto& [id, s] : specs) {
        json e;
        e["base_radius"] = s.base_radius;
        e["pulse_amplitude"] = s.pulse_amplitude;
        e["period"] = s.period;
        e["speckle_sigma"] = s.speckle_sigma;
        e["cone_angle_deg"] = s.cone_angle_deg;
        e["seed"] = s.seed;
        e["height"] = s.height;
        e["width"] = s.width;
        j[id] = e;
    }
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

std::map<std::string, data::PhantomSpec> load_spec_sidecar(const std::string& path) {
    std::map<std::string, data::PhantomSpec> specs;
    std::ifstream in(path);
    if (!in) return specs; // external datasets may have no sidecar
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw IoError("malformed phantom sidecar '" + path + "'");
    for (const auto& [id, e] : j.items()) {
        data::PhantomSpec s;
        s.base_radius = e.at("base_radius").get<double>();
        s.pulse_amplitude = e.at("pulse_amplitude").get<double>();
        s.period = e.at("period").get<int64_t>();
        s.speckle_sigma = e.at("speckle_sigma").get<double>();
        s.cone_angle_deg = e.at("cone_angle_deg").get<double>();
        s.seed = e.at("seed").get<uint64_t>();
        s.height = e.at("height").get<int64_t>();
        s.width = e.at("width").get<int64_t>();
        specs[id] = s;
    }
    return specs;
}

Tensor plane_tensor(const Tensor& hw, int64_t H, int64_t W) {
    Tensor t({1, 1, H, W}, hw.data);
    return t;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / double(xs.size());
}

double std_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / double(xs.size() - 1));
}

double tail_mean(const std::vector<double>& xs, size_t n) {
    if (xs.empty()) return 0.0;
    size_t k = std::min(n, xs.size());
    double acc = 0.0;
    for (size_t i = xs.size() - k; i < xs.size(); ++i) acc += xs[i];
    return acc / double(k);
}

double clip_energy(const data::VideoClip& c) {
    if (c.T < 2) return 0.0;
    int64_t plane = c.H * c.W;
    double acc = 0.0;
    for (int64_t t = 1; t < c.T; ++t)
        for (int64_t i = 0; i < plane; ++i)
            acc += std::fabs(c.frames[size_t(t * plane + i)] -
                             c.frames[size_t((t - 1) * plane + i)]);
    return acc / double((c.T - 1) * plane);
}

json report_to_json(const metrics::MetricReport& rep) {
    json j;
    j["config"] = config::hash_hex(rep.config_hash);
    j["clip_lengths"] = rep.clip_lengths;
    json entries = json::array();
    for (const auto& e : rep.entries) {
        json je;
        je["name"] = e.name;
        je["value"] = e.value;
        if (e.has_std) je["stddev"] = e.stddev;
        if (!e.qualifier.empty()) je["qualifier"] = e.qualifier;
        entries.push_back(je);
    }
    j["entries"] = entries;
    return j;
}

metrics::MetricReport report_from_json(const json& j) {
    metrics::MetricReport rep;
    rep.config_hash = std::stoull(j.at("config").get<std::string>(), nullptr, 16);
    for (const auto& l : j.at("clip_lengths")) rep.clip_lengths.push_back(l.get<int64_t>());
    for (const auto& je : j.at("entries")) {
        metrics::MetricReport::Entry e;
        e.name = je.at("name").get<std::string>();
        e.value = je.at("value").get<double>();
        if (je.contains("stddev")) {
            e.stddev = je.at("stddev").get<double>();
            e.has_std = true;
        }
        if (je.contains("qualifier")) e.qualifier = je.at("qualifier").get<std::string>();
        rep.entries.push_back(e);
    }
    return rep;
}

void write_report_files(const Paths& paths, const metrics::MetricReport& rep) {
    fs::create_directories(fs::path(paths.report_txt()).parent_path());
    std::ofstream txt(paths.report_txt());
    txt.precision(10);
    txt << "config=" << config::hash_hex(rep.config_hash) << "\n";
    txt << "clip_lengths=";
    for (size_t i = 0; i < rep.clip_lengths.size(); ++i)
        txt << (i ? "," : "") << rep.clip_lengths[i];
    txt << "\n";
    for (const auto& e : rep.entries) {
        txt << e.name << "=" << e.value;
        if (e.has_std) txt << " std=" << e.stddev;
        if (!e.qualifier.empty()) txt << " qualifier=\"" << e.qualifier << "\"";
        txt << "\n";
    }
    std::ofstream js(paths.report_json());
    js << report_to_json(rep).dump(2) << "\n";
}

struct SampleRow {
    std::string id, cond_id;
    int64_t frames = 0;
    uint64_t noise_seed = 0;
    std::string file;
};

std::vector<SampleRow> read_sample_manifest(const std::string& path) {
    std::vector<SampleRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        SampleRow r;
        std::string frames, seed;
        if (!std::getline(ss, r.id, ',') || !std::getline(ss, r.cond_id, ',') ||
            !std::getline(ss, frames, ',') || !std::getline(ss, seed, ',') ||
            !std::getline(ss, r.file))
            throw IoError("malformed sample manifest line '" + line + "'");
        r.frames = std::stoll(frames);
        r.noise_seed = std::stoull(seed);
        rows.push_back(r);
    }
    return rows;
}

std::string first_val_id(const Paths& paths) {
    auto rows = read_manifest(paths.manifest());
    for (const auto& [id, split] : rows)
        if (split == "val") return id;
    if (!rows.empty()) return rows.front().first;
    throw PreconditionError("dataset manifest '" + paths.manifest() + "' lists no clips");
}

} // namespace

// ---- stages ----

void run_phantom_gen(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "phantom-gen";
    if (skip_if_done(paths, stage)) return;
    if (fs::exists(paths.manifest())) {
        std::cout << "[phantom-gen] dataset already present at " << paths.dataset_dir
                  << ", nothing to generate\n";
        mark_done(paths, stage);
        return;
    }
    fs::create_directories(paths.dataset_dir);
    int64_t n = cfg.data.count;
    size_t n_classes = cfg.data.amplitudes.size();

    // classes interleave over the index; the tail of each class validates
    std::vector<std::string> split(size_t(n), "train");
    for (size_t c = 0; c < n_classes; ++c) {
        std::vector<int64_t> members;
        for (int64_t k = 0; k < n; ++k)
            if (size_t(k) % n_classes == c) members.push_back(k);
        if (members.empty()) continue;
        auto n_val = int64_t(std::ceil(cfg.data.val_fraction * double(members.size())));
        if (n_val >= int64_t(members.size())) n_val = int64_t(members.size()) - 1;
        for (int64_t i = int64_t(members.size()) - n_val; i < int64_t(members.size()); ++i)
            split[size_t(members[size_t(i)])] = "val";
    }

    std::vector<std::pair<std::string, data::PhantomSpec>> specs;
    std::ofstream man(paths.manifest());
    if (!man) throw IoError("cannot write manifest '" + paths.manifest() + "'");
    for (int64_t k = 0; k < n; ++k) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "clip%04d", int(k));
        std::string id(buf);
        auto spec = config::phantom_spec(cfg, k);
        auto [clip, flows] = data::generate_phantom(spec, cfg.data.frames);
        (void)flows;
        clip.id = id;
        store::write_video(paths.video(id), to_u8(clip));
        man << id << "," << split[size_t(k)] << "\n";
        specs.emplace_back(id, spec);
    }
    man.close();
    write_spec_sidecar(paths.spec_sidecar(), specs);
    mark_done(paths, stage);
    std::cout << "[phantom-gen] wrote " << n << " clips to " << paths.dataset_dir << "\n";
}

void run_train_reid(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "train-reid";
    if (skip_if_done(paths, stage)) return;
    require_artifact(paths.manifest(), "phantom-gen");
    auto train_clips = data::load_video_dataset(paths.dataset_dir, "train");
    if (train_clips.empty()) throw PreconditionError("dataset has no training clips");

    auto result = pseudo::train_reid(train_clips, config::reid_config(cfg), cfg.seed);

    // validation frames are embedded too so any id can be looked up later
    auto records = std::move(result.embeddings);
    {
        ag::NoGrad ng;
        for (const auto& clip : data::load_video_dataset(paths.dataset_dir, "val")) {
            Tensor batch({clip.T, 1, clip.H, clip.W}, clip.frames);
            auto emb = result.model.embed(ag::constant(std::move(batch)));
            int64_t D = emb->val.shape[1];
            for (int64_t t = 0; t < clip.T; ++t) {
                store::FeatureRecord r;
                r.id = clip.id + "#" + std::to_string(t);
                r.values.resize(size_t(D));
                for (int64_t d = 0; d < D; ++d)
                    r.values[size_t(d)] = float(emb->val.data[size_t(t * D + d)]);
                records.push_back(std::move(r));
            }
        }
    }
    store::write_features(paths.embeddings(), records);
    uint64_t h = config::config_hash(cfg);
    store::write_checkpoint(paths.reid_ckpt(),
                            result.model.to_checkpoint(h, cfg.pseudo.reid.steps));
    write_losses(paths.losses("reid"), result.losses);
    mark_done(paths, stage);
    std::cout << "[train-reid] " << records.size() << " embeddings, final loss "
              << (result.losses.empty() ? 0.0 : result.losses.back()) << "\n";
}

void run_gen_flow(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "gen-flow";
    if (skip_if_done(paths, stage)) return;
    require_artifact(paths.manifest(), "phantom-gen");
    auto clips = data::load_video_dataset(paths.dataset_dir, "train");
    auto strategy = data::pair_strategy_from(cfg.data.pair_strategy);

    std::map<std::string, data::PhantomSpec> specs;
    if (cfg.pseudo.method == "import") {
        specs = load_spec_sidecar(paths.spec_sidecar());
        if (specs.empty())
            throw PreconditionError("flow import needs the phantom sidecar '" +
                                    paths.spec_sidecar() + "'");
    }

    fs::create_directories(paths.run_dir + "/flows");
    int64_t n_pairs = 0;
    for (const auto& clip : clips) {
        auto pairs = data::enumerate_pairs(clip, strategy, cfg.data.window);
        store::FlowSeries fser, mser;
        fser.H = mser.H = clip.H;
        fser.W = mser.W = clip.W;
        fser.T = mser.T = int64_t(pairs.size());
        fser.data.assign(size_t(fser.T * 2 * fser.H * fser.W), 0.0f);
        mser.data.assign(fser.data.size(), 0.0f); // mask in the u plane, v unused
        for (size_t k = 0; k < pairs.size(); ++k) {
            data::FlowField f;
            if (cfg.pseudo.method == "import") {
                auto it = specs.find(clip.id);
                if (it == specs.end())
                    throw PreconditionError("phantom sidecar has no entry for clip '" + clip.id +
                                            "'");
                f = data::phantom_flow_between(it->second, pairs[k].i0, pairs[k].i1);
            } else {
                f = pseudo::block_match_flow(pairs[k].I0, pairs[k].I1, int(cfg.pseudo.patch),
                                             int(cfg.pseudo.search), int(cfg.pseudo.stride));
            }
            for (int64_t y = 0; y < clip.H; ++y)
                for (int64_t x = 0; x < clip.W; ++x) {
                    fser.u(int64_t(k), y, x) = float(f.u.data[size_t(y * clip.W + x)]);
                    fser.v(int64_t(k), y, x) = float(f.v.data[size_t(y * clip.W + x)]);
                    mser.u(int64_t(k), y, x) = float(f.mask.data[size_t(y * clip.W + x)]);
                }
        }
        store::write_flows(paths.flow(clip.id), fser);
        store::write_flows(paths.flow_mask(clip.id), mser);
        n_pairs += int64_t(pairs.size());
    }
    mark_done(paths, stage);
    std::cout << "[gen-flow] " << cfg.pseudo.method << " flow for " << n_pairs << " pairs over "
              << clips.size() << " clips\n";
}

std::vector<mafe::PairBundle> build_bundles(const config::RunConfig& cfg, const Paths& paths) {
    require_artifact(paths.manifest(), "phantom-gen");
    require_artifact(paths.embeddings(), "train-reid");
    auto clips = data::load_video_dataset(paths.dataset_dir, "train");
    auto strategy = data::pair_strategy_from(cfg.data.pair_strategy);

    std::map<std::string, std::vector<float>> emb;
    for (auto& r : store::read_features(paths.embeddings())) emb[r.id] = std::move(r.values);
    int64_t C3 = cfg.mafe.channels[3];

    std::vector<mafe::PairBundle> bundles;
    for (const auto& clip : clips) {
        require_artifact(paths.flow(clip.id), "gen-flow");
        auto fser = store::read_flows(paths.flow(clip.id));
        auto mser = store::read_flows(paths.flow_mask(clip.id));
        auto pairs = data::enumerate_pairs(clip, strategy, cfg.data.window);
        if (fser.T != int64_t(pairs.size()) || fser.H != clip.H || fser.W != clip.W)
            throw IoError("flow store for '" + clip.id + "' does not match the pair enumeration");
        for (size_t k = 0; k < pairs.size(); ++k) {
            mafe::PairBundle b;
            b.pair = pairs[k];
            b.pseudo_flow = Tensor({2, clip.H, clip.W});
            b.flow_mask = Tensor({1, clip.H, clip.W});
            for (int64_t y = 0; y < clip.H; ++y)
                for (int64_t x = 0; x < clip.W; ++x) {
                    b.pseudo_flow.data[size_t(y * clip.W + x)] = fser.u(int64_t(k), y, x);
                    b.pseudo_flow.data[size_t(clip.H * clip.W + y * clip.W + x)] =
                        fser.v(int64_t(k), y, x);
                    b.flow_mask.data[size_t(y * clip.W + x)] = mser.u(int64_t(k), y, x);
                }
            b.has_flow = true;
            auto e0 = emb.find(clip.id + "#" + std::to_string(pairs[k].i0));
            auto e1 = emb.find(clip.id + "#" + std::to_string(pairs[k].i1));
            if (e0 != emb.end() && e1 != emb.end()) {
                if (int64_t(e0->second.size()) != C3)
                    throw PreconditionError("embedding dim " +
                                            std::to_string(e0->second.size()) +
                                            " does not match the appearance head (" +
                                            std::to_string(C3) + ")");
                b.emb0 = Tensor({C3});
                b.emb1 = Tensor({C3});
                for (int64_t d = 0; d < C3; ++d) {
                    b.emb0.data[size_t(d)] = e0->second[size_t(d)];
                    b.emb1.data[size_t(d)] = e1->second[size_t(d)];
                }
                b.has_emb = true;
            }
            bundles.push_back(std::move(b));
        }
    }
    return bundles;
}

void run_train_mafe(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "train-mafe";
    if (skip_if_done(paths, stage)) return;
    auto bundles = build_bundles(cfg, paths);
    if (bundles.empty()) throw PreconditionError("no training pairs to learn from");

    mafe::TrainStats stats;
    auto model = mafe::train_mafe(bundles, config::mafe_config(cfg), cfg.mafe.steps, cfg.seed,
                                  &stats);
    store::write_checkpoint(paths.mafe_ckpt(),
                            model.to_checkpoint(config::config_hash(cfg), cfg.mafe.steps));
    write_losses(paths.losses("mafe"), stats.total);
    mark_done(paths, stage);
    std::cout << "[train-mafe] " << bundles.size() << " pairs, " << cfg.mafe.steps
              << " steps, final loss " << (stats.total.empty() ? 0.0 : stats.total.back())
              << "\n";
}

void run_extract_motion(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "extract-motion";
    if (skip_if_done(paths, stage)) return;
    require_artifact(paths.manifest(), "phantom-gen");
    require_artifact(paths.mafe_ckpt(), "train-mafe");

    mafe::Mafe model(config::mafe_config(cfg), cfg.seed);
    model.load_parameters(store::read_checkpoint(paths.mafe_ckpt()));
    auto strategy = data::pair_strategy_from(cfg.data.pair_strategy);

    std::vector<store::FeatureRecord> recs;
    ag::NoGrad ng;
    for (const char* split : {"train", "val"}) {
        for (const auto& clip : data::load_video_dataset(paths.dataset_dir, split)) {
            auto pair = data::select_frame_pair(clip, strategy, cfg.data.window, 0);
            auto I0 = ag::constant(plane_tensor(pair.I0, clip.H, clip.W));
            auto I1 = ag::constant(plane_tensor(pair.I1, clip.H, clip.W));
            auto app = model.encode(I0, I1);
            auto mv = model.motion_vector(model.motion(app)); // [1, dim]
            store::FeatureRecord r;
            r.id = clip.id;
            r.values.resize(mv->val.data.size());
            for (size_t i = 0; i < r.values.size(); ++i) r.values[i] = float(mv->val.data[i]);
            recs.push_back(std::move(r));
        }
    }
    store::write_features(paths.motion(), recs);
    mark_done(paths, stage);
    std::cout << "[extract-motion] " << recs.size() << " motion vectors of dim "
              << model.motion_dim() << "\n";
}

void run_train_vae(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "train-vae";
    if (skip_if_done(paths, stage)) return;
    require_artifact(paths.manifest(), "phantom-gen");
    auto train_clips = data::load_video_dataset(paths.dataset_dir, "train");
    if (train_clips.empty()) throw PreconditionError("dataset has no training clips");

    diff::VaeTrainStats stats;
    auto vae = diff::train_vae(train_clips, config::vae_config(cfg), cfg.diffusion.vae.steps,
                               cfg.seed, &stats);
    store::write_checkpoint(paths.vae_ckpt(),
                            vae.to_checkpoint(config::config_hash(cfg), cfg.diffusion.vae.steps));
    write_losses(paths.losses("vae"), stats.total);

    // posterior-mean latents for both splits feed the generative stage
    std::vector<diff::LatentClip> latents;
    for (const char* split : {"train", "val"})
        for (const auto& clip : data::load_video_dataset(paths.dataset_dir, split))
            latents.push_back({clip.id, vae.encode_clip(clip)});
    diff::write_latent_store(paths.latents(), latents);
    mark_done(paths, stage);
    std::cout << "[train-vae] final loss " << (stats.total.empty() ? 0.0 : stats.total.back())
              << ", " << latents.size() << " clips encoded\n";
}

void run_train_lvdm(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "train-lvdm";
    if (skip_if_done(paths, stage)) return;
    require_artifact(paths.latents(), "train-vae");
    require_artifact(paths.motion(), "extract-motion");

    auto latents = diff::read_latent_store(paths.latents());
    auto motions = store::read_features(paths.motion());

    std::set<std::string> train_ids;
    for (const auto& [id, split] : read_manifest(paths.manifest()))
        if (split == "train") train_ids.insert(id);
    std::vector<diff::LatentClip> train_latents;
    for (auto& lc : latents)
        if (train_ids.count(lc.id)) train_latents.push_back(std::move(lc));
    if (train_latents.empty()) throw PreconditionError("latent store has no training clips");

    auto sched = config::noise_schedule(cfg);
    std::vector<double> losses;
    auto den = diff::train_lvdm(train_latents, motions, sched, config::denoiser_config(cfg),
                                cfg.diffusion.lr, cfg.diffusion.steps, cfg.seed, &losses);
    store::write_checkpoint(paths.lvdm_ckpt(),
                            den.to_checkpoint(config::config_hash(cfg), cfg.diffusion.steps));
    write_losses(paths.losses("lvdm"), losses);
    mark_done(paths, stage);
    std::cout << "[train-lvdm] " << train_latents.size() << " clips, final loss "
              << (losses.empty() ? 0.0 : losses.back()) << "\n";
}

std::string run_sample(const config::RunConfig& cfg, const Paths& paths,
                       const SampleRequest& req) {
    require_artifact(paths.manifest(), "phantom-gen");
    require_artifact(paths.vae_ckpt(), "train-vae");
    require_artifact(paths.lvdm_ckpt(), "train-lvdm");
    require_artifact(paths.motion(), "extract-motion");

    std::string cond_id = req.cond_id.empty() ? first_val_id(paths) : req.cond_id;
    int64_t frames = req.frames > 0 ? req.frames : cfg.diffusion.sample_frames;
    std::string sid = "smp_" + cond_id + "_f" + std::to_string(frames) + "_s" +
                      std::to_string(req.noise_seed);
    std::string file = paths.sample_dir() + "/" + sid + ".mcvr";
    const std::string stage = "sample-" + sid;
    if (skip_if_done(paths, stage)) return file;

    diff::Vae vae(config::vae_config(cfg), cfg.seed);
    vae.load_parameters(store::read_checkpoint(paths.vae_ckpt()));
    diff::Denoiser den(config::denoiser_config(cfg), cfg.seed);
    den.load_parameters(store::read_checkpoint(paths.lvdm_ckpt()));

    Tensor cond;
    bool found = false;
    for (const auto& r : store::read_features(paths.motion()))
        if (r.id == cond_id) {
            cond = Tensor({int64_t(r.values.size())});
            for (size_t i = 0; i < r.values.size(); ++i) cond.data[i] = r.values[i];
            found = true;
            break;
        }
    if (!found) throw LookupError("no motion features for clip '" + cond_id + "'");

    auto sched = config::noise_schedule(cfg);
    auto clip = diff::sample_video(den, vae, sched, &cond, frames, cfg.data.height / 4,
                                   cfg.data.width / 4, diff::sampler_from(cfg.diffusion.sampler),
                                   req.noise_seed);
    clip.id = sid;
    fs::create_directories(paths.sample_dir());
    store::write_video(file, to_u8(clip));
    std::ofstream man(paths.sample_manifest(), std::ios::app);
    man << sid << "," << cond_id << "," << frames << "," << req.noise_seed << "," << sid
        << ".mcvr\n";
    mark_done(paths, stage);
    std::cout << "[sample] wrote " << file << " conditioned on " << cond_id << "\n";
    return file;
}

namespace {

// Default sampling sweep for a full run: one clip per motion class when the
// sidecar tells the classes apart, two noise seeds otherwise.
void run_sample_stage(const config::RunConfig& cfg, const Paths& paths) {
    auto rows = read_manifest(paths.manifest());
    auto specs = load_spec_sidecar(paths.spec_sidecar());

    std::vector<std::string> cond_ids;
    std::map<double, std::string> by_class;
    for (const auto& [id, split] : rows) {
        if (split != "val") continue;
        auto it = specs.find(id);
        if (it == specs.end()) continue;
        by_class.emplace(it->second.pulse_amplitude, id);
    }
    for (const auto& [amp, id] : by_class) cond_ids.push_back(id);

    if (cond_ids.size() >= 2) {
        for (const auto& id : cond_ids) run_sample(cfg, paths, {id, 0, 0});
    } else {
        std::string id = cond_ids.empty() ? first_val_id(paths) : cond_ids.front();
        run_sample(cfg, paths, {id, 0, 0});
        run_sample(cfg, paths, {id, 0, 1});
    }
}

} // namespace

metrics::MetricReport run_evaluate(const config::RunConfig& cfg, const Paths& paths) {
    const std::string stage = "evaluate";
    if (stage_done(paths, stage) && fs::exists(paths.report_json())) {
        std::cout << "[evaluate] already complete, reusing " << paths.report_json() << "\n";
        std::ifstream in(paths.report_json());
        return report_from_json(json::parse(in));
    }
    require_artifact(paths.manifest(), "phantom-gen");
    require_artifact(paths.mafe_ckpt(), "train-mafe");

    auto val_clips = data::load_video_dataset(paths.dataset_dir, "val");
    if (val_clips.empty()) throw PreconditionError("dataset has no validation clips");
    auto specs = load_spec_sidecar(paths.spec_sidecar());

    mafe::Mafe model(config::mafe_config(cfg), cfg.seed);
    model.load_parameters(store::read_checkpoint(paths.mafe_ckpt()));
    auto strategy = data::pair_strategy_from(cfg.data.pair_strategy);

    metrics::MetricReport rep;
    rep.config_hash = config::config_hash(cfg);
    rep.clip_lengths = cfg.eval.clip_lengths;

    std::vector<double> psnrs, base_psnrs, ssims, epes;
    {
        ag::NoGrad ng;
        for (const auto& clip : val_clips) {
            for (const auto& pair : data::enumerate_pairs(clip, strategy, cfg.data.window)) {
                auto I0 = ag::constant(plane_tensor(pair.I0, clip.H, clip.W));
                auto I1 = ag::constant(plane_tensor(pair.I1, clip.H, clip.W));
                auto app = model.encode(I0, I1);
                auto mot = model.motion(app);
                auto pred = model.synthesize(I0, I1, app, mot);

                Tensor pi({clip.H, clip.W}, pred.image->val.data);
                psnrs.push_back(metrics::psnr(pi, pair.IGT, 1.0));
                Tensor avg({clip.H, clip.W});
                for (size_t i = 0; i < avg.data.size(); ++i)
                    avg.data[i] = 0.5 * (pair.I0.data[i] + pair.I1.data[i]);
                base_psnrs.push_back(metrics::psnr(avg, pair.IGT, 1.0));
                if (clip.H >= 11 && clip.W >= 11) ssims.push_back(metrics::ssim(pi, pair.IGT));

                auto it = specs.find(clip.id);
                if (it != specs.end()) {
                    auto analytic = data::phantom_flow_between(it->second, pair.i0, pair.i1);
                    data::FlowField predF;
                    predF.u = Tensor({clip.H, clip.W});
                    predF.v = Tensor({clip.H, clip.W});
                    predF.mask = Tensor({clip.H, clip.W}, 1.0);
                    const auto& f0 = pred.flow_t0->val;
                    const auto& f1 = pred.flow_t1->val;
                    int64_t plane = clip.H * clip.W;
                    for (int64_t i = 0; i < plane; ++i) {
                        // full pair displacement from the two half warps
                        predF.u.data[size_t(i)] = f1.data[size_t(i)] - f0.data[size_t(i)];
                        predF.v.data[size_t(i)] =
                            f1.data[size_t(plane + i)] - f0.data[size_t(plane + i)];
                    }
                    epes.push_back(metrics::endpoint_error(predF, analytic));
                }
            }
        }
    }
    rep.add_with_std("psnr", mean_of(psnrs), std_of(psnrs), "validation pairs");
    rep.add_with_std("psnr_baseline", mean_of(base_psnrs), std_of(base_psnrs),
                     "frame-average baseline");
    if (!ssims.empty()) rep.add_with_std("ssim", mean_of(ssims), std_of(ssims), "validation pairs");
    if (!epes.empty())
        rep.add_with_std("epe", mean_of(epes), std_of(epes), "against analytic phantom flow");
    else
        std::cout << "[evaluate] no phantom sidecar, flow endpoint error skipped\n";

    // generated clips, when the sampling stage has run
    std::vector<data::VideoClip> samples;
    for (const auto& row : read_sample_manifest(paths.sample_manifest())) {
        auto v = store::read_video(paths.sample_dir() + "/" + row.file);
        samples.push_back(clip_from_u8(v, row.id));
    }
    if (samples.size() >= 2) {
        metrics::RandomProjectionEmbedder emb(cfg.eval.embedder_seed, cfg.eval.embedder_dim);
        for (int64_t L : cfg.eval.clip_lengths) {
            try {
                double d = metrics::fvd(val_clips, samples, emb, L);
                rep.add("fvd_" + std::to_string(L), d,
                        "embedder=" + emb.name() + ",clip_len=" + std::to_string(L));
            } catch (const PreconditionError& e) {
                std::cout << "[evaluate] fvd at clip length " << L << " skipped: " << e.what()
                          << "\n";
            }
        }
    } else {
        std::cout << "[evaluate] fewer than two samples, fvd skipped (run `sample` first)\n";
    }

    // class posterior over motion energy, fitted on the training split
    if (!samples.empty() && !specs.empty()) {
        std::map<double, std::vector<double>> by_class;
        for (const auto& clip : data::load_video_dataset(paths.dataset_dir, "train")) {
            auto it = specs.find(clip.id);
            if (it != specs.end()) by_class[it->second.pulse_amplitude].push_back(clip_energy(clip));
        }
        if (by_class.size() >= 2) {
            std::vector<std::pair<double, double>> stats; // mean, std
            for (const auto& [amp, es] : by_class)
                stats.emplace_back(mean_of(es), std::max(std_of(es), 1e-6));
            int64_t K = int64_t(stats.size());
            Tensor probs({int64_t(samples.size()), K});
            for (size_t s = 0; s < samples.size(); ++s) {
                double e = clip_energy(samples[s]);
                double norm = 0.0;
                std::vector<double> dens(size_t(K), 0.0);
                for (int64_t k = 0; k < K; ++k) {
                    double mu = stats[size_t(k)].first, sd = stats[size_t(k)].second;
                    dens[size_t(k)] = std::exp(-0.5 * (e - mu) * (e - mu) / (sd * sd)) / sd;
                    norm += dens[size_t(k)];
                }
                for (int64_t k = 0; k < K; ++k)
                    probs.data[s * size_t(K) + size_t(k)] =
                        norm > 0.0 ? dens[size_t(k)] / norm : 1.0 / double(K);
            }
            auto [is_value, is_std] = metrics::inception_score(probs, 10);
            rep.add_with_std("is", is_value, is_std,
                             "motion-energy posterior over " + std::to_string(K) + " classes");
        } else {
            std::cout << "[evaluate] single motion class, inception score skipped\n";
        }
    } else if (samples.empty()) {
        std::cout << "[evaluate] no samples, inception score skipped\n";
    }

    write_report_files(paths, rep);
    mark_done(paths, stage);
    std::cout << "[evaluate] report written to " << paths.report_txt() << "\n";
    return rep;
}

void run_pipeline(const config::RunConfig& cfg, const Paths& paths,
                  const std::vector<std::string>& stages) {
    const auto& order = stage_order();
    std::set<std::string> wanted(stages.begin(), stages.end());
    for (const auto& s : wanted)
        if (std::find(order.begin(), order.end(), s) == order.end())
            throw ConfigError("unknown stage '" + s + "'");
    for (const auto& s : order) {
        if (!stages.empty() && !wanted.count(s)) continue;
        if (s == "phantom-gen") run_phantom_gen(cfg, paths);
        else if (s == "train-reid") run_train_reid(cfg, paths);
        else if (s == "gen-flow") run_gen_flow(cfg, paths);
        else if (s == "train-mafe") run_train_mafe(cfg, paths);
        else if (s == "extract-motion") run_extract_motion(cfg, paths);
        else if (s == "train-vae") run_train_vae(cfg, paths);
        else if (s == "train-lvdm") run_train_lvdm(cfg, paths);
        else if (s == "sample") run_sample_stage(cfg, paths);
        else if (s == "evaluate") run_evaluate(cfg, paths);
    }
}

std::vector<AblationCell> run_ablation(const config::RunConfig& cfg, const Paths& paths,
                                       const std::vector<double>& lambda1s,
                                       const std::vector<double>& lambda2s) {
    if (lambda1s.empty() || lambda2s.empty())
        throw ConfigError("ablation grid must not be empty");
    auto bundles = build_bundles(cfg, paths);
    if (bundles.empty()) throw PreconditionError("no training pairs to learn from");

    auto val_clips = data::load_video_dataset(paths.dataset_dir, "val");
    if (val_clips.empty()) throw PreconditionError("dataset has no validation clips");
    auto strategy = data::pair_strategy_from(cfg.data.pair_strategy);

    auto held_out_psnr = [&](const mafe::Mafe& model) {
        ag::NoGrad ng;
        std::vector<double> vals;
        for (const auto& clip : val_clips)
            for (const auto& pair : data::enumerate_pairs(clip, strategy, cfg.data.window)) {
                auto I0 = ag::constant(plane_tensor(pair.I0, clip.H, clip.W));
                auto I1 = ag::constant(plane_tensor(pair.I1, clip.H, clip.W));
                auto app = model.encode(I0, I1);
                auto pred = model.synthesize(I0, I1, app, model.motion(app));
                Tensor pi({clip.H, clip.W}, pred.image->val.data);
                vals.push_back(metrics::psnr(pi, pair.IGT, 1.0));
            }
        return mean_of(vals);
    };

    std::vector<AblationCell> cells;
    for (double l1 : lambda1s) {
        for (double l2 : lambda2s) {
            AblationCell cell;
            cell.lambda1 = l1;
            cell.lambda2 = l2;
            auto cc = cfg;
            cc.mafe.lambda1 = l1;
            cc.mafe.lambda2 = l2;
            mafe::TrainStats stats;
            try {
                auto model = mafe::train_mafe(bundles, config::mafe_config(cc), cfg.mafe.steps,
                                              cfg.seed, &stats);
                cell.psnr = held_out_psnr(model);
                cell.total = tail_mean(stats.total, 10);
                cell.lap = tail_mean(stats.lap, 10);
                cell.reid = tail_mean(stats.reid, 10);
                cell.flow = tail_mean(stats.flow, 10);
                bool finite = std::isfinite(cell.psnr) && std::isfinite(cell.total) &&
                              std::isfinite(cell.lap) && std::isfinite(cell.reid) &&
                              std::isfinite(cell.flow);
                for (double v : stats.total)
                    if (!std::isfinite(v)) finite = false;
                cell.failed = !finite;
            } catch (const NumericError& e) {
                cell.failed = true;
                std::cout << "[ablate] cell lambda1=" << l1 << " lambda2=" << l2
                          << " failed: " << e.what() << "\n";
            }
            std::cout << "[ablate] lambda1=" << l1 << " lambda2=" << l2
                      << (cell.failed ? " FAILED" : "") << " psnr=" << cell.psnr
                      << " total=" << cell.total << "\n";
            cells.push_back(cell);
        }
    }

    std::ofstream txt(paths.ablation_txt());
    txt << "lambda1\\lambda2";
    for (double l2 : lambda2s) txt << "\t" << l2;
    txt << "\n";
    size_t i = 0;
    for (double l1 : lambda1s) {
        txt << l1;
        for (size_t j = 0; j < lambda2s.size(); ++j, ++i) {
            if (cells[i].failed) txt << "\tfailed";
            else txt << "\t" << cells[i].psnr;
        }
        txt << "\n";
    }
    json jc = json::array();
    for (const auto& c : cells) {
        json e;
        e["lambda1"] = c.lambda1;
        e["lambda2"] = c.lambda2;
        e["failed"] = c.failed;
        e["psnr"] = c.psnr;
        e["total"] = c.total;
        e["lap"] = c.lap;
        e["reid"] = c.reid;
        e["flow"] = c.flow;
        jc.push_back(e);
    }
    json out;
    out["lambda1"] = lambda1s;
    out["lambda2"] = lambda2s;
    out["cells"] = jc;
    std::ofstream js(paths.ablation_json());
    js << out.dump(2) << "\n";
    return cells;
}

void run_report(const std::vector<std::string>& report_jsons, const std::string& out_path) {
    if (report_jsons.empty()) throw ConfigError("no report files given");
    std::vector<metrics::MetricReport> reps;
    std::vector<std::string> labels;
    for (const auto& p : report_jsons) {
        std::ifstream in(p);
        if (!in) throw IoError("cannot open report '" + p + "'");
        json j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw IoError("report '" + p + "' is not valid json");
        reps.push_back(report_from_json(j));
        labels.push_back(config::hash_hex(reps.back().config_hash));
    }

    std::vector<std::string> keys; // first-appearance order across all reports
    for (const auto& r : reps)
        for (const auto& e : r.entries)
            if (std::find(keys.begin(), keys.end(), e.name) == keys.end()) keys.push_back(e.name);

    std::ostringstream table;
    table << "metric";
    for (const auto& l : labels) table << "\t" << l;
    table << "\n";
    table.precision(6);
    for (const auto& k : keys) {
        table << k;
        for (const auto& r : reps) {
            const metrics::MetricReport::Entry* found = nullptr;
            for (const auto& e : r.entries)
                if (e.name == k) {
                    found = &e;
                    break;
                }
            if (!found) {
                table << "\t-";
            } else if (found->has_std) {
                table << "\t" << found->value << " (" << found->stddev << ")";
            } else {
                table << "\t" << found->value;
            }
        }
        table << "\n";
    }
    if (out_path.empty()) {
        std::cout << table.str();
    } else {
        std::ofstream out(out_path);
        if (!out) throw IoError("cannot write report table '" + out_path + "'");
        out << table.str();
    }
}

} // namespace mcdm::pipeline
