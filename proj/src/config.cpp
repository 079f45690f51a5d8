// SPDX-License-Identifier: Apache-2.0
#include "mcdm/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mcdm/errors.hpp"
#include "mcdm/rng.hpp"

namespace mcdm::config {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw ConfigError("config key '" + path + "' " + what);
}

int64_t as_i64(const json& v, const std::string& path) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) bad(path, "must be an integer");
    return v.get<int64_t>();
}

uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<uint64_t>();
    if (v.is_number_integer() && v.get<int64_t>() >= 0) return uint64_t(v.get<int64_t>());
    bad(path, "must be a non-negative integer");
}

double as_f64(const json& v, const std::string& path) {
    if (!v.is_number()) bad(path, "must be a number");
    return v.get<double>();
}

bool as_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) bad(path, "must be a boolean");
    return v.get<bool>();
}

std::string as_str(const json& v, const std::string& path) {
    if (!v.is_string()) bad(path, "must be a string");
    return v.get<std::string>();
}

std::vector<int64_t> as_i64_vec(const json& v, const std::string& path) {
    if (!v.is_array()) bad(path, "must be an array of integers");
    std::vector<int64_t> out;
    for (const auto& e : v) {
        if (!e.is_number_integer() && !e.is_number_unsigned()) bad(path, "must be an array of integers");
        out.push_back(e.get<int64_t>());
    }
    return out;
}

std::vector<double> as_f64_vec(const json& v, const std::string& path) {
    if (!v.is_array()) bad(path, "must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) bad(path, "must be an array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

void require_object(const json& v, const std::string& path) {
    if (!v.is_object()) bad(path, "must be an object");
}

void apply_data(DataSection& s, const json& j, const std::string& p) {
    require_object(j, p);
    for (const auto& [k, v] : j.items()) {
        std::string kp = p + "." + k;
        if (k == "root") s.root = as_str(v, kp);
        else if (k == "count") s.count = as_i64(v, kp);
        else if (k == "frames") s.frames = as_i64(v, kp);
        else if (k == "height") s.height = as_i64(v, kp);
        else if (k == "width") s.width = as_i64(v, kp);
        else if (k == "base_radius") s.base_radius = as_f64(v, kp);
        else if (k == "amplitudes") s.amplitudes = as_f64_vec(v, kp);
        else if (k == "period") s.period = as_i64(v, kp);
        else if (k == "speckle_sigma") s.speckle_sigma = as_f64(v, kp);
        else if (k == "cone_angle") s.cone_angle = as_f64(v, kp);
        else if (k == "val_fraction") s.val_fraction = as_f64(v, kp);
        else if (k == "window") s.window = as_i64(v, kp);
        else if (k == "pair_strategy") s.pair_strategy = as_str(v, kp);
        else throw ConfigError("unknown config key '" + kp + "'");
    }
}

void apply_mafe(MafeSection& s, const json& j, const std::string& p) {
    require_object(j, p);
    for (const auto& [k, v] : j.items()) {
        std::string kp = p + "." + k;
        if (k == "channels") s.channels = as_i64_vec(v, kp);
        else if (k == "attention_window") s.attention_window = as_i64(v, kp);
        else if (k == "head_channels") s.head_channels = as_i64(v, kp);
        else if (k == "pyramid_levels") s.pyramid_levels = as_i64(v, kp);
        else if (k == "lambda1") s.lambda1 = as_f64(v, kp);
        else if (k == "lambda2") s.lambda2 = as_f64(v, kp);
        else if (k == "lr") s.lr = as_f64(v, kp);
        else if (k == "warmup") s.warmup = as_i64(v, kp);
        else if (k == "batch") s.batch = as_i64(v, kp);
        else if (k == "schedule") s.schedule = as_str(v, kp);
        else if (k == "steps") s.steps = as_i64(v, kp);
        else throw ConfigError("unknown config key '" + kp + "'");
    }
}

void apply_reid(ReidSection& s, const json& j, const std::string& p) {
    require_object(j, p);
    for (const auto& [k, v] : j.items()) {
        std::string kp = p + "." + k;
        if (k == "embed_dim") s.embed_dim = as_i64(v, kp);
        else if (k == "channels") s.channels = as_i64_vec(v, kp);
        else if (k == "lr") s.lr = as_f64(v, kp);
        else if (k == "batch_videos") s.batch_videos = as_i64(v, kp);
        else if (k == "steps") s.steps = as_i64(v, kp);
        else throw ConfigError("unknown config key '" + kp + "'");
    }
}

void apply_pseudo(PseudoSection& s, const json& j, const std::string& p) {
    require_object(j, p);
    for (const auto& [k, v] : j.items()) {
        std::string kp = p + "." + k;
        if (k == "tau") s.tau = as_f64(v, kp);
        else if (k == "patch") s.patch = as_i64(v, kp);
        else if (k == "search") s.search = as_i64(v, kp);
        else if (k == "stride") s.stride = as_i64(v, kp);
        else if (k == "method") s.method = as_str(v, kp);
        else if (k == "reid") apply_reid(s.reid, v, kp);
        else throw ConfigError("unknown config key '" + kp + "'");
    }
}

void apply_vae(VaeSection& s, const json& j, const std::string& p) {
    require_object(j, p);
    for (const auto& [k, v] : j.items()) {
        std::string kp = p + "." + k;
        if (k == "latent_channels") s.latent_channels = as_i64(v, kp);
        else if (k == "base_channels") s.base_channels = as_i64(v, kp);
        else if (k == "kl_weight") s.kl_weight = as_f64(v, kp);
        else if (k == "lr") s.lr = as_f64(v, kp);
        else if (k == "batch") s.batch = as_i64(v, kp);
        else if (k == "steps") s.steps = as_i64(v, kp);
        else throw ConfigError("unknown config key '" + kp + "'");
    }
}

void apply_diffusion(DiffusionSection& s, const json& j, const std::string& p) {
    require_object(j, p);
    for (const auto& [k, v] : j.items()) {
        std::string kp = p + "." + k;
        if (k == "t_steps") s.t_steps = as_i64(v, kp);
        else if (k == "beta_start") s.beta_start = as_f64(v, kp);
        else if (k == "beta_end") s.beta_end = as_f64(v, kp);
        else if (k == "blocks") s.blocks = as_i64(v, kp);
        else if (k == "base_channels") s.base_channels = as_i64(v, kp);
        else if (k == "embed_dim") s.embed_dim = as_i64(v, kp);
        else if (k == "groups") s.groups = as_i64(v, kp);
        else if (k == "temporal_attention") s.temporal_attention = as_bool(v, kp);
        else if (k == "p_drop") s.p_drop = as_f64(v, kp);
        else if (k == "lr") s.lr = as_f64(v, kp);
        else if (k == "steps") s.steps = as_i64(v, kp);
        else if (k == "sampler") s.sampler = as_str(v, kp);
        else if (k == "sample_frames") s.sample_frames = as_i64(v, kp);
        else if (k == "vae") apply_vae(s.vae, v, kp);
        else throw ConfigError("unknown config key '" + kp + "'");
    }
}

void apply_eval(EvalSection& s, const json& j, const std::string& p) {
    require_object(j, p);
    for (const auto& [k, v] : j.items()) {
        std::string kp = p + "." + k;
        if (k == "clip_lengths") s.clip_lengths = as_i64_vec(v, kp);
        else if (k == "embedder_seed") s.embedder_seed = as_u64(v, kp);
        else if (k == "embedder_dim") s.embedder_dim = as_i64(v, kp);
        else throw ConfigError("unknown config key '" + kp + "'");
    }
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

} // namespace

RunConfig parse_config(const json& j) {
    RunConfig cfg;
    require_object(j, "<root>");
    for (const auto& [k, v] : j.items()) {
        if (k == "seed") cfg.seed = as_u64(v, "seed");
        else if (k == "data") apply_data(cfg.data, v, "data");
        else if (k == "mafe") apply_mafe(cfg.mafe, v, "mafe");
        else if (k == "pseudo") apply_pseudo(cfg.pseudo, v, "pseudo");
        else if (k == "diffusion") apply_diffusion(cfg.diffusion, v, "diffusion");
        else if (k == "eval") apply_eval(cfg.eval, v, "eval");
        else throw ConfigError("unknown config key '" + k + "'");
    }
    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid json: " + e.what());
    }
    return parse_config(j);
}

void validate(const RunConfig& cfg) {
    const auto& d = cfg.data;
    check(d.count >= 1, "data.count must be >= 1");
    check(d.frames >= 2, "data.frames must be >= 2");
    check(d.height >= 16 && d.width >= 16, "data.height/width must be >= 16");
    check(d.height % 8 == 0 && d.width % 8 == 0,
          "data.height/width must be divisible by 8 (encoder and latent strides)");
    check(d.base_radius > 0.0, "data.base_radius must be > 0");
    check(!d.amplitudes.empty(), "data.amplitudes must not be empty");
    for (double a : d.amplitudes)
        check(a >= 0.0 && a < 1.0, "data.amplitudes entries must be in [0,1)");
    check(d.period >= 4, "data.period must be >= 4");
    check(d.speckle_sigma >= 0.0, "data.speckle_sigma must be >= 0");
    check(d.cone_angle > 0.0 && d.cone_angle <= 360.0, "data.cone_angle must be in (0,360]");
    check(d.val_fraction > 0.0 && d.val_fraction < 1.0, "data.val_fraction must be in (0,1)");
    check(d.window >= 2, "data.window must be >= 2");
    check(d.window < d.frames, "data.window must be < data.frames (a window spans window+1 frames)");
    data::pair_strategy_from(d.pair_strategy); // throws on unknown name

    const auto& m = cfg.mafe;
    check(m.channels.size() == 4, "mafe.channels must list 4 scales");
    for (int64_t c : m.channels) check(c >= 1, "mafe.channels entries must be >= 1");
    check(m.attention_window >= 3 && m.attention_window % 2 == 1,
          "mafe.attention_window must be odd and >= 3");
    check(m.head_channels >= 1, "mafe.head_channels must be >= 1");
    check(m.pyramid_levels >= 1, "mafe.pyramid_levels must be >= 1");
    check(m.lambda1 >= 0.0, "mafe.lambda1 must be >= 0");
    check(m.lambda2 >= 0.0, "mafe.lambda2 must be >= 0");
    check(m.lr > 0.0, "mafe.lr must be > 0");
    check(m.warmup >= 0, "mafe.warmup must be >= 0");
    check(m.batch >= 1, "mafe.batch must be >= 1");
    check(m.steps >= 1, "mafe.steps must be >= 1");
    check(m.schedule == "cosine" || m.schedule == "constant",
          "mafe.schedule must be cosine or constant");

    const auto& ps = cfg.pseudo;
    check(ps.tau > 0.0, "pseudo.tau must be > 0");
    check(ps.patch >= 3 && ps.patch % 2 == 1, "pseudo.patch must be odd and >= 3");
    check(ps.search >= 1, "pseudo.search must be >= 1");
    check(ps.stride >= 1, "pseudo.stride must be >= 1");
    check(ps.method == "block_match" || ps.method == "import",
          "pseudo.method must be block_match or import");
    check(ps.reid.embed_dim >= 2, "pseudo.reid.embed_dim must be >= 2");
    check(ps.reid.embed_dim == m.channels[3],
          "pseudo.reid.embed_dim must equal mafe.channels[3] "
          "(the embeddings supervise the deepest appearance scale)");
    check(!ps.reid.channels.empty(), "pseudo.reid.channels must not be empty");
    for (int64_t c : ps.reid.channels) check(c >= 1, "pseudo.reid.channels entries must be >= 1");
    check(ps.reid.lr > 0.0, "pseudo.reid.lr must be > 0");
    check(ps.reid.batch_videos >= 2, "pseudo.reid.batch_videos must be >= 2");
    check(ps.reid.steps >= 1, "pseudo.reid.steps must be >= 1");

    const auto& df = cfg.diffusion;
    check(df.t_steps >= 1, "diffusion.t_steps must be >= 1");
    check(df.beta_start > 0.0 && df.beta_start < 1.0, "diffusion.beta_start must be in (0,1)");
    check(df.beta_end >= df.beta_start && df.beta_end < 1.0,
          "diffusion.beta_end must be in [beta_start,1)");
    check(df.blocks >= 1, "diffusion.blocks must be >= 1");
    check(df.base_channels >= 1, "diffusion.base_channels must be >= 1");
    check(df.embed_dim >= 2 && df.embed_dim % 2 == 0, "diffusion.embed_dim must be even and >= 2");
    check(df.groups >= 1, "diffusion.groups must be >= 1");
    check(df.base_channels % df.groups == 0,
          "diffusion.base_channels must be divisible by diffusion.groups");
    check(df.p_drop >= 0.0 && df.p_drop <= 1.0, "diffusion.p_drop must be in [0,1]");
    check(df.lr > 0.0, "diffusion.lr must be > 0");
    check(df.steps >= 1, "diffusion.steps must be >= 1");
    diff::sampler_from(df.sampler); // throws on unknown name
    check(df.sample_frames >= 1, "diffusion.sample_frames must be >= 1");
    check(df.vae.latent_channels >= 1, "diffusion.vae.latent_channels must be >= 1");
    check(df.vae.base_channels >= 1, "diffusion.vae.base_channels must be >= 1");
    check(df.vae.kl_weight >= 0.0, "diffusion.vae.kl_weight must be >= 0");
    check(df.vae.lr > 0.0, "diffusion.vae.lr must be > 0");
    check(df.vae.batch >= 1, "diffusion.vae.batch must be >= 1");
    check(df.vae.steps >= 1, "diffusion.vae.steps must be >= 1");

    const auto& ev = cfg.eval;
    check(!ev.clip_lengths.empty(), "eval.clip_lengths must not be empty");
    for (int64_t l : ev.clip_lengths) check(l >= 4, "eval.clip_lengths entries must be >= 4");
    check(ev.embedder_dim >= 1, "eval.embedder_dim must be >= 1");
}

nlohmann::json to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    json d;
    d["root"] = cfg.data.root;
    d["count"] = cfg.data.count;
    d["frames"] = cfg.data.frames;
    d["height"] = cfg.data.height;
    d["width"] = cfg.data.width;
    d["base_radius"] = cfg.data.base_radius;
    d["amplitudes"] = cfg.data.amplitudes;
    d["period"] = cfg.data.period;
    d["speckle_sigma"] = cfg.data.speckle_sigma;
    d["cone_angle"] = cfg.data.cone_angle;
    d["val_fraction"] = cfg.data.val_fraction;
    d["window"] = cfg.data.window;
    d["pair_strategy"] = cfg.data.pair_strategy;
    j["data"] = d;
    json m;
    m["channels"] = cfg.mafe.channels;
    m["attention_window"] = cfg.mafe.attention_window;
    m["head_channels"] = cfg.mafe.head_channels;
    m["pyramid_levels"] = cfg.mafe.pyramid_levels;
    m["lambda1"] = cfg.mafe.lambda1;
    m["lambda2"] = cfg.mafe.lambda2;
    m["lr"] = cfg.mafe.lr;
    m["warmup"] = cfg.mafe.warmup;
    m["batch"] = cfg.mafe.batch;
    m["schedule"] = cfg.mafe.schedule;
    m["steps"] = cfg.mafe.steps;
    j["mafe"] = m;
    json p;
    p["tau"] = cfg.pseudo.tau;
    p["patch"] = cfg.pseudo.patch;
    p["search"] = cfg.pseudo.search;
    p["stride"] = cfg.pseudo.stride;
    p["method"] = cfg.pseudo.method;
    json r;
    r["embed_dim"] = cfg.pseudo.reid.embed_dim;
    r["channels"] = cfg.pseudo.reid.channels;
    r["lr"] = cfg.pseudo.reid.lr;
    r["batch_videos"] = cfg.pseudo.reid.batch_videos;
    r["steps"] = cfg.pseudo.reid.steps;
    p["reid"] = r;
    j["pseudo"] = p;
    json f;
    f["t_steps"] = cfg.diffusion.t_steps;
    f["beta_start"] = cfg.diffusion.beta_start;
    f["beta_end"] = cfg.diffusion.beta_end;
    f["blocks"] = cfg.diffusion.blocks;
    f["base_channels"] = cfg.diffusion.base_channels;
    f["embed_dim"] = cfg.diffusion.embed_dim;
    f["groups"] = cfg.diffusion.groups;
    f["temporal_attention"] = cfg.diffusion.temporal_attention;
    f["p_drop"] = cfg.diffusion.p_drop;
    f["lr"] = cfg.diffusion.lr;
    f["steps"] = cfg.diffusion.steps;
    f["sampler"] = cfg.diffusion.sampler;
    f["sample_frames"] = cfg.diffusion.sample_frames;
    json v;
    v["latent_channels"] = cfg.diffusion.vae.latent_channels;
    v["base_channels"] = cfg.diffusion.vae.base_channels;
    v["kl_weight"] = cfg.diffusion.vae.kl_weight;
    v["lr"] = cfg.diffusion.vae.lr;
    v["batch"] = cfg.diffusion.vae.batch;
    v["steps"] = cfg.diffusion.vae.steps;
    f["vae"] = v;
    j["diffusion"] = f;
    json e;
    e["clip_lengths"] = cfg.eval.clip_lengths;
    e["embedder_seed"] = cfg.eval.embedder_seed;
    e["embedder_dim"] = cfg.eval.embedder_dim;
    j["eval"] = e;
    return j;
}

uint64_t config_hash(const RunConfig& cfg) {
    // json objects keep keys sorted, so the dump is canonical
    return fnv1a64(to_json(cfg).dump());
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

mafe::MafeConfig mafe_config(const RunConfig& cfg) {
    mafe::MafeConfig m;
    m.channels = cfg.mafe.channels;
    m.attention_window = int(cfg.mafe.attention_window);
    m.head_channels = int(cfg.mafe.head_channels);
    m.pyramid_levels = int(cfg.mafe.pyramid_levels);
    m.lambda1 = cfg.mafe.lambda1;
    m.lambda2 = cfg.mafe.lambda2;
    m.lr = cfg.mafe.lr;
    m.warmup = cfg.mafe.warmup;
    m.batch = cfg.mafe.batch;
    m.schedule = cfg.mafe.schedule;
    return m;
}

pseudo::ReidConfig reid_config(const RunConfig& cfg) {
    pseudo::ReidConfig r;
    r.embed_dim = cfg.pseudo.reid.embed_dim;
    r.channels = cfg.pseudo.reid.channels;
    r.lr = cfg.pseudo.reid.lr;
    r.tau = cfg.pseudo.tau;
    r.batch_videos = cfg.pseudo.reid.batch_videos;
    r.steps = cfg.pseudo.reid.steps;
    return r;
}

diff::VaeConfig vae_config(const RunConfig& cfg) {
    diff::VaeConfig v;
    v.latent_channels = cfg.diffusion.vae.latent_channels;
    v.base_channels = cfg.diffusion.vae.base_channels;
    v.kl_weight = cfg.diffusion.vae.kl_weight;
    v.lr = cfg.diffusion.vae.lr;
    v.batch = cfg.diffusion.vae.batch;
    return v;
}

diff::DenoiserConfig denoiser_config(const RunConfig& cfg) {
    diff::DenoiserConfig d;
    d.residual_blocks = cfg.diffusion.blocks;
    d.base_channels = cfg.diffusion.base_channels;
    d.latent_channels = cfg.diffusion.vae.latent_channels;
    d.cond_dim = 2 * (cfg.mafe.channels[2] + cfg.mafe.channels[3]);
    d.embed_dim = cfg.diffusion.embed_dim;
    d.groups = cfg.diffusion.groups;
    d.temporal_attention = cfg.diffusion.temporal_attention;
    d.p_drop = cfg.diffusion.p_drop;
    return d;
}

diff::NoiseSchedule noise_schedule(const RunConfig& cfg) {
    return diff::make_noise_schedule(cfg.diffusion.t_steps, cfg.diffusion.beta_start,
                                     cfg.diffusion.beta_end);
}

data::PhantomSpec phantom_spec(const RunConfig& cfg, int64_t index) {
    if (index < 0) throw PreconditionError("phantom index must be >= 0");
    data::PhantomSpec s;
    s.base_radius = cfg.data.base_radius;
    s.pulse_amplitude = cfg.data.amplitudes[size_t(index) % cfg.data.amplitudes.size()];
    s.period = cfg.data.period;
    s.speckle_sigma = cfg.data.speckle_sigma;
    s.cone_angle_deg = cfg.data.cone_angle;
    s.seed = cfg.seed * 1000003ull + uint64_t(index);
    s.height = cfg.data.height;
    s.width = cfg.data.width;
    return s;
}

} // namespace mcdm::config
