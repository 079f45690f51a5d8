// SPDX-License-Identifier: Apache-2.0
#include "mcdm/store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "mcdm/errors.hpp"

namespace mcdm::store {

namespace {

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open '" + path + "' for writing");
    }
    void bytes(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), std::streamsize(n));
        if (!out_) throw IoError("write failed on '" + path_ + "'");
    }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u16(uint16_t v) {
        uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
        bytes(b, 2);
    }
    void u32(uint32_t v) {
        uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
        bytes(b, 4);
    }
    void u64(uint64_t v) {
        uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = uint8_t(v >> (8 * i));
        bytes(b, 8);
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void f32s(const float* p, size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * 4);
        } else {
            for (size_t i = 0; i < n; ++i) f32(p[i]);
        }
    }

private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open '" + path + "' for reading");
        in_.seekg(0, std::ios::end);
        size_ = in_.tellg();
        in_.seekg(0, std::ios::beg);
    }
    void bytes(void* p, size_t n) {
        in_.read(static_cast<char*>(p), std::streamsize(n));
        if (size_t(in_.gcount()) != n)
            throw IoError("truncated file '" + path_ + "'");
    }
    uint8_t u8() {
        uint8_t v;
        bytes(&v, 1);
        return v;
    }
    uint16_t u16() {
        uint8_t b[2];
        bytes(b, 2);
        return uint16_t(b[0]) | uint16_t(b[1]) << 8;
    }
    uint32_t u32() {
        uint8_t b[4];
        bytes(b, 4);
        return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
    }
    uint64_t u64() {
        uint8_t b[8];
        bytes(b, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void f32s(float* p, size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * 4);
        } else {
            for (size_t i = 0; i < n; ++i) p[i] = f32();
        }
    }
    void expect_magic(const char* magic) {
        char got[5] = {0, 0, 0, 0, 0};
        bytes(got, 4);
        if (std::memcmp(got, magic, 4) != 0)
            throw IoError("bad magic in '" + path_ + "': expected \"" + magic + "\", got \"" +
                          std::string(got, 4) + "\"");
    }
    void expect_version(uint32_t want) {
        uint32_t got = u32();
        if (got != want)
            throw IoError("unsupported version " + std::to_string(got) + " in '" + path_ +
                          "' (expected " + std::to_string(want) + ")");
    }
    void expect_consumed() {
        if (in_.tellg() != std::streampos(size_))
            throw IoError("trailing data in '" + path_ + "'");
    }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ifstream in_;
    std::streamoff size_ = 0;
};

} // namespace

// ---- feature store ----

void write_features(const std::string& path, const std::vector<FeatureRecord>& records) {
    std::unordered_set<std::string> ids;
    size_t dim = records.empty() ? 0 : records[0].values.size();
    for (const auto& r : records) {
        if (!ids.insert(r.id).second)
            throw PreconditionError("duplicate feature id '" + r.id + "'");
        if (r.values.size() != dim)
            throw PreconditionError("feature dim mismatch: '" + r.id + "' has " +
                                    std::to_string(r.values.size()) + ", expected " +
                                    std::to_string(dim));
        for (float v : r.values)
            if (!std::isfinite(v))
                throw PreconditionError("non-finite value in feature '" + r.id + "'");
        if (r.id.size() > 65535) throw PreconditionError("feature id too long: '" + r.id + "'");
    }
    Writer w(path);
    w.bytes("MCFS", 4);
    w.u32(1);
    w.u32(uint32_t(records.size()));
    for (const auto& r : records) {
        w.u16(uint16_t(r.id.size()));
        w.bytes(r.id.data(), r.id.size());
        w.u32(uint32_t(r.values.size()));
        w.f32s(r.values.data(), r.values.size());
    }
}

std::vector<FeatureRecord> read_features(const std::string& path) {
    Reader r(path);
    r.expect_magic("MCFS");
    r.expect_version(1);
    uint32_t count = r.u32();
    std::vector<FeatureRecord> out;
    out.reserve(count);
    std::unordered_set<std::string> ids;
    int64_t dim = -1;
    for (uint32_t i = 0; i < count; ++i) {
        FeatureRecord rec;
        uint16_t len = r.u16();
        rec.id.resize(len);
        r.bytes(rec.id.data(), len);
        if (!ids.insert(rec.id).second)
            throw IoError("duplicate feature id '" + rec.id + "' in '" + path + "'");
        uint32_t d = r.u32();
        if (dim < 0) dim = d;
        if (int64_t(d) != dim)
            throw IoError("feature dim mismatch in '" + path + "': '" + rec.id + "' has " +
                          std::to_string(d) + ", expected " + std::to_string(dim));
        rec.values.resize(d);
        r.f32s(rec.values.data(), d);
        for (float v : rec.values)
            if (!std::isfinite(v))
                throw IoError("non-finite value in feature '" + rec.id + "' in '" + path + "'");
        out.push_back(std::move(rec));
    }
    r.expect_consumed();
    return out;
}

// ---- flow store ----

void write_flows(const std::string& path, const FlowSeries& flows) {
    if (flows.H < 1 || flows.W < 1 || flows.T < 0)
        throw PreconditionError("flow series needs H,W >= 1 and T >= 0");
    if (int64_t(flows.data.size()) != flows.T * 2 * flows.H * flows.W)
        throw PreconditionError("flow series data size does not match T*2*H*W");
    for (float v : flows.data)
        if (!std::isfinite(v)) throw PreconditionError("non-finite value in flow series");
    Writer w(path);
    w.bytes("MCFL", 4);
    w.u32(1);
    w.u32(uint32_t(flows.H));
    w.u32(uint32_t(flows.W));
    w.u32(uint32_t(flows.T));
    w.f32s(flows.data.data(), flows.data.size());
}

FlowSeries read_flows(const std::string& path) {
    Reader r(path);
    r.expect_magic("MCFL");
    r.expect_version(1);
    FlowSeries fs;
    fs.H = r.u32();
    fs.W = r.u32();
    fs.T = r.u32();
    if (fs.H < 1 || fs.W < 1)
        throw IoError("invalid flow dimensions in '" + path + "'");
    fs.data.resize(size_t(fs.T) * 2 * fs.H * fs.W);
    r.f32s(fs.data.data(), fs.data.size());
    for (float v : fs.data)
        if (!std::isfinite(v)) throw IoError("non-finite value in flow series '" + path + "'");
    r.expect_consumed();
    return fs;
}

// ---- video container ----

void write_video(const std::string& path, const VideoU8& video) {
    if (video.T < 1 || video.H < 1 || video.W < 1 || video.C < 1)
        throw PreconditionError("video needs positive T,H,W,C");
    if (int64_t(video.data.size()) != video.T * video.C * video.H * video.W)
        throw PreconditionError("video data size does not match T*C*H*W");
    Writer w(path);
    w.bytes("MCVR", 4);
    w.u32(1);
    w.f32(video.fps);
    w.u32(uint32_t(video.T));
    w.u32(uint32_t(video.H));
    w.u32(uint32_t(video.W));
    w.u32(uint32_t(video.C));
    w.bytes(video.data.data(), video.data.size());
}

VideoU8 read_video(const std::string& path) {
    Reader r(path);
    r.expect_magic("MCVR");
    r.expect_version(1);
    VideoU8 v;
    v.fps = r.f32();
    v.T = r.u32();
    v.H = r.u32();
    v.W = r.u32();
    v.C = r.u32();
    if (v.T < 0 || v.H < 1 || v.W < 1 || v.C < 1)
        throw IoError("invalid video dimensions in '" + path + "'");
    v.data.resize(size_t(v.T) * v.C * v.H * v.W);
    r.bytes(v.data.data(), v.data.size());
    r.expect_consumed();
    return v;
}

// ---- checkpoint ----

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
    if (ck.has_opt_state &&
        (ck.opt_m.size() != ck.tensors.size() || ck.opt_v.size() != ck.tensors.size()))
        throw PreconditionError("optimizer state must parallel the tensor list");
    Writer w(path);
    w.bytes("MCPT", 4);
    w.u32(1);
    w.u64(ck.config_hash);
    w.u64(uint64_t(ck.step));
    w.u64(uint64_t(ck.opt_steps));
    w.u32(uint32_t(ck.tensors.size()));
    auto put_tensor = [&](const Tensor& t) {
        w.u32(uint32_t(t.shape.size()));
        for (int64_t d : t.shape) w.u32(uint32_t(d));
        for (double v : t.data) w.f32(float(v));
    };
    for (const auto& [name, t] : ck.tensors) {
        if (name.size() > 65535) throw PreconditionError("tensor name too long: '" + name + "'");
        w.u16(uint16_t(name.size()));
        w.bytes(name.data(), name.size());
        put_tensor(t);
    }
    w.u8(ck.has_opt_state ? 1 : 0);
    if (ck.has_opt_state) {
        for (size_t i = 0; i < ck.tensors.size(); ++i) {
            put_tensor(ck.opt_m[i]);
            put_tensor(ck.opt_v[i]);
        }
    }
}

Checkpoint read_checkpoint(const std::string& path) {
    Reader r(path);
    r.expect_magic("MCPT");
    r.expect_version(1);
    Checkpoint ck;
    ck.config_hash = r.u64();
    ck.step = int64_t(r.u64());
    ck.opt_steps = int64_t(r.u64());
    uint32_t count = r.u32();
    auto get_tensor = [&]() {
        uint32_t nd = r.u32();
        std::vector<int64_t> shape(nd);
        for (uint32_t i = 0; i < nd; ++i) shape[i] = r.u32();
        Tensor t(shape);
        for (auto& v : t.data) v = double(r.f32());
        return t;
    };
    std::unordered_set<std::string> names;
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t len = r.u16();
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        if (!names.insert(name).second)
            throw IoError("duplicate tensor name '" + name + "' in '" + path + "'");
        ck.tensors.emplace_back(std::move(name), get_tensor());
    }
    ck.has_opt_state = r.u8() != 0;
    if (ck.has_opt_state) {
        for (uint32_t i = 0; i < count; ++i) {
            ck.opt_m.push_back(get_tensor());
            ck.opt_v.push_back(get_tensor());
        }
    }
    r.expect_consumed();
    return ck;
}

} // namespace mcdm::store
