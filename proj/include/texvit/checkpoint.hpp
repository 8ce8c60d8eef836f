#pragma once

// Checkpoint file, binary little-endian:
//   magic "TEXVIT01"
//   u32 json_len, UTF-8 config JSON (model config, record directory, Adam step
//     counter, best validation metric/epoch)
//   repeated tensor records: [name_len u32][name utf8][rank u32][dims u32 x rank]
//     [f32 data], in the directory order (parameters, buffers, Adam moments)
//   u32 CRC32 over everything after the magic.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "texvit/optim.hpp"
#include "texvit/serialize.hpp"

namespace texvit {

struct Checkpoint {
    TexViTConfig config;
    ParamStore<float> store; // parameters and norm running stats
    bool has_adam = false;
    AdamState<float> adam;
    double best_val_accuracy = 0.0;
    int best_epoch = 0;
    uint64_t seed = 0;
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'T', 'E', 'X', 'V', 'I', 'T', '0', '1'};

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

inline uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_tensor(std::vector<uint8_t>& out, const std::string& name,
                       const Tensor<float>& t) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<uint32_t>(t.dim(i)));
    const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
    const size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.data(), bytes);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos;
    const std::string& origin;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw FormatError(origin + ": truncated checkpoint");
    }
    uint32_t u32() {
        need(4);
        const uint32_t v = read_u32(buf.data() + pos);
        pos += 4;
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
    Tensor<float> tensor(const std::string& name) {
        const uint32_t rank = u32();
        if (rank > 8) throw FormatError(origin + ": implausible tensor rank for " + name);
        Shape shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(u32()));
        Tensor<float> t(shape);
        const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
        need(bytes);
        std::memcpy(t.data(), buf.data() + pos, bytes);
        pos += bytes;
        return t;
    }
};

} // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json model;
    to_json(model, ckpt.config);
    j["model"] = model;
    j["params"] = ckpt.store.names();
    j["buffers"] = ckpt.store.buffer_names();
    j["has_adam"] = ckpt.has_adam;
    j["adam_t"] = ckpt.adam.t;
    j["best_val_accuracy"] = ckpt.best_val_accuracy;
    j["best_epoch"] = ckpt.best_epoch;
    j["seed"] = ckpt.seed;
    const std::string json = j.dump();

    std::vector<uint8_t> body;
    ckpt_detail::put_u32(body, static_cast<uint32_t>(json.size()));
    body.insert(body.end(), json.begin(), json.end());
    for (const auto& name : ckpt.store.names())
        ckpt_detail::put_tensor(body, name, ckpt.store.value(name));
    for (const auto& name : ckpt.store.buffer_names())
        ckpt_detail::put_tensor(body, name, ckpt.store.buffer(name));
    if (ckpt.has_adam) {
        for (const auto& name : ckpt.store.names())
            ckpt_detail::put_tensor(body, name, ckpt.adam.m.at(name));
        for (const auto& name : ckpt.store.names())
            ckpt_detail::put_tensor(body, name, ckpt.adam.v.at(name));
    }
    const uint32_t crc =
        static_cast<uint32_t>(::crc32(0L, body.data(), static_cast<uInt>(body.size())));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint: " + path);
    out.write(ckpt_detail::kMagic, 8);
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    std::vector<uint8_t> tail;
    ckpt_detail::put_u32(tail, crc);
    out.write(reinterpret_cast<const char*>(tail.data()), 4);
    if (!out) throw FormatError("short write: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint not found: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), ckpt_detail::kMagic, 8) != 0)
        throw FormatError(path + ": not a TEXVIT01 checkpoint");
    const size_t body_len = buf.size() - 12;
    const uint32_t want_crc = ckpt_detail::read_u32(buf.data() + buf.size() - 4);
    const uint32_t got_crc =
        static_cast<uint32_t>(::crc32(0L, buf.data() + 8, static_cast<uInt>(body_len)));
    if (want_crc != got_crc) throw FormatError(path + ": checkpoint CRC mismatch");

    std::vector<uint8_t> body(buf.begin() + 8, buf.end() - 4);
    ckpt_detail::Reader r{body, 0, path};
    const uint32_t json_len = r.u32();
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(r.str(json_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad checkpoint JSON: " + e.what());
    }

    Checkpoint ckpt;
    from_json(j.at("model"), ckpt.config);
    ckpt.has_adam = j.at("has_adam").get<bool>();
    ckpt.adam.t = j.at("adam_t").get<int64_t>();
    ckpt.best_val_accuracy = j.at("best_val_accuracy").get<double>();
    ckpt.best_epoch = j.at("best_epoch").get<int>();
    ckpt.seed = j.at("seed").get<uint64_t>();
    const auto params = j.at("params").get<std::vector<std::string>>();
    const auto buffers = j.at("buffers").get<std::vector<std::string>>();
    for (const auto& name : params) {
        const uint32_t len = r.u32();
        const std::string got = r.str(len);
        if (got != name) throw FormatError(path + ": record order mismatch at " + name);
        Tensor<float> t = r.tensor(name);
        ckpt.store.create(name, t.shape()) = t;
    }
    for (const auto& name : buffers) {
        const uint32_t len = r.u32();
        const std::string got = r.str(len);
        if (got != name) throw FormatError(path + ": record order mismatch at " + name);
        Tensor<float> t = r.tensor(name);
        ckpt.store.create_buffer(name, t.shape()) = t;
    }
    if (ckpt.has_adam) {
        for (const auto& name : params) {
            const uint32_t len = r.u32();
            const std::string got = r.str(len);
            if (got != name) throw FormatError(path + ": adam record mismatch at " + name);
            ckpt.adam.m.emplace(name, r.tensor(name));
        }
        for (const auto& name : params) {
            const uint32_t len = r.u32();
            const std::string got = r.str(len);
            if (got != name) throw FormatError(path + ": adam record mismatch at " + name);
            ckpt.adam.v.emplace(name, r.tensor(name));
        }
    }
    if (r.pos != body.size()) throw FormatError(path + ": trailing bytes in checkpoint");
    return ckpt;
}

} // namespace texvit
