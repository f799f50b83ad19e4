#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "angiodiff/core/config.hpp"
#include "angiodiff/nn/params.hpp"

namespace angiodiff::nn {

// Self-describing checkpoint: magic, length-prefixed JSON header (format
// version, training step, full config snapshot, parameter table), then raw
// little-endian float32 blobs in header order. Loading matches by name, so
// externally produced weights import as long as the names and shapes line up.

inline constexpr char kCkptMagic[] = "ANGIODIFFCKPT";
inline constexpr char kCkptFormatVersion[] = "1";

struct CheckpointMeta {
    std::string format_version;
    int64_t step = 0;
    Config config;
};

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                            const Config& config, int64_t step) {
    nlohmann::json header;
    header["format_version"] = kCkptFormatVersion;
    header["step"] = step;
    header["config"] = config.serialize();
    for (const auto& p : store.all()) {
        const Shape4 s = p->value.shape();
        header["params"].push_back(
            {{"name", p->name}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + path.string());
    out.write(kCkptMagic, sizeof(kCkptMagic) - 1);
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& p : store.all())
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.numel() * 4));
    if (!out) throw IoError("checkpoint: short write to " + path.string());
}

inline CheckpointMeta read_header(std::ifstream& in, const std::filesystem::path& path,
                                  nlohmann::json& header) {
    char magic[sizeof(kCkptMagic) - 1];
    in.read(magic, sizeof magic);
    if (!in || std::string(magic, sizeof magic) != kCkptMagic)
        throw IoError("checkpoint: bad magic in " + path.string());
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("checkpoint: truncated header in " + path.string());
    header = nlohmann::json::parse(htext);

    CheckpointMeta meta;
    meta.format_version = header.at("format_version").get<std::string>();
    meta.step = header.at("step").get<int64_t>();
    meta.config = Config::parse(header.at("config").get<std::string>());
    return meta;
}

inline CheckpointMeta peek_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    nlohmann::json header;
    return read_header(in, path, header);
}

// Loads value blobs into an already-constructed store; every stored blob must
// find its parameter and every parameter must be covered.
inline CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    nlohmann::json header;
    const CheckpointMeta meta = read_header(in, path, header);

    size_t covered = 0;
    for (const auto& jp : header.at("params")) {
        const std::string name = jp.at("name").get<std::string>();
        const auto sh = jp.at("shape").get<std::array<int, 4>>();
        auto p = store.find(name);
        if (!p) throw IoError("checkpoint: unknown parameter " + name + " in " + path.string());
        const Shape4 expect = p->value.shape();
        if (expect.n != sh[0] || expect.c != sh[1] || expect.h != sh[2] || expect.w != sh[3])
            throw IoError("checkpoint: shape mismatch for " + name + " in " + path.string());
        in.read(reinterpret_cast<char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.numel() * 4));
        if (!in) throw IoError("checkpoint: truncated blob for " + name);
        ++covered;
    }
    if (covered != store.all().size())
        throw IoError("checkpoint: parameter set mismatch in " + path.string());
    return meta;
}

}  // namespace angiodiff::nn
