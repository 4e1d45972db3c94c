#include "lsvis/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace lsvis::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::ifstream& f, const std::string& what) {
    uint32_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 4))
        throw CheckpointError("checkpoint truncated while reading " + what);
    return v;
}

}  // namespace

void save_checkpoint(const nd::ParamMap<float>& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 4);
    put_u32(f, kVersion);
    put_u32(f, static_cast<uint32_t>(params.size()));
    for (const auto& [name, arr] : params) {
        put_u32(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(f, static_cast<uint32_t>(arr.shape.size()));
        for (int64_t d : arr.shape) put_u32(f, static_cast<uint32_t>(d));
        f.write(reinterpret_cast<const char*>(arr.ptr()),
                static_cast<std::streamsize>(arr.size() * 4));
    }
    if (!f) throw CheckpointError("write failed: " + path);
}

nd::ParamMap<float> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("bad checkpoint magic in " + path);
    uint32_t version = get_u32(f, "version");
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    uint32_t count = get_u32(f, "entry count");
    nd::ParamMap<float> params;
    for (uint32_t e = 0; e < count; ++e) {
        uint32_t name_len = get_u32(f, "name length");
        if (name_len > 4096) throw CheckpointError("implausible name length in " + path);
        std::string name(name_len, '\0');
        if (!f.read(name.data(), name_len))
            throw CheckpointError("checkpoint truncated while reading name");
        uint32_t rank = get_u32(f, "rank");
        if (rank > 8) throw CheckpointError("implausible rank for entry '" + name + "'");
        nd::Shape shape;
        int64_t total = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint32_t dim = get_u32(f, "dimension");
            shape.push_back(static_cast<int64_t>(dim));
            total *= dim;
        }
        if (total < 0 || total > (int64_t(1) << 32))
            throw CheckpointError("implausible entry size for '" + name + "'");
        nd::Array arr(shape);
        if (!f.read(reinterpret_cast<char*>(arr.ptr()),
                    static_cast<std::streamsize>(total * 4)))
            throw CheckpointError("checkpoint truncated while reading data of '" + name + "'");
        if (!params.emplace(std::move(name), std::move(arr)).second)
            throw CheckpointError("duplicate entry name in " + path);
    }
    // trailing garbage means the shape table and payload disagree
    char extra;
    if (f.read(&extra, 1)) throw CheckpointError("trailing bytes after last entry in " + path);
    return params;
}

}  // namespace lsvis::ckpt
