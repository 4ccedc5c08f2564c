#include "dml/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "VPCK writer assumes little-endian host");

namespace dml {

namespace {

constexpr char kMagic[4] = {'V', 'P', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::string& path, size_t& offset) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw std::runtime_error("checkpoint: truncated file " + path + " at offset " +
                                 std::to_string(offset));
    offset += sizeof(T);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put<uint32_t>(os, kVersion);
    put<uint32_t>(os, uint32_t(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xFFFF) throw std::runtime_error("checkpoint: name too long: " + e.name);
        if (shape_numel(e.shape) != int64_t(e.data.size()))
            throw std::runtime_error("checkpoint: shape/data mismatch for " + e.name);
        put<uint16_t>(os, uint16_t(e.name.size()));
        os.write(e.name.data(), std::streamsize(e.name.size()));
        put<uint8_t>(os, uint8_t(e.shape.size()));
        for (int64_t d : e.shape) put<uint64_t>(os, uint64_t(d));
        put<uint8_t>(os, 0);  // f32 little-endian
        os.write(reinterpret_cast<const char*>(e.data.data()), std::streamsize(e.data.size() * 4));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    size_t offset = 0;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    offset = 4;
    uint32_t version = take<uint32_t>(is, path, offset);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    uint32_t count = take<uint32_t>(is, path, offset);
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        uint16_t nlen = take<uint16_t>(is, path, offset);
        e.name.resize(nlen);
        is.read(e.name.data(), nlen);
        if (!is)
            throw std::runtime_error("checkpoint: truncated file " + path + " at offset " +
                                     std::to_string(offset));
        offset += nlen;
        uint8_t rank = take<uint8_t>(is, path, offset);
        if (rank > 4) throw std::runtime_error("checkpoint: rank > 4 for " + e.name + " in " + path);
        int64_t numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            uint64_t dim = take<uint64_t>(is, path, offset);
            e.shape.push_back(int64_t(dim));
            numel *= int64_t(dim);
        }
        uint8_t dtype = take<uint8_t>(is, path, offset);
        if (dtype != 0)
            throw std::runtime_error("checkpoint: unknown dtype tag " + std::to_string(dtype) + " for " + e.name);
        e.data.resize(size_t(numel));
        is.read(reinterpret_cast<char*>(e.data.data()), std::streamsize(numel * 4));
        if (!is)
            throw std::runtime_error("checkpoint: truncated file " + path + " at offset " +
                                     std::to_string(offset));
        offset += size_t(numel) * 4;
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace dml
