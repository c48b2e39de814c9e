#include "energen/blob.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace energen {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are little-endian; big-endian hosts need byte swaps");

namespace {

constexpr char kMagic[4] = {'E', 'T', 'B', '1'};
constexpr uint32_t kDtypeF32 = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is, const std::string& path) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw format_error("truncated blob: " + path);
    return v;
}

uint64_t read_u64(std::istream& is, const std::string& path) {
    uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw format_error("truncated blob: " + path);
    return v;
}

}  // namespace

void save_tensor_blob(const std::string& path, const std::string& name, const TensorF& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write blob: " + path);
    os.write(kMagic, 4);
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, kDtypeF32);
    write_u32(os, static_cast<uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_u64(os, static_cast<uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!os) throw io_error("short write on blob: " + path);
}

std::pair<std::string, TensorF> load_tensor_blob(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open blob: " + path);

    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw format_error("bad blob magic: " + path);

    uint32_t name_len = read_u32(is, path);
    if (name_len > 4096) throw format_error("implausible blob name length: " + path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw format_error("truncated blob: " + path);

    uint32_t dtype = read_u32(is, path);
    if (dtype != kDtypeF32) throw format_error("unsupported blob dtype: " + path);

    uint32_t ndim = read_u32(is, path);
    if (ndim > 8) throw format_error("implausible blob rank: " + path);
    std::vector<int> shape(ndim);
    size_t total = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        uint64_t d = read_u64(is, path);
        if (d > (1ull << 31)) throw format_error("implausible blob dimension: " + path);
        shape[i] = static_cast<int>(d);
        total *= d;
    }

    TensorF t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(total * sizeof(float))))
        throw format_error("truncated blob data: " + path);
    return {name, std::move(t)};
}

}  // namespace energen
