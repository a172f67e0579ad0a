#include "kvl/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace kvl {

namespace {

constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeArchive = 255;
constexpr char kMagic[4] = {'K', 'V', 'L', 'N'};

void put_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& os, double v) {
    static_assert(std::numeric_limits<double>::is_iec559);
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

double get_f64(std::istream& is) {
    std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 4);
}

float get_f32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_tensor_body(std::ostream& os, const Tensor& t, bool as_f32) {
    if (t.rank() > 255) throw ArgError("tensor rank too large for container");
    os.put(static_cast<char>(as_f32 ? kDtypeF32 : kDtypeF64));
    os.put(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(os, d);
    if (as_f32) {
        for (std::size_t i = 0; i < t.size(); ++i) put_f32(os, static_cast<float>(t[i]));
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
    }
}

Tensor read_tensor_body(std::istream& is) {
    const int dtype = is.get();
    const int ndim = is.get();
    if (dtype != kDtypeF64 && dtype != kDtypeF32) throw ArgError("KVLN: unsupported dtype code");
    if (ndim < 0) throw ArgError("KVLN: truncated header");
    Shape shape(static_cast<std::size_t>(ndim));
    for (auto& d : shape) d = static_cast<std::size_t>(get_u64(is));
    Tensor t(shape);
    if (dtype == kDtypeF32) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(get_f32(is));
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(is);
    }
    if (!is) throw ArgError("KVLN: truncated payload");
    return t;
}

void check_magic(std::istream& is) {
    char m[4];
    is.read(m, 4);
    if (!is || std::memcmp(m, kMagic, 4) != 0) throw ArgError("KVLN: bad magic bytes");
    const std::uint16_t version = get_u16(is);
    if (version != kKvlnVersion) throw ArgError("KVLN: unsupported version " + std::to_string(version));
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t, bool as_f32) {
    os.write(kMagic, 4);
    put_u16(os, kKvlnVersion);
    write_tensor_body(os, t, as_f32);
}

Tensor read_tensor(std::istream& is) {
    check_magic(is);
    return read_tensor_body(is);
}

void save_tensor(const std::string& path, const Tensor& t, bool as_f32) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ArgError("cannot open '" + path + "' for writing");
    write_tensor(os, t, as_f32);
    if (!os) throw ArgError("write failed for '" + path + "'");
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArgError("cannot open '" + path + "'");
    return read_tensor(is);
}

void save_archive(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& records, bool as_f32) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ArgError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put_u16(os, kKvlnVersion);
    os.put(static_cast<char>(kDtypeArchive));
    os.put(0);
    put_u64(os, records.size());
    for (const auto& [name, tensor] : records) {
        if (name.size() > 0xffff) throw ArgError("record name too long: " + name);
        put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_body(os, tensor, as_f32);
    }
    if (!os) throw ArgError("write failed for '" + path + "'");
}

std::vector<std::pair<std::string, Tensor>> load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArgError("cannot open '" + path + "'");
    check_magic(is);
    const int dtype = is.get();
    is.get();  // reserved ndim byte
    if (dtype != kDtypeArchive) throw ArgError("KVLN: '" + path + "' is not a named archive");
    const std::uint64_t count = get_u64(is);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint16_t len = get_u16(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        out.emplace_back(std::move(name), read_tensor_body(is));
    }
    return out;
}

void save_checkpoint(const std::string& path, const ParamStore& store) {
    save_archive(path, store.named_records());
}

void load_checkpoint(const std::string& path, ParamStore& store) {
    store.load_named_records(load_archive(path));
}

}  // namespace kvl
