#include "das/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace das {

namespace io {

namespace {

template <class T>
void put_le(std::ostream& os, T v) {
    std::array<char, sizeof(T)> buf;
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf.data(), buf.size());
}

template <class T>
T get_le(std::istream& is) {
    std::array<unsigned char, sizeof(T)> buf;
    if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) throw FormatError("unexpected end of stream");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
std::uint8_t read_u8(std::istream& is) { return get_le<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get_le<std::uint64_t>(is); }

}  // namespace io

namespace {
constexpr char kMagic[4] = {'D', 'T', 'N', 'S'};
constexpr std::uint8_t kVersion = 1;
}  // namespace

void write_tensor(std::ostream& os, const Tensor& t, DType dtype) {
    os.write(kMagic, 4);
    io::write_u8(os, kVersion);
    io::write_u8(os, static_cast<std::uint8_t>(dtype));
    if (t.rank() > 255) throw FormatError("tensor rank exceeds 255");
    io::write_u8(os, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) io::write_u64(os, e);
    for (double v : t.data()) {
        if (dtype == DType::f64)
            io::write_u64(os, std::bit_cast<std::uint64_t>(v));
        else
            io::write_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!os) throw FormatError("tensor write failed");
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic");
    if (io::read_u8(is) != kVersion) throw FormatError("unsupported tensor version");
    const auto dtype = io::read_u8(is);
    if (dtype > 1) throw FormatError("unknown tensor dtype");
    const auto rank = io::read_u8(is);
    Shape shape(rank);
    for (auto& e : shape) e = io::read_u64(is);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
        if (dtype == static_cast<std::uint8_t>(DType::f64))
            v = std::bit_cast<double>(io::read_u64(is));
        else
            v = static_cast<double>(std::bit_cast<float>(io::read_u32(is)));
    }
    return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const Tensor& t, DType dtype) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_tensor(os, t, dtype);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    return read_tensor(is);
}

}  // namespace das
