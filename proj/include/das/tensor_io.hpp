#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "das/tensor.hpp"

namespace das {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Record layout: "DTNS", u8 version (1), u8 dtype, u8 rank, rank x u64 extents,
// then the values; all little-endian.
void write_tensor(std::ostream& os, const Tensor& t, DType dtype = DType::f64);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t, DType dtype = DType::f64);
Tensor load_tensor(const std::string& path);

namespace io {
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
}  // namespace io

}  // namespace das
