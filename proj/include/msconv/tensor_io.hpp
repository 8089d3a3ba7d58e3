#pragma once

#include <filesystem>
#include <iosfwd>

#include "msconv/tensor.hpp"

namespace msconv {

// Raw tensor dump: little-endian header {"MSTN", u32 version = 1,
// u32 dtype (0 = f32, 1 = f64), 4 x u64 shape} followed by the row-major
// payload in the tensor's dtype.
inline constexpr std::uint32_t kTensorDumpVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace detail {
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
}  // namespace detail

}  // namespace msconv
