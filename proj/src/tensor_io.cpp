#include "msconv/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace msconv {

namespace detail {

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw FormatError("truncated tensor stream");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }

}  // namespace detail

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("MSTN", 4);
  detail::write_u32(os, kTensorDumpVersion);
  detail::write_u32(os, static_cast<std::uint32_t>(t.dtype()));
  const Shape& s = t.shape();
  for (std::int64_t e : {s.n, s.c, s.h, s.w}) detail::write_u64(os, static_cast<std::uint64_t>(e));
  for (double v : t.data()) {
    if (t.dtype() == DType::kF32) {
      detail::write_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      detail::write_u64(os, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!os) throw FormatError("failed writing tensor");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MSTN", 4) != 0) throw FormatError("bad tensor magic");
  const std::uint32_t version = detail::read_u32(is);
  if (version != kTensorDumpVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const std::uint32_t code = detail::read_u32(is);
  if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code));
  const DType dtype = static_cast<DType>(code);
  std::uint64_t dims[4];
  for (auto& d : dims) {
    d = detail::read_u64(is);
    if (d > (std::uint64_t{1} << 40)) throw FormatError("implausible tensor extent");
  }
  const Shape s{static_cast<std::int64_t>(dims[0]), static_cast<std::int64_t>(dims[1]),
                static_cast<std::int64_t>(dims[2]), static_cast<std::int64_t>(dims[3])};
  std::vector<double> values(static_cast<std::size_t>(s.numel()));
  for (double& v : values) {
    v = dtype == DType::kF32 ? static_cast<double>(std::bit_cast<float>(detail::read_u32(is)))
                             : std::bit_cast<double>(detail::read_u64(is));
  }
  return Tensor(s, std::move(values), dtype);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace msconv
