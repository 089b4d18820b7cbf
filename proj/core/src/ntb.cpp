#include "cvq/ntb.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "cvq/error.hpp"
#include "cvq/hashing.hpp"

namespace cvq::ntb {
namespace {

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  require(pos + sizeof(T) <= in.size(), ErrorKind::Io, "truncated NTB data");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string encode(const Shape& shape, std::span<const double> data) {
  std::string out(kMagic, kMagic + 8);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + data.size() * 8);
  for (double v : data) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

void decode(const std::string& bytes, Shape& shape, std::vector<double>& data) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), kMagic, 8) == 0, ErrorKind::Io, "bad NTB magic");
  std::size_t pos = 8;
  const auto rank = get_le<std::uint32_t>(bytes, pos);
  require(rank <= 64, ErrorKind::Io, "implausible NTB rank");
  shape.assign(rank, 0);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = get_le<std::uint64_t>(bytes, pos);
    require(d > 0, ErrorKind::Io, "zero dimension in NTB header");
    n *= d;
  }
  require(bytes.size() - pos == n * 8, ErrorKind::Io, "NTB payload size does not match header");
  data.resize(n);
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
}

void write(const std::filesystem::path& path, const Tensor& tensor) { write_file(path, encode(tensor.shape(), tensor.data())); }

Tensor read(const std::filesystem::path& path) {
  Shape shape;
  std::vector<double> data;
  decode(read_file(path), shape, data);
  return Tensor(std::move(shape), std::move(data));
}

void write_indices(const std::filesystem::path& path, const Shape& shape, std::span<const std::size_t> values) {
  require(shape_numel(shape) == values.size(), ErrorKind::Shape, "index tensor shape mismatch");
  std::vector<double> data(values.begin(), values.end());
  write_file(path, encode(shape, data));
}

std::vector<std::size_t> read_indices(const std::filesystem::path& path, Shape* shape) {
  Shape s;
  std::vector<double> data;
  decode(read_file(path), s, data);
  std::vector<std::size_t> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    require(data[i] >= 0.0 && std::floor(data[i]) == data[i] && data[i] < 0x1.0p53, ErrorKind::Io,
            "non-integer value in index tensor " + path.string());
    out[i] = static_cast<std::size_t>(data[i]);
  }
  if (shape) *shape = std::move(s);
  return out;
}

}  // namespace cvq::ntb
