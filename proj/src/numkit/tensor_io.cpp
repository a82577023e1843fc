#include "cali/numkit/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cali/errors.hpp"

namespace cali::nk {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'A', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

template <class T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <class T>
  T get(const char* what) {
    std::array<unsigned char, sizeof(T)> bytes{};
    in_.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (in_.gcount() != static_cast<std::streamsize>(bytes.size()))
      throw FormatError(std::string("truncated tensor while reading ") + what, offset_);
    offset_ += bytes.size();
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint8_t>(out, kDtypeF64);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : t.values()) put_le<double>(out, v);
  if (!out) throw IoError("failed to write tensor");
}

Tensor read_tensor(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  for (auto& c : magic) c = static_cast<char>(r.get<std::uint8_t>("magic"));
  if (magic != kMagic) throw FormatError("bad tensor magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw FormatError("unsupported tensor version " + std::to_string(version), 4);
  const auto dtype = r.get<std::uint8_t>("dtype");
  if (dtype != kDtypeF64) throw FormatError("unsupported tensor dtype " + std::to_string(dtype), 8);
  const auto rank = r.get<std::uint8_t>("rank");
  Shape shape(rank);
  for (auto& d : shape) {
    const std::uint64_t at = r.offset();
    d = r.get<std::uint32_t>("dims");
    if (d == 0) throw FormatError("zero tensor dimension", at);
  }
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = r.get<double>("payload");
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace cali::nk
