#include "etap/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace etap {

namespace {

constexpr char kTensorMagic[4] = {'E', 'T', 'A', 'P'};
constexpr char kBundleMagic[4] = {'E', 'T', 'A', 'B'};
constexpr std::uint32_t kMaxRank = 16;

template <typename V>
void put_le(std::ostream& out, V v) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(V));
}

template <typename V>
V get_le(std::istream& in, const std::string& source, const char* what) {
  unsigned char bytes[sizeof(V)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(V))) {
    throw FormatError(source + ": truncated while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  V v;
  std::memcpy(&v, bytes, sizeof(V));
  return v;
}

template <typename T>
void write_data(std::ostream& out, const Tensor<T>& t) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  } else {
    for (T v : t.data()) put_le(out, v);
  }
}

template <typename T>
Tensor<T> read_data(std::istream& in, Shape shape, const std::string& source) {
  std::vector<T> data(shape_numel(shape));
  const auto bytes = static_cast<std::streamsize>(data.size() * sizeof(T));
  if (!in.read(reinterpret_cast<char*>(data.data()), bytes)) {
    throw FormatError(source + ": truncated tensor data (expected " + std::to_string(bytes) + " bytes for shape " +
                      shape_str(shape) + ")");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) {
      auto* p = reinterpret_cast<unsigned char*>(&v);
      std::reverse(p, p + sizeof(T));
    }
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

void check_magic(std::istream& in, const char (&magic)[4], const std::string& source) {
  char got[4];
  if (!in.read(got, 4)) throw FormatError(source + ": truncated header");
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(source + ": bad magic, expected '" + std::string(magic, 4) + "'");
  }
  const auto version = get_le<std::uint32_t>(in, source, "version");
  if (version != kContainerVersion) {
    throw FormatError(source + ": unsupported container version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  }
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  return out;
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  out.write(kTensorMagic, 4);
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dtype_of<T>()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  write_data(out, t);
}

AnyTensor read_tensor(std::istream& in, const std::string& source) {
  check_magic(in, kTensorMagic, source);
  const auto dtype = get_le<std::uint32_t>(in, source, "dtype");
  const auto rank = get_le<std::uint32_t>(in, source, "rank");
  if (rank == 0 || rank > kMaxRank) throw FormatError(source + ": invalid rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_le<std::uint32_t>(in, source, "extents");
    if (e == 0) throw FormatError(source + ": zero extent");
  }
  switch (static_cast<DType>(dtype)) {
    case DType::kFloat32:
      return read_data<float>(in, std::move(shape), source);
    case DType::kFloat64:
      return read_data<double>(in, std::move(shape), source);
  }
  throw FormatError(source + ": unknown dtype code " + std::to_string(dtype));
}

template <typename T>
Tensor<T> read_tensor_as(std::istream& in, const std::string& source) {
  return std::visit([](auto&& t) { return t.template cast<T>(); }, read_tensor(in, source));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  auto out = open_out(path);
  write_tensor(out, t);
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  auto in = open_in(path);
  Tensor<T> t = read_tensor_as<T>(in, path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes after tensor");
  return t;
}

template <typename T>
void save_bundle(const std::filesystem::path& path, const ParamSet<T>& params) {
  auto out = open_out(path);
  out.write(kBundleMagic, 4);
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, params.at(i));
  }
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

template <typename T>
ParamSet<T> load_bundle(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string source = path.string();
  check_magic(in, kBundleMagic, source);
  const auto count = get_le<std::uint32_t>(in, source, "entry count");
  ParamSet<T> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in, source, "name length");
    if (len > 4096) throw FormatError(source + ": implausible name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError(source + ": truncated entry name");
    params.add(name, read_tensor_as<T>(in, source + "[" + name + "]"));
  }
  return params;
}

#define ETAP_INSTANTIATE_CONTAINER(T)                                          \
  template void write_tensor<T>(std::ostream&, const Tensor<T>&);              \
  template Tensor<T> read_tensor_as<T>(std::istream&, const std::string&);     \
  template void save_tensor<T>(const std::filesystem::path&, const Tensor<T>&); \
  template Tensor<T> load_tensor<T>(const std::filesystem::path&);             \
  template void save_bundle<T>(const std::filesystem::path&, const ParamSet<T>&); \
  template ParamSet<T> load_bundle<T>(const std::filesystem::path&);

ETAP_INSTANTIATE_CONTAINER(float)
ETAP_INSTANTIATE_CONTAINER(double)

}  // namespace etap
