#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <variant>

#include "etap/param_set.hpp"
#include "etap/tensor.hpp"

// Tensor container file:
//   "ETAP" | version u32 | dtype u32 | rank u32 | extents u32[rank] | data
// All integers and scalars little-endian. dtype 1 = float32, 2 = float64.
//
// Named bundle (checkpoints):
//   "ETAB" | version u32 | count u32 | count x (name_len u32 | name | tensor record)

namespace etap {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint32_t { kFloat32 = 1, kFloat64 = 2 };

/// Malformed, truncated or incompatible file. The message names the source.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <>
constexpr DType dtype_of<double>() { return DType::kFloat64; }

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);
AnyTensor read_tensor(std::istream& in, const std::string& source);

/// Reads a tensor and converts it to T when the stored dtype differs.
template <typename T>
Tensor<T> read_tensor_as(std::istream& in, const std::string& source);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

template <typename T>
void save_bundle(const std::filesystem::path& path, const ParamSet<T>& params);
template <typename T>
ParamSet<T> load_bundle(const std::filesystem::path& path);

}  // namespace etap
