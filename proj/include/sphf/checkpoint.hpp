#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sphf/field.hpp"

namespace sphf {

/// Container layout (little-endian):
///   "SPHF" | u32 version | u32 count | count x record
///   record: u16 name_len | name bytes | u8 rank | rank x u32 dims | f32 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

void write_tensors(std::ostream& out, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_tensors(std::istream& in);

/// Writes to `path` via a temporary file and rename.
void save_tensors(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::string& path);

const Tensor* find_tensor(const std::vector<Tensor>& tensors, const std::string& name);

template <typename T>
std::vector<Tensor> tensors_from(const ParamSet<T>& params, const std::string& prefix = "");

/// Copies every parameter from the tensor with the same (prefixed) name; shapes must match.
template <typename T>
void load_into(ParamSet<T>& params, const std::vector<Tensor>& tensors, const std::string& prefix = "");

}  // namespace sphf
