#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "wccn/tensor.hpp"

namespace wccn {

// Named-tensor container: magic "WCCN", u32 format version, u32 tensor count,
// then per tensor: u32 name length, UTF-8 name, u32 rank, u64 dims,
// little-endian f64 payload.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensors(std::ostream& os,
                   const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> read_tensors(std::istream& is);

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

}  // namespace wccn
