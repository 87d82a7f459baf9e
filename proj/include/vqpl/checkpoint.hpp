// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "vqpl/grad.hpp"

namespace vqpl::checkpoint {

/// "VQPT" container: version, a JSON metadata block, then named tensors
/// (name length, name, rank, dims, little-endian doubles).
struct Container {
  nlohmann::ordered_json meta;
  std::vector<std::pair<std::string, grad::Tensor>> tensors;

  const grad::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::string to_bytes(const Container& c);
Container from_bytes(const std::string& bytes);
void save(const std::filesystem::path& path, const Container& c);
Container load(const std::filesystem::path& path);

/// FNV-1a 64 of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& s);

}  // namespace vqpl::checkpoint
