// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scdnet/tensor.hpp"

namespace scdnet {

/// On-disk layout (all integers little-endian):
///   magic "SCDNCKPT" | u32 version | u32 header_len | header bytes (JSON)
///   | u32 entry_count | entries...
/// entry: u32 name_len | name | u32 rank | u64 dims[rank] | f64 values (row-major)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string header;  // JSON text: hyperparameters and run state
  std::vector<std::pair<std::string, Mat>> entries;

  const Mat& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace scdnet
