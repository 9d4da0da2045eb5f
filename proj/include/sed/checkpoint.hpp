#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sed/nn/parameters.hpp"

namespace sed {

/// Versioned binary checkpoint:
///
///   "SEDCKPT\0" | u32 version | str model_kind | str config JSON | i64 step |
///   str metadata JSON | u64 tensor count | {str name, u64 rows, u64 cols,
///   f64[rows*cols]}... | u64 FNV-1a of all preceding bytes
///
/// Integers and doubles are little-endian; strings are u64 length + bytes.
/// Serialization is canonical, so save -> load -> save is byte-identical.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string model_kind;
  nlohmann::json config = nlohmann::json::object();
  std::int64_t step = 0;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, nn::Matrix>> tensors;

  void put_parameters(const nn::ParameterStore& params, const std::string& prefix);
  /// Copies tensors named prefix + parameter name into `params`; layouts must match.
  void get_parameters(nn::ParameterStore& params, const std::string& prefix) const;
  const nn::Matrix& tensor(std::string_view name) const;
  bool has_tensor(std::string_view name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unsupported version, truncation or hash mismatch.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hex content hash stored in the checkpoint trailer.
std::string checkpoint_hash(const Checkpoint& ckpt);

}  // namespace sed
