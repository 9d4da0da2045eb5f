#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace sed {

/// Incremental 64-bit FNV-1a. Used for content hashes of checkpoints,
/// datasets and configs; not a cryptographic digest.
class ContentHasher {
 public:
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t content_hash(std::string_view text);
std::string content_hash_hex(std::string_view text);
std::string to_hex(std::uint64_t value);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double value);

}  // namespace sed
