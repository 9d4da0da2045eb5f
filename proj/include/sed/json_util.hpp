#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "sed/errors.hpp"

namespace sed {

/// Rejects keys outside `allowed` (configs fail fast on typos).
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                               std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

/// Overwrites `out` when `key` is present; type errors become ConfigError.
template <typename T>
void read_optional(const nlohmann::json& j, std::string_view key, T& out, std::string_view where) {
  const std::string k(key);
  if (!j.contains(k)) return;
  try {
    out = j.at(k).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + "." + k + ": " + e.what());
  }
}

}  // namespace sed
