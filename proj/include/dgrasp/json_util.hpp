#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dgrasp {

namespace detail {

/// Overwrites `field` from j[key] when present.
template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(section + "." + key + ": wrong type");
  }
}

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument(section + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument(section + "." + key + ": unknown key");
}

}  // namespace detail

}  // namespace dgrasp
