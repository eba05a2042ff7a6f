// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "phead/error.hpp"
#include "phead/prior_spec.hpp"

namespace phead::detail {

using Json = nlohmann::json;

/// Rejects keys outside `allowed`.
inline void check_keys(const Json& obj, std::string_view where,
                       std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const Json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

Json prior_spec_to_json_value(const PriorSpec& spec);
PriorSpec prior_spec_from_json_value(const Json& j);

}  // namespace phead::detail

namespace phead {
struct WorldConfig;
}

namespace phead::detail {
Json world_config_to_json_value(const WorldConfig& c);
WorldConfig world_config_from_json_value(const Json& j);
}  // namespace phead::detail

namespace phead {
struct EncoderConfig;
}

namespace phead::detail {
Json encoder_config_to_json_value(const EncoderConfig& c);
EncoderConfig encoder_config_from_json_value(const Json& j);
}  // namespace phead::detail
