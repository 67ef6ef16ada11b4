#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "tvsurv/error.hpp"

namespace tvsurv::json {

/// Throws Config when `j` is not an object or holds a key outside `allowed`.
inline void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::Config, std::string(where) + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || item.key() == a;
    if (!known) throw Error(ErrorCode::Config, std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

/// Reads an optional field into `out`, naming the field on a type error.
template <class T>
void read(const nlohmann::json& j, std::string_view key, T& out, std::string_view where) {
  const auto it = j.find(std::string(key));
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::Config, std::string(where) + "." + std::string(key) + ": wrong type");
  }
}

}  // namespace tvsurv::json
