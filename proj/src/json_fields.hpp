#pragma once

// Strict reader for JSON config objects: required/optional fields with the
// offending path in every error, and rejection of unknown keys.

#include <set>
#include <string>

#include "json.hpp"
#include "smad/error.hpp"

namespace smad::detail {

class JsonFields {
 public:
  JsonFields(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw validation_error(where() + "expected a JSON object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw validation_error("missing field '" + child(key) + "'");
    return obj_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    const auto& v = raw(key);
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw validation_error("field '" + child(key) + "' has the wrong type");
    }
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    if (!obj_.contains(key)) {
      seen_.insert(key);
      return fallback;
    }
    return get<T>(key);
  }

  /// Non-negative integer that fits in 64 bits.
  std::uint64_t get_u64(const std::string& key) {
    const auto& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw validation_error("field '" + child(key) + "' must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Call after all reads.
  void reject_unknown() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) {
        throw validation_error("unknown field '" + child(item.key()) + "'");
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "" : "'" + path_ + "': "; }

  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace smad::detail
