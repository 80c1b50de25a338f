#pragma once

#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "behave/errors.hpp"
#include "behave/types.hpp"

namespace behave {

using Json = nlohmann::json;

/// Serializes with every floating-point number at 17 significant digits so
/// that doubles survive a write/read cycle bit for bit. indent < 0 is compact.
std::string dump_json(const Json& j, int indent = -1);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);

/// Rows become inner arrays.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const char* what);

/// Reads fields of one JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string where);

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ConfigInvalid, where_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const Json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  const std::string& where() const { return where_; }

  /// Throws ConfigInvalid naming the first unknown key.
  void finish() const;

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace behave
