#include "behave/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace behave {
namespace {

void append_double(std::string& out, double v) {
  if (!std::isfinite(v)) fail(ErrorKind::FormatError, "cannot serialize a non-finite number");
  char buf[40];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::string_view text(buf, static_cast<std::size_t>(n));
  out.append(text);
  // Keep integral-valued doubles recognisable as floating point.
  if (text.find_first_of(".eEn") == std::string_view::npos) out.append(".0");
}

void newline(std::string& out, int indent, int depth) {
  if (indent < 0) return;
  out.push_back('\n');
  out.append(static_cast<std::size_t>(indent * depth), ' ');
}

void dump_into(std::string& out, const Json& j, int indent, int depth) {
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out.append("{}");
        return;
      }
      out.push_back('{');
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        newline(out, indent, depth + 1);
        out.append(Json(it.key()).dump());
        out.append(indent < 0 ? ":" : ": ");
        dump_into(out, it.value(), indent, depth + 1);
      }
      newline(out, indent, depth);
      out.push_back('}');
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out.append("[]");
        return;
      }
      // Arrays of scalars stay on one line even when pretty printing.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
      out.push_back('[');
      bool first = true;
      for (const auto& e : j) {
        if (!first) out.append(flat && indent >= 0 ? ", " : ",");
        first = false;
        if (!flat) newline(out, indent, depth + 1);
        dump_into(out, e, indent, depth + 1);
      }
      if (!flat) newline(out, indent, depth);
      out.push_back(']');
      return;
    }
    case Json::value_t::number_float:
      append_double(out, j.get<double>());
      return;
    default:
      out.append(j.dump());
      return;
  }
}

}  // namespace

std::string dump_json(const Json& j, int indent) {
  std::string out;
  dump_into(out, j, indent, 0);
  if (indent >= 0) out.push_back('\n');
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::MissingArtifact, "cannot open " + path.string() + " for writing");
  os << text;
  if (!os) fail(ErrorKind::MissingArtifact, "failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::MissingArtifact, "cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j, const char* what) {
  if (!j.is_array()) fail(ErrorKind::FormatError, std::string(what) + " is not an array");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      fail(ErrorKind::FormatError, std::string(what) + " is ragged");
    for (Index k = 0; k < cols; ++k) {
      const Json& v = row.at(static_cast<std::size_t>(k));
      if (!v.is_number()) fail(ErrorKind::FormatError, std::string(what) + " has a non-numeric entry");
      m(i, k) = v.get<double>();
    }
  }
  return m;
}

StrictObject::StrictObject(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
  if (!j_.is_object()) fail(ErrorKind::ConfigInvalid, where_ + " must be an object");
}

void StrictObject::finish() const {
  for (auto it = j_.begin(); it != j_.end(); ++it)
    if (!seen_.count(it.key())) fail(ErrorKind::ConfigInvalid, "unknown key " + where_ + "." + it.key());
}

}  // namespace behave
