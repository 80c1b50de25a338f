#include "behave/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "behave/errors.hpp"

namespace behave {

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  p += ".bin";
  return p;
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_f64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nn::ParameterStore& store,
                     const Json& hyperparams, const std::string& rng_state) {
  Json shapes = Json::array();
  std::string blob;
  blob.reserve(static_cast<std::size_t>(store.total_size()) * 8);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const nn::ParamSpec& s = store.specs()[i];
    shapes.push_back(Json{{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"trainable", s.trainable}});
    const Matrix& v = store.values()[i];
    for (Index r = 0; r < v.rows(); ++r)
      for (Index c = 0; c < v.cols(); ++c) put_f64(blob, v(r, c));
  }
  const Json manifest{{"schema_version", kCheckpointSchema},
                      {"kind", kind},
                      {"shapes", shapes},
                      {"hyperparams", hyperparams},
                      {"rng_state", rng_state},
                      {"blob", blob_path(path).filename().string()}};
  write_text_file(path, dump_json(manifest, 2) + "\n");
  std::ofstream out(blob_path(path), std::ios::binary);
  if (!out) fail(ErrorKind::MissingArtifact, "cannot write " + blob_path(path).string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

Json read_manifest(const std::filesystem::path& path, const std::string& kind) {
  if (!std::filesystem::exists(path))
    fail(ErrorKind::MissingArtifact, "checkpoint " + path.string() + " not found; run the training command first");
  const Json m = read_json_file(path);
  if (!m.is_object() || m.value("schema_version", -1) != kCheckpointSchema)
    fail(ErrorKind::FormatError, path.string() + ": unsupported checkpoint schema");
  if (m.value("kind", std::string()) != kind)
    fail(ErrorKind::FormatError, path.string() + ": expected a " + kind + " checkpoint");
  return m;
}

void load_parameters(const std::filesystem::path& path, const Json& manifest, nn::ParameterStore& store) {
  const Json& shapes = manifest.at("shapes");
  if (shapes.size() != store.size())
    fail(ErrorKind::FormatError, path.string() + ": parameter block count differs from the model");
  for (std::size_t i = 0; i < store.size(); ++i) {
    const nn::ParamSpec& s = store.specs()[i];
    const Json& j = shapes[i];
    if (j.at("name").get<std::string>() != s.name || j.at("rows").get<Index>() != s.rows ||
        j.at("cols").get<Index>() != s.cols)
      fail(ErrorKind::FormatError, path.string() + ": block " + s.name + " does not match the model configuration");
  }
  const std::filesystem::path bp = blob_path(path);
  std::ifstream in(bp, std::ios::binary);
  if (!in) fail(ErrorKind::MissingArtifact, "parameter blob " + bp.string() + " not found");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != static_cast<std::size_t>(store.total_size()) * 8)
    fail(ErrorKind::FormatError, bp.string() + ": blob size does not match the manifest");
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  for (std::size_t i = 0; i < store.size(); ++i) {
    Matrix& v = store.value(static_cast<int>(i));
    for (Index r = 0; r < v.rows(); ++r)
      for (Index c = 0; c < v.cols(); ++c, p += 8) v(r, c) = get_f64(p);
  }
}

std::string history_jsonl(const std::vector<VbbRecord>& history) {
  std::string out;
  for (const VbbRecord& r : history)
    out += dump_json(Json{{"step", r.step}, {"total", r.total}, {"rec", r.rec}, {"kl", r.kl}, {"sem", r.sem}}) + "\n";
  return out;
}

std::string history_jsonl(const std::vector<FlowRecord>& history) {
  std::string out;
  for (const FlowRecord& r : history) out += dump_json(Json{{"step", r.step}, {"loss", r.loss}}) + "\n";
  return out;
}

}  // namespace behave
