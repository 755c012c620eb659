#include "metapoi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "metapoi/errors.hpp"

namespace metapoi {

namespace {

constexpr int kFormatVersion = 1;

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
  return v;
}

std::string file_name(const std::string& group) { return group + ".f64"; }

}  // namespace

std::map<std::string, std::uint64_t> frozen_tensor_hashes(const ModelState& state) {
  std::map<std::string, std::uint64_t> out;
  for (std::size_t g = 0; g < state.values.size(); ++g) {
    if (state.frozen[g]) out[state.layout.tensors[g].name] = tensor_hash(state.values[g]);
  }
  return out;
}

nlohmann::json architecture_to_json(const Architecture& a) {
  return {{"embed_dim", a.embed_dim},
          {"hidden", a.hidden},
          {"cat_layers", a.cat_layers},
          {"poi_layers", a.poi_layers},
          {"num_pois", a.num_pois}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  Architecture a;
  a.embed_dim = j.at("embed_dim").get<int>();
  a.hidden = j.at("hidden").get<int>();
  a.cat_layers = j.at("cat_layers").get<int>();
  a.poi_layers = j.at("poi_layers").get<int>();
  a.num_pois = j.at("num_pois").get<int>();
  return a;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& dir, const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["architecture"] = architecture_to_json(state.arch);
  manifest["tensors"] = nlohmann::json::array();
  for (std::size_t g = 0; g < state.values.size(); ++g) {
    const auto& spec = state.layout.tensors[g];
    manifest["tensors"].push_back({{"name", spec.name},
                                   {"shape", {spec.rows, spec.cols}},
                                   {"frozen", static_cast<bool>(state.frozen[g])},
                                   {"file", file_name(spec.name)},
                                   {"fnv1a", hex64(tensor_hash(state.values[g]))}});
    std::ofstream out(dir / file_name(spec.name), std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint tensor " + spec.name);
    for (double v : state.values[g]) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), 8);
    }
  }
  manifest["extra"] = extra;
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

ModelState load_checkpoint(const std::filesystem::path& dir, nlohmann::json* extra) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format_version", 0) != kFormatVersion) {
    throw DataError("unsupported checkpoint format in " + dir.string());
  }
  ModelState s;
  s.arch = architecture_from_json(manifest.at("architecture"));
  s.layout = make_layout(s.arch);
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != s.layout.tensors.size()) throw DataError("checkpoint tensor count mismatch");
  for (std::size_t g = 0; g < tensors.size(); ++g) {
    const auto& spec = s.layout.tensors[g];
    const auto& t = tensors[g];
    if (t.at("name").get<std::string>() != spec.name ||
        t.at("shape") != nlohmann::json::array({spec.rows, spec.cols})) {
      throw DataError("checkpoint tensor '" + t.at("name").get<std::string>() + "' does not match architecture");
    }
    std::ifstream tin(dir / t.at("file").get<std::string>(), std::ios::binary);
    if (!tin) throw DataError("missing checkpoint tensor file for " + spec.name);
    std::vector<double> values(spec.size());
    for (double& v : values) {
      std::uint64_t bits = 0;
      if (!tin.read(reinterpret_cast<char*>(&bits), 8)) throw DataError("truncated tensor file for " + spec.name);
      v = std::bit_cast<double>(to_little_endian(bits));
    }
    if (hex64(tensor_hash(values)) != t.at("fnv1a").get<std::string>()) {
      throw DataError("checksum mismatch for tensor " + spec.name);
    }
    s.values.push_back(std::move(values));
    s.frozen.push_back(t.at("frozen").get<bool>());
  }
  if (extra) *extra = manifest.value("extra", nlohmann::json::object());
  return s;
}

}  // namespace metapoi
