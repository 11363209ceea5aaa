#pragma once

#include <filesystem>

#include <json.hpp>

#include "mtd/core/format.hpp"
#include "mtd/nn/model.hpp"

// Model file: one JSON header line, then every parameter tensor as
// little-endian float32 in layout order.

namespace mtd::nn {

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::ordered_json model_header(const CnnLstm<float>& m) {
  nlohmann::ordered_json h;
  h["format_version"] = kModelFormatVersion;
  h["kind"] = "cnn-lstm";
  h["hyper"] = hyper_json(m.hyper());
  const auto& s = m.input_shape();
  h["input_shape"] = {s.channels, s.height, s.width};
  h["seed"] = m.seed();
  auto params = nlohmann::ordered_json::array();
  for (const auto& e : m.layout().entries) params.push_back({{"name", e.name}, {"shape", e.shape}});
  h["params"] = std::move(params);
  h["param_count"] = m.layout().total;
  return h;
}

/// Extra header keys (config hash, training summary) are appended after the required ones.
inline void save_model(const std::filesystem::path& path, const CnnLstm<float>& m,
                       const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  auto h = model_header(m);
  for (const auto& [k, v] : extra.items()) h[k] = v;
  std::string out = h.dump() + "\n";
  out.reserve(out.size() + 4 * m.params().size());
  for (float v : m.params()) fmt::put_f32(out, v);
  fmt::write_file(path.string(), out);
}

inline nlohmann::json read_model_header(const std::filesystem::path& path) {
  const std::string buf = fmt::read_file(path.string());
  fmt::ByteReader rd(buf);
  try {
    return nlohmann::json::parse(rd.line());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, path.string() + ": bad model header: " + e.what());
  }
}

inline CnnLstm<float> load_model(const std::filesystem::path& path) {
  const std::string buf = fmt::read_file(path.string());
  fmt::ByteReader rd(buf);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(rd.line());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, path.string() + ": bad model header: " + e.what());
  }
  HyperParams hyper;
  InputShape shape;
  std::uint64_t seed = 0;
  try {
    require(h.at("kind") == "cnn-lstm", ErrorKind::DataError, path.string() + " is not a model file");
    require(h.at("format_version").get<int>() == kModelFormatVersion, ErrorKind::DataError,
            path.string() + ": unsupported model format version");
    hyper = hyper_from_json(h.at("hyper"));
    const auto s = h.at("input_shape").get<std::vector<std::size_t>>();
    require(s.size() == 3, ErrorKind::DataError, "input_shape needs three dimensions");
    shape = {s[0], s[1], s[2]};
    seed = h.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, path.string() + ": bad model header: " + e.what());
  }
  CnnLstm<float> m(hyper, shape, seed);
  const auto& params = h.at("params");
  require(params.size() == m.layout().entries.size(), ErrorKind::ShapeError, "model file parameter list mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = m.layout().entries[i];
    require(params[i].at("name").get<std::string>() == e.name &&
                params[i].at("shape").get<std::vector<std::size_t>>() == e.shape,
            ErrorKind::ShapeError, "model file tensor " + e.name + " does not match the architecture");
  }
  require(rd.remaining() == 4 * m.params().size(), ErrorKind::DataError, "model file weight blob has the wrong size");
  for (float& v : m.params()) v = rd.f32();
  return m;
}

}  // namespace mtd::nn
