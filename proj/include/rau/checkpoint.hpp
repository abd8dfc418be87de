#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rau/errors.hpp"
#include "rau/model.hpp"

// Container layout (all integers little-endian):
//   "RAU1" | u64 header length | header (UTF-8 JSON) | payload
// The header holds configs, vocabulary, a metric snapshot, and a manifest of
// {name, shape, dtype, offset, nbytes}; offsets are relative to the payload start.
// Tensors are float32, row-major.

namespace rau {

inline constexpr char kCheckpointMagic[4] = {'R', 'A', 'U', '1'};

using MetricSnapshot = std::map<std::string, double>;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
}

inline float get_f32(const std::string& in, std::size_t pos) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["encoder"] = {{"layers", c.encoder.layers},          {"heads", c.encoder.heads},
                  {"dim", c.encoder.model_dim},          {"ffn_dim", c.encoder.ffn_dim},
                  {"max_positions", c.encoder.max_positions}, {"vocab_size", c.encoder.vocab_size},
                  {"dropout", c.encoder.dropout}};
  j["unet"] = {{"depth", c.unet.depth}, {"base_channels", c.unet.base_channels}, {"kernel", c.unet.kernel}};
  j["relation"] = {{"layers", c.selection.layers}, {"heads", c.selection.heads}, {"eou_column", c.eou_column}};
  j["corpus"] = {{"tokenizer", to_string(c.tokenizer)}, {"max_len", c.max_len}};
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& e = j.at("encoder");
  c.encoder.layers = e.at("layers");
  c.encoder.heads = e.at("heads");
  c.encoder.model_dim = e.at("dim");
  c.encoder.ffn_dim = e.at("ffn_dim");
  c.encoder.max_positions = e.at("max_positions");
  c.encoder.vocab_size = e.at("vocab_size");
  c.encoder.dropout = e.at("dropout");
  const auto& u = j.at("unet");
  c.unet.depth = u.at("depth");
  c.unet.base_channels = u.at("base_channels");
  c.unet.kernel = u.at("kernel");
  const auto& r = j.at("relation");
  c.selection.layers = r.at("layers").get<std::vector<std::size_t>>();
  c.selection.heads = r.at("heads").get<std::vector<std::size_t>>();
  c.eou_column = r.at("eou_column");
  const auto& k = j.at("corpus");
  c.tokenizer = parse_tokenizer_mode(k.at("tokenizer"));
  c.max_len = k.at("max_len");
  return c;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model<float>& model, const MetricSnapshot& metrics = {}) {
  auto& m = const_cast<Model<float>&>(model);
  nlohmann::json header;
  header["format"] = "RAU1";
  header["config"] = detail::config_to_json(model.cfg);
  header["vocab"] = model.vocab.tokens();
  header["metrics"] = metrics;
  std::string payload;
  nlohmann::json manifest = nlohmann::json::array();
  for (auto& t : m.tensors()) {
    const Mat<float>& v = *t.value;
    manifest.push_back({{"name", t.name},
                        {"shape", {v.rows(), v.cols()}},
                        {"dtype", "f32"},
                        {"offset", payload.size()},
                        {"nbytes", static_cast<std::size_t>(v.size()) * 4}});
    for (Eigen::Index i = 0; i < v.size(); ++i) detail::put_f32(payload, v.data()[i]);
  }
  header["tensors"] = manifest;
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_u64(out, h.size());
  out += h;
  out += payload;
  return out;
}

struct LoadedCheckpoint {
  Model<float> model;
  MetricSnapshot metrics;
};

inline LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw DataError("not a RAU1 checkpoint");
  const std::uint64_t hlen = detail::get_u64(bytes, 4);
  if (12 + hlen > bytes.size()) throw DataError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t base = 12 + hlen;
  LoadedCheckpoint out;
  try {
    ModelConfig cfg = detail::config_from_json(header.at("config"));
    out.model.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    if (out.model.vocab.size() != cfg.encoder.vocab_size) throw DataError("vocabulary size disagrees with config");
    cfg.finalize();
    out.model.cfg = cfg;
    out.model.encoder = EncoderParams<float>::zeros(cfg.encoder);
    out.model.unet = UNetParams<float>::zeros(cfg.unet);
    out.metrics = header.at("metrics").get<MetricSnapshot>();
    std::map<std::string, nlohmann::json> manifest;
    for (const auto& e : header.at("tensors")) manifest[e.at("name")] = e;
    auto tensors = out.model.tensors();
    if (manifest.size() != tensors.size()) throw DataError("checkpoint tensor count disagrees with config");
    std::uint64_t prev_end = 0;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (auto& t : tensors) {
      auto it = manifest.find(t.name);
      if (it == manifest.end()) throw DataError("checkpoint lacks tensor " + t.name);
      const auto& e = it->second;
      auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
      if (e.at("dtype") != "f32" || shape.size() != 2 || shape[0] != t.value->rows() || shape[1] != t.value->cols())
        throw DataError("tensor " + t.name + " has unexpected dtype or shape");
      const std::uint64_t off = e.at("offset"), nbytes = e.at("nbytes");
      if (nbytes != static_cast<std::uint64_t>(t.value->size()) * 4 || base + off + nbytes > bytes.size())
        throw DataError("tensor " + t.name + " payload out of bounds");
      ranges.emplace_back(off, off + nbytes);
      for (Eigen::Index i = 0; i < t.value->size(); ++i)
        t.value->data()[i] = detail::get_f32(bytes, base + off + static_cast<std::uint64_t>(i) * 4);
    }
    std::sort(ranges.begin(), ranges.end());
    for (auto [b, e] : ranges) {
      if (b < prev_end) throw DataError("overlapping tensor payloads");
      prev_end = e;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const Model<float>& model, const MetricSnapshot& metrics = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(model, metrics);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to checkpoint " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace rau
