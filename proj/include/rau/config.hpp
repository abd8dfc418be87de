#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rau/errors.hpp"
#include "rau/model.hpp"
#include "rau/trainer.hpp"

namespace rau {

/// Flat key=value settings. Later sources override earlier ones: defaults, then a config
/// file, then command-line `--set key=value` flags.
class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d{
        {"encoder.layers", "4"},       {"encoder.heads", "4"},         {"encoder.dim", "128"},
        {"encoder.ffn_dim", "512"},    {"encoder.max_positions", "128"}, {"encoder.dropout", "0.1"},
        {"unet.depth", "2"},           {"unet.base_channels", "32"},   {"unet.kernel", "3"},
        {"relation.layers", "last"},   {"relation.heads", "all"},      {"relation.eou_column", "false"},
        {"corpus.tokenizer", "char"},  {"corpus.max_len", "128"},
        {"train.lr", "0.001"},         {"train.beta1", "0.9"},         {"train.beta2", "0.999"},
        {"train.eps", "1e-8"},         {"train.epochs", "1000"},       {"train.max_steps", "500"},
        {"train.batch_size", "8"},     {"train.weight_cap", "50"},     {"train.seed", "1"},
        {"train.eval_every", "50"},    {"train.clip", "1.0"},
    };
    return d;
  }

  void set(const std::string& key, const std::string& value) {
    if (!defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Parses "key = value" lines; '#' starts a comment.
  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(no) + ": expected key = value");
      set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
  }

  /// Applies "key=value" overrides.
  void merge_flags(const std::vector<std::string>& assignments) {
    for (const auto& a : assignments) {
      auto eq = a.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + a + "'");
      set(detail::trim(a.substr(0, eq)), detail::trim(a.substr(eq + 1)));
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  std::size_t get_count(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      long long x = std::stoll(v, &used);
      if (used == v.size() && x >= 0) return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }

  double get_real(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }

  bool get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
  }

  ModelConfig model_config() const {
    ModelConfig c;
    c.encoder.layers = get_count("encoder.layers");
    c.encoder.heads = get_count("encoder.heads");
    c.encoder.model_dim = get_count("encoder.dim");
    c.encoder.ffn_dim = get_count("encoder.ffn_dim");
    c.encoder.max_positions = get_count("encoder.max_positions");
    c.encoder.dropout = get_real("encoder.dropout");
    c.unet.depth = get_count("unet.depth");
    c.unet.base_channels = get_count("unet.base_channels");
    c.unet.kernel = get_count("unet.kernel");
    if (c.encoder.layers < 1 || c.encoder.heads < 1) throw ConfigError("encoder.layers and encoder.heads must be >= 1");
    c.selection.layers = parse_index_list(get("relation.layers"), c.encoder.layers);
    c.selection.heads = parse_index_list(get("relation.heads"), c.encoder.heads);
    c.eou_column = get_bool("relation.eou_column");
    c.tokenizer = parse_tokenizer_mode(get("corpus.tokenizer"));
    c.max_len = get_count("corpus.max_len");
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.lr = get_real("train.lr");
    t.beta1 = get_real("train.beta1");
    t.beta2 = get_real("train.beta2");
    t.eps = get_real("train.eps");
    t.epochs = get_count("train.epochs");
    t.max_steps = get_count("train.max_steps");
    t.batch_size = get_count("train.batch_size");
    t.weight_cap = get_real("train.weight_cap");
    t.seed = get_count("train.seed");
    t.eval_every = get_count("train.eval_every");
    t.clip = get_real("train.clip");
    t.validate();
    return t;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rau
