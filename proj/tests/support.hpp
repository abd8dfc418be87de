#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <unistd.h>

#include "rau/rau.hpp"

namespace rau::test {

// Weather dialogue: two context turns, a pronoun-and-ellipsis follow-up, and its rewrite.
inline constexpr const char* kU1 = "深圳的天气怎么样";
inline constexpr const char* kU2 = "最近一直下暴雨";
inline constexpr const char* kU3 = "为什么这样";
inline constexpr const char* kU3Star = "深圳为什么最近一直下暴雨";

inline DialogueExample weather_example() {
  DialogueExample ex;
  ex.context_turns = {tokenize(kU1, TokenizerMode::Char), tokenize(kU2, TokenizerMode::Char)};
  ex.incomplete = tokenize(kU3, TokenizerMode::Char);
  ex.reference = tokenize(kU3Star, TokenizerMode::Char);
  return ex;
}

inline Tokens chars(const std::string& s) { return tokenize(s, TokenizerMode::Char); }
inline Tokens words(const std::string& s) { return tokenize(s, TokenizerMode::Whitespace); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("rau_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// An encoded example with hand-picked sizes and random token ids.
inline EncodedExample random_encoded(std::size_t turns_len, std::size_t n, Rng& rng, std::size_t vocab = 20) {
  DialogueExample ex;
  Tokens turn, inc;
  for (std::size_t i = 0; i < turns_len; ++i) turn.push_back("w" + std::to_string(uniform_index(rng, vocab)));
  for (std::size_t i = 0; i < n; ++i) inc.push_back("w" + std::to_string(uniform_index(rng, vocab)));
  ex.context_turns = {turn};
  ex.incomplete = inc;
  std::set<std::string> all;
  for (std::size_t i = 0; i < vocab; ++i) all.insert("w" + std::to_string(i));
  return encode_example(ex, Vocab::build(all));
}


/// An encoded example whose layout is given directly by two masks (ids are placeholders).
inline EncodedExample from_masks(const std::vector<bool>& ctx, const std::vector<bool>& inc) {
  EncodedExample e;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    e.ids.push_back(ctx[i] || inc[i] ? Vocab::kReserved : Vocab::kSep);
    e.segments.push_back(inc[i] ? 1 : 0);
    e.context_mask.push_back(ctx[i]);
    e.incomplete_mask.push_back(inc[i]);
    e.pad_mask.push_back(false);
    if (ctx[i]) e.context_positions.push_back(i);
    if (inc[i]) e.incomplete_positions.push_back(i);
  }
  e.final_sep = ctx.size() - 1;
  return e;
}

struct GradCheckResult {
  std::size_t sampled = 0;
  std::size_t agreed = 0;
  double worst = 0.0;
  double fraction() const { return sampled ? double(agreed) / double(sampled) : 0.0; }
};

/// Relative error with a small absolute floor so coordinates whose true gradient is ~0
/// are judged on absolute agreement.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares analytic gradients with central differences on `samples` random coordinates.
/// `params` and `grads` must list matching tensors in the same order; `loss` re-evaluates
/// the objective from the current parameter values.
template <typename Loss>
GradCheckResult grad_check(std::vector<TensorRef<double>> params, std::vector<TensorRef<double>> grads, Loss loss,
                           std::size_t samples, Rng& rng, double eps = 1e-3, double tol = 1e-3) {
  std::vector<std::size_t> nonempty;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].value->size() > 0) nonempty.push_back(i);
  GradCheckResult r;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t ti = nonempty[uniform_index(rng, nonempty.size())];
    Mat<double>& p = *params[ti].value;
    const auto j = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(p.size())));
    const double keep = p.data()[j];
    p.data()[j] = keep + eps;
    const double up = loss();
    p.data()[j] = keep - eps;
    const double down = loss();
    p.data()[j] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = relative_error(grads[ti].value->data()[j], numeric);
    r.worst = std::max(r.worst, err);
    ++r.sampled;
    r.agreed += err < tol;
  }
  return r;
}

struct LiveGradCheck {
  GradCheckResult smooth;  // coordinates where the difference quotient is stable
  GradCheckResult raw;     // every draw, kinks included
  std::size_t redrawn = 0;
};

/// Central differences on coordinates drawn uniformly from the flattened parameters whose
/// analytic gradient is nonzero. A draw whose quotient at eps and at eps/10 disagree beyond
/// `tol` straddles a kink of a piecewise-linear layer and is replaced by a fresh draw;
/// `raw` keeps the unfiltered count.
template <typename Loss>
LiveGradCheck grad_check_live(std::vector<TensorRef<double>> params, std::vector<TensorRef<double>> grads, Loss loss,
                              std::size_t samples, Rng& rng, double eps = 1e-3, double tol = 1e-3) {
  std::vector<std::pair<std::size_t, Eigen::Index>> live;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index j = 0; j < grads[i].value->size(); ++j)
      if (grads[i].value->data()[j] != 0.0) live.emplace_back(i, j);
  LiveGradCheck r;
  if (live.empty()) return r;
  auto quotient = [&](double& p, double h) {
    const double keep = p;
    p = keep + h;
    const double up = loss();
    p = keep - h;
    const double down = loss();
    p = keep;
    return (up - down) / (2.0 * h);
  };
  const std::size_t max_draws = 20 * samples;
  for (std::size_t draw = 0; r.smooth.sampled < samples && draw < max_draws; ++draw) {
    const auto [ti, j] = live[uniform_index(rng, live.size())];
    double& p = params[ti].value->data()[j];
    const double analytic = grads[ti].value->data()[j];
    const double coarse = quotient(p, eps);
    const double err = relative_error(analytic, coarse);
    if (r.raw.sampled < samples) {
      r.raw.worst = std::max(r.raw.worst, err);
      ++r.raw.sampled;
      r.raw.agreed += err < tol;
    }
    if (relative_error(coarse, quotient(p, eps / 10.0)) >= tol) {
      ++r.redrawn;
      continue;
    }
    r.smooth.worst = std::max(r.smooth.worst, err);
    ++r.smooth.sampled;
    r.smooth.agreed += err < tol;
  }
  return r;
}

}  // namespace rau::test

namespace rau::test {

/// A model small enough for unit tests: 2 layers, 2 heads, d=16, U-Net depth 1.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.layers = 2;
  c.encoder.heads = 2;
  c.encoder.model_dim = 16;
  c.encoder.ffn_dim = 32;
  c.encoder.max_positions = 64;
  c.encoder.dropout = 0.1;
  c.unet.depth = 1;
  c.unet.base_channels = 4;
  c.max_len = 64;
  c.tokenizer = TokenizerMode::Whitespace;
  return c;
}

}  // namespace rau::test
