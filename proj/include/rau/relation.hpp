#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rau/corpus.hpp"
#include "rau/encoder.hpp"
#include "rau/errors.hpp"
#include "rau/tensor.hpp"

namespace rau {

/// Which (layer, head) attention matrices feed the relation tensor. Indices are 0-based;
/// textual forms ("last", "all", "1,6,12", "1-6") are 1-based.
struct SelectionSpec {
  std::vector<std::size_t> layers;
  std::vector<std::size_t> heads;

  std::size_t selected() const { return layers.size() * heads.size(); }

  static SelectionSpec last_layer(const EncoderConfig& cfg) {
    SelectionSpec s;
    s.layers = {cfg.layers - 1};
    for (std::size_t h = 0; h < cfg.heads; ++h) s.heads.push_back(h);
    return s;
  }

  void validate(std::size_t num_layers, std::size_t num_heads) const {
    auto check = [](const std::vector<std::size_t>& v, std::size_t bound, const char* what) {
      if (v.empty()) throw ConfigError(std::string("selection: empty ") + what + " list");
      std::set<std::size_t> seen;
      for (auto i : v) {
        if (i >= bound)
          throw IndexOutOfRange(std::string("selection: ") + what + " index " + std::to_string(i + 1) +
                                " out of range 1.." + std::to_string(bound));
        if (!seen.insert(i).second)
          throw ConfigError(std::string("selection: duplicate ") + what + " index " + std::to_string(i + 1));
      }
    };
    check(layers, num_layers, "layer");
    check(heads, num_heads, "head");
  }

  bool operator==(const SelectionSpec&) const = default;
};

/// Parses "last", "all", or a comma list of 1-based indices and ranges ("1,6,12", "1-6").
inline std::vector<std::size_t> parse_index_list(const std::string& text, std::size_t count) {
  std::vector<std::size_t> out;
  if (text == "all") {
    for (std::size_t i = 0; i < count; ++i) out.push_back(i);
    return out;
  }
  if (text == "last") return {count - 1};
  auto to_index = [&](const std::string& s) -> std::size_t {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad index '" + s + "' in selection '" + text + "'");
    }
    if (used != s.size() || v == 0) throw ConfigError("bad index '" + s + "' in selection '" + text + "'");
    return v - 1;
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    std::string item = detail::trim(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(to_index(item));
    } else {
      auto lo = to_index(item.substr(0, dash)), hi = to_index(item.substr(dash + 1));
      if (hi < lo) throw ConfigError("descending range '" + item + "'");
      for (auto i = lo; i <= hi; ++i) out.push_back(i);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string format_index_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i] + 1);
  return s;
}

/// Channel-major tensor: values(channel, m * cols + n). For selected head j, channel 2j holds
/// context->incomplete weights and channel 2j+1 the transposed incomplete->context weights.
template <typename S>
struct RelationTensor {
  Mat<S> values;
  std::size_t rows = 0;  // M
  std::size_t cols = 0;  // N, or N+1 with the end-of-utterance column

  std::size_t channels() const { return static_cast<std::size_t>(values.rows()); }
  S at(std::size_t m, std::size_t n, std::size_t ch) const {
    return values(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(m * cols + n));
  }
};

/// Column anchors of the relation grid: the incomplete-utterance positions, optionally followed
/// by the closing [SEP] as an end-of-utterance column.
inline std::vector<std::size_t> column_positions(const EncodedExample& ex, bool eou_column) {
  auto cols = ex.incomplete_positions;
  if (eou_column) cols.push_back(ex.final_sep);
  return cols;
}

namespace detail {

inline void check_masks(std::size_t t, const EncodedExample& ex) {
  if (ex.context_mask.size() != t || ex.incomplete_mask.size() != t)
    throw ShapeError("mask length " + std::to_string(ex.context_mask.size()) + " differs from matrix size " +
                     std::to_string(t));
  for (auto p : ex.context_positions)
    if (p >= t || !ex.context_mask[p]) throw ShapeError("context position disagrees with context mask");
  for (auto p : ex.incomplete_positions)
    if (p >= t || !ex.incomplete_mask[p]) throw ShapeError("incomplete position disagrees with incomplete mask");
  std::size_t nc = 0, nx = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (ex.context_mask[i] && ex.incomplete_mask[i]) throw ShapeError("context and incomplete masks overlap");
    nc += ex.context_mask[i];
    nx += ex.incomplete_mask[i];
  }
  if (nc != ex.context_positions.size() || nx != ex.incomplete_positions.size())
    throw ShapeError("mask population differs from position lists");
}

}  // namespace detail

/// Top-right block (context rows attending to incomplete columns) and the bottom-left block
/// (incomplete attending to context) transposed into the same M x N orientation.
template <typename S>
std::pair<Mat<S>, Mat<S>> slice_pair(const Mat<S>& head, const EncodedExample& ex) {
  const auto t = ex.length();
  if (static_cast<std::size_t>(head.rows()) != t || static_cast<std::size_t>(head.cols()) != t)
    throw ShapeError("slice_pair: head matrix is " + std::to_string(head.rows()) + "x" + std::to_string(head.cols()) +
                     ", expected " + std::to_string(t) + "x" + std::to_string(t));
  detail::check_masks(t, ex);
  const auto m = static_cast<Eigen::Index>(ex.M()), n = static_cast<Eigen::Index>(ex.N());
  Mat<S> top(m, n), bottom(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto rc = static_cast<Eigen::Index>(ex.context_positions[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto rx = static_cast<Eigen::Index>(ex.incomplete_positions[static_cast<std::size_t>(j)]);
      top(i, j) = head(rc, rx);
      bottom(i, j) = head(rx, rc);
    }
  }
  return {std::move(top), std::move(bottom)};
}

template <typename S>
RelationTensor<S> assemble(const AttentionStack<S>& stack, const EncodedExample& ex, const SelectionSpec& spec,
                           bool eou_column = false) {
  spec.validate(stack.layers(), stack.heads());
  const auto t = ex.length();
  detail::check_masks(t, ex);
  const auto cols = column_positions(ex, eou_column);
  RelationTensor<S> rt;
  rt.rows = ex.M();
  rt.cols = cols.size();
  rt.values.resize(static_cast<Eigen::Index>(2 * spec.selected()), static_cast<Eigen::Index>(rt.rows * rt.cols));
  Eigen::Index ch = 0;
  for (auto l : spec.layers) {
    for (auto h : spec.heads) {
      const Mat<S>& a = stack.at(l, h);
      if (static_cast<std::size_t>(a.rows()) != t) throw ShapeError("assemble: attention matrix size differs from T");
      for (std::size_t i = 0; i < rt.rows; ++i) {
        const auto rc = static_cast<Eigen::Index>(ex.context_positions[i]);
        for (std::size_t j = 0; j < rt.cols; ++j) {
          const auto rx = static_cast<Eigen::Index>(cols[j]);
          const auto cell = static_cast<Eigen::Index>(i * rt.cols + j);
          rt.values(ch, cell) = a(rc, rx);
          rt.values(ch + 1, cell) = a(rx, rc);
        }
      }
      ch += 2;
    }
  }
  return rt;
}

/// Scatters a relation-tensor gradient back into attention-stack layout (zeros elsewhere).
template <typename S>
AttentionStack<S> assemble_backward(const Mat<S>& d_values, const EncodedExample& ex, const SelectionSpec& spec,
                                    std::size_t num_layers, std::size_t num_heads, bool eou_column = false) {
  const auto cols = column_positions(ex, eou_column);
  const std::size_t m = ex.M(), n = cols.size();
  if (static_cast<std::size_t>(d_values.rows()) != 2 * spec.selected() ||
      static_cast<std::size_t>(d_values.cols()) != m * n)
    throw ShapeError("assemble_backward: gradient shape does not match selection");
  auto grad = AttentionStack<S>::zeros(num_layers, num_heads, ex.length());
  Eigen::Index ch = 0;
  for (auto l : spec.layers) {
    for (auto h : spec.heads) {
      Mat<S>& g = grad.weights[l][h];
      for (std::size_t i = 0; i < m; ++i) {
        const auto rc = static_cast<Eigen::Index>(ex.context_positions[i]);
        for (std::size_t j = 0; j < n; ++j) {
          const auto rx = static_cast<Eigen::Index>(cols[j]);
          const auto cell = static_cast<Eigen::Index>(i * n + j);
          g(rc, rx) += d_values(ch, cell);
          g(rx, rc) += d_values(ch + 1, cell);
        }
      }
      ch += 2;
    }
  }
  return grad;
}

}  // namespace rau
