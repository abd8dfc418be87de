#pragma once

#include <algorithm>
#include <tuple>
#include <vector>

#include "rau/corpus.hpp"
#include "rau/edit_matrix.hpp"

namespace rau {

/// Bounding box of one 4-connected component of a single edit class. Inclusive bounds.
struct EditGroup {
  EditClass kind = EditClass::None;
  std::size_t row_begin = 0, row_end = 0;
  std::size_t col_begin = 0, col_end = 0;

  bool operator==(const EditGroup&) const = default;
};

/// Components are discovered per class and boxed; the result is ordered by leftmost column,
/// then topmost row, then class (Substitute before Insert), then the far corner.
inline std::vector<EditGroup> extract_groups(const EditMatrix& em) {
  const std::size_t rows = em.rows(), cols = em.cols();
  std::vector<bool> seen(rows * cols, false);
  std::vector<EditGroup> groups;
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t r0 = 0; r0 < rows; ++r0)
    for (std::size_t c0 = 0; c0 < cols; ++c0) {
      const EditClass k = em.at(r0, c0);
      if (k == EditClass::None || seen[r0 * cols + c0]) continue;
      EditGroup g{k, r0, r0, c0, c0};
      stack.assign(1, {r0, c0});
      seen[r0 * cols + c0] = true;
      while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        g.row_begin = std::min(g.row_begin, r), g.row_end = std::max(g.row_end, r);
        g.col_begin = std::min(g.col_begin, c), g.col_end = std::max(g.col_end, c);
        auto visit = [&](std::size_t rr, std::size_t cc) {
          if (em.at(rr, cc) == k && !seen[rr * cols + cc]) {
            seen[rr * cols + cc] = true;
            stack.emplace_back(rr, cc);
          }
        };
        if (r > 0) visit(r - 1, c);
        if (r + 1 < rows) visit(r + 1, c);
        if (c > 0) visit(r, c - 1);
        if (c + 1 < cols) visit(r, c + 1);
      }
      groups.push_back(g);
    }
  auto key = [](const EditGroup& g) { return std::tuple(g.col_begin, g.row_begin, g.kind, g.row_end, g.col_end); };
  std::sort(groups.begin(), groups.end(), [&](const EditGroup& a, const EditGroup& b) { return key(a) < key(b); });
  return groups;
}

struct EditResult {
  Tokens tokens;
  /// Groups dropped because their columns overlap an earlier accepted group, or because a
  /// substitution targets only the end-of-utterance column.
  std::size_t skipped = 0;
};

/// Rewrites x using the groups of `em`, left to right. A Substitute group replaces
/// x[col_begin..col_end] with c[row_begin..row_end]; an Insert group puts c[row_begin..row_end]
/// before x[col_begin] (after the last token when col_begin is the end-of-utterance column).
/// A group whose column interval meets an already accepted group is skipped.
inline EditResult apply_edits(const Tokens& c, const Tokens& x, const EditMatrix& em) {
  const std::size_t n = x.size();
  if (em.rows() != c.size() || (em.cols() != n && em.cols() != n + 1))
    throw ShapeError("edit matrix is " + std::to_string(em.rows()) + "x" + std::to_string(em.cols()) +
                     " but |c|=" + std::to_string(c.size()) + ", |x|=" + std::to_string(n));
  EditResult out;
  std::vector<bool> claimed(n + 1, false);
  std::vector<const EditGroup*> insert_at(n + 1, nullptr);
  std::vector<const EditGroup*> subst_at(n, nullptr);
  std::vector<bool> replaced(n, false);
  const auto groups = extract_groups(em);
  for (const auto& g : groups) {
    std::size_t hi = g.col_end;
    if (g.kind == EditClass::Substitute) {
      if (g.col_begin >= n) {
        ++out.skipped;
        continue;
      }
      hi = std::min(hi, n - 1);
    }
    bool clash = false;
    for (std::size_t col = g.col_begin; col <= g.col_end; ++col) clash |= claimed[col];
    if (clash) {
      ++out.skipped;
      continue;
    }
    for (std::size_t col = g.col_begin; col <= g.col_end; ++col) claimed[col] = true;
    if (g.kind == EditClass::Insert) {
      insert_at[g.col_begin] = &g;
    } else {
      subst_at[g.col_begin] = &g;
      for (std::size_t col = g.col_begin; col <= hi; ++col) replaced[col] = true;
    }
  }
  auto emit_rows = [&](const EditGroup& g) {
    for (std::size_t r = g.row_begin; r <= g.row_end; ++r) out.tokens.push_back(c[r]);
  };
  for (std::size_t j = 0; j <= n; ++j) {
    if (insert_at[j]) emit_rows(*insert_at[j]);
    if (j == n) break;
    if (subst_at[j]) emit_rows(*subst_at[j]);
    if (!replaced[j]) out.tokens.push_back(x[j]);
  }
  return out;
}

inline Tokens apply(const Tokens& c, const Tokens& x, const EditMatrix& em) { return apply_edits(c, x, em).tokens; }

}  // namespace rau
