#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "rau/corpus.hpp"
#include "rau/edit_matrix.hpp"

namespace rau {

/// A run of reference tokens that the incomplete utterance lacks, tied to where it goes in x
/// and (once resolved) where it comes from in c. Intervals are half-open.
struct AlignmentSpan {
  EditClass kind = EditClass::Insert;
  Tokens ref_tokens;
  /// Substitute: the replaced x columns. Insert: {anchor, anchor}; anchor == |x| is the
  /// end-of-utterance column.
  std::pair<std::size_t, std::size_t> x_cols{0, 0};
  std::optional<std::pair<std::size_t, std::size_t>> ctx_rows;

  std::size_t anchor() const { return x_cols.first; }
  bool operator==(const AlignmentSpan&) const = default;
};

/// Matched (x index, ref index) pairs of a longest common subsequence. Ties in the DP advance
/// the reference first, so x tokens bind to their earliest feasible reference position.
inline std::vector<std::pair<std::size_t, std::size_t>> lcs_alignment(const Tokens& x, const Tokens& ref) {
  const std::size_t n = x.size(), m = ref.size();
  std::vector<std::vector<std::size_t>> suffix(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      suffix[i][j] = x[i] == ref[j] ? suffix[i + 1][j + 1] + 1 : std::max(suffix[i + 1][j], suffix[i][j + 1]);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    if (x[i] == ref[j]) {
      pairs.emplace_back(i++, j++);
    } else if (suffix[i][j + 1] >= suffix[i + 1][j]) {
      ++j;
    } else {
      ++i;
    }
  }
  return pairs;
}

namespace detail {

struct Gap {
  std::size_t x_begin, x_end, ref_begin, ref_end;
};

/// The unaligned stretches between consecutive LCS matches (plus before the first and after
/// the last).
inline std::vector<Gap> alignment_gaps(const Tokens& x, const Tokens& ref) {
  auto pairs = lcs_alignment(x, ref);
  std::vector<Gap> gaps;
  std::size_t xi = 0, ri = 0;
  pairs.emplace_back(x.size(), ref.size());
  for (auto [xa, ra] : pairs) {
    if (xa > xi || ra > ri) gaps.push_back({xi, xa, ri, ra});
    xi = xa + 1;
    ri = ra + 1;
  }
  return gaps;
}

}  // namespace detail

/// Reference runs outside the LCS become spans: Substitute when the same gap also holds
/// unmatched x tokens, Insert anchored before the next aligned x token otherwise.
inline std::vector<AlignmentSpan> diff_spans(const Tokens& x, const Tokens& ref) {
  std::vector<AlignmentSpan> spans;
  for (const auto& g : detail::alignment_gaps(x, ref)) {
    if (g.ref_begin == g.ref_end) continue;
    AlignmentSpan s;
    s.ref_tokens.assign(ref.begin() + static_cast<std::ptrdiff_t>(g.ref_begin),
                        ref.begin() + static_cast<std::ptrdiff_t>(g.ref_end));
    if (g.x_begin < g.x_end) {
      s.kind = EditClass::Substitute;
      s.x_cols = {g.x_begin, g.x_end};
    } else {
      s.kind = EditClass::Insert;
      s.x_cols = {g.x_begin, g.x_begin};
    }
    spans.push_back(std::move(s));
  }
  return spans;
}

/// Count of x runs that the reference deletes outright; no edit class can express them.
inline std::size_t count_deletions(const Tokens& x, const Tokens& ref) {
  std::size_t n = 0;
  for (const auto& g : detail::alignment_gaps(x, ref)) n += g.ref_begin == g.ref_end && g.x_begin < g.x_end;
  return n;
}

struct ResolvedSpans {
  std::vector<AlignmentSpan> spans;
  std::size_t dropped = 0;
};

/// Locates every span's tokens as a contiguous run of c, preferring the last occurrence.
/// Spans absent from c are dropped and counted.
inline ResolvedSpans resolve_context(std::vector<AlignmentSpan> spans, const Tokens& c) {
  ResolvedSpans out;
  for (auto& s : spans) {
    const std::size_t len = s.ref_tokens.size();
    std::optional<std::size_t> found;
    for (std::size_t start = c.size() >= len ? c.size() - len + 1 : 0; start-- > 0;) {
      if (std::equal(s.ref_tokens.begin(), s.ref_tokens.end(), c.begin() + static_cast<std::ptrdiff_t>(start))) {
        found = start;
        break;
      }
    }
    if (!found) {
      ++out.dropped;
      continue;
    }
    s.ctx_rows = std::pair{*found, *found + len};
    out.spans.push_back(std::move(s));
  }
  return out;
}

struct LabelMatrix {
  EditMatrix matrix;
  std::size_t conflicts = 0;
};

/// Paints each resolved span's rectangle. The matrix gains the end-of-utterance column only
/// when some Insert is anchored there. Each span claims its x columns (an Insert claims its
/// anchor); a span touching an already claimed column, or one that would fuse with a
/// same-class neighbour, is skipped and counted. The earlier span wins, matching how the
/// editor resolves overlapping groups.
inline LabelMatrix spans_to_matrix(const std::vector<AlignmentSpan>& spans, std::size_t m, std::size_t n) {
  bool virtual_col = false;
  for (const auto& s : spans) virtual_col |= s.kind == EditClass::Insert && s.anchor() == n;
  LabelMatrix out{EditMatrix(m, virtual_col ? n + 1 : n), 0};
  std::vector<bool> claimed(out.matrix.cols(), false);
  for (const auto& s : spans) {
    if (!s.ctx_rows) continue;
    const auto [r0, r1] = *s.ctx_rows;
    const std::size_t c0 = s.x_cols.first;
    const std::size_t c1 = s.kind == EditClass::Insert ? c0 + 1 : s.x_cols.second;
    if (r1 > m || c1 > out.matrix.cols() || r0 >= r1 || c0 >= c1)
      throw IndexOutOfRange("span rectangle outside the " + std::to_string(m) + "x" +
                            std::to_string(out.matrix.cols()) + " matrix");
    bool clash = false;
    for (std::size_t c = c0; c < c1; ++c) clash |= claimed[c];
    // A same-class neighbour in an adjacent column would fuse into one component.
    for (std::size_t r = r0; r < r1 && !clash; ++r)
      clash = (c0 > 0 && out.matrix.at(r, c0 - 1) == s.kind) ||
              (c1 < out.matrix.cols() && out.matrix.at(r, c1) == s.kind);
    if (clash) {
      ++out.conflicts;
      continue;
    }
    for (std::size_t c = c0; c < c1; ++c) claimed[c] = true;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) out.matrix.set(r, c, s.kind);
  }
  return out;
}

struct LabelResult {
  EditMatrix matrix;
  std::vector<AlignmentSpan> spans;  // resolved
  std::size_t dropped = 0;
  std::size_t conflicts = 0;
  std::size_t deletions = 0;

  bool complete() const { return dropped == 0 && conflicts == 0 && deletions == 0; }
};

/// Gold edit matrix for (c, x, ref).
inline LabelResult label(const Tokens& c, const Tokens& x, const Tokens& ref) {
  LabelResult out;
  auto resolved = resolve_context(diff_spans(x, ref), c);
  auto lm = spans_to_matrix(resolved.spans, c.size(), x.size());
  out.matrix = std::move(lm.matrix);
  out.spans = std::move(resolved.spans);
  out.dropped = resolved.dropped;
  out.conflicts = lm.conflicts;
  out.deletions = count_deletions(x, ref);
  return out;
}

}  // namespace rau
