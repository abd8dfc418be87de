#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rau/corpus.hpp"
#include "rau/errors.hpp"

namespace rau {

using NgramCounts = std::map<Tokens, std::size_t>;

inline NgramCounts ngram_counts(const Tokens& s, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    ++counts[Tokens(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

inline std::size_t total(const NgramCounts& c) {
  std::size_t t = 0;
  for (const auto& [_, v] : c) t += v;
  return t;
}

/// Multiset intersection size.
inline std::size_t overlap(const NgramCounts& a, const NgramCounts& b) {
  std::size_t o = 0;
  for (const auto& [g, v] : a) {
    auto it = b.find(g);
    if (it != b.end()) o += std::min(v, it->second);
  }
  return o;
}

inline double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline bool exact_match(const Tokens& cand, const Tokens& ref) { return cand == ref; }

inline double exact_match(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs) {
  if (cands.size() != refs.size()) throw ShapeError("exact_match: corpus sizes differ");
  if (cands.empty()) throw EmptyCorpus();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) hits += cands[i] == refs[i];
  return double(hits) / double(cands.size());
}

inline constexpr double kBleuLogFloor = 1e-9;

/// Corpus BLEU with uniform weights over n = 1..max_n and brevity penalty exp(1 - r/c) for
/// c < r. A zero precision enters the log as 1e-9. An order with no candidate n-grams at all
/// counts as precision 1 when the references have none either, 0 otherwise.
inline double bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs, std::size_t max_n = 4) {
  if (cands.size() != refs.size()) throw ShapeError("bleu: corpus sizes differ");
  if (cands.empty()) throw EmptyCorpus();
  if (max_n < 1 || max_n > 4) throw ConfigError("bleu: max_n must be in 1..4");
  double c_len = 0.0, r_len = 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    std::size_t clipped = 0, cand_total = 0, ref_total = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      auto cc = ngram_counts(cands[i], n);
      auto rc = ngram_counts(refs[i], n);
      clipped += overlap(cc, rc);
      cand_total += total(cc);
      ref_total += total(rc);
    }
    double p = cand_total ? double(clipped) / double(cand_total) : (ref_total ? 0.0 : 1.0);
    log_sum += std::log(p > 0.0 ? p : kBleuLogFloor);
  }
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c_len += double(cands[i].size());
    r_len += double(refs[i].size());
  }
  if (c_len == 0.0) return 0.0;
  const double bp = c_len < r_len ? std::exp(1.0 - r_len / c_len) : 1.0;
  return bp * std::exp(log_sum / double(max_n));
}

/// F1 of n-gram multiset overlap. Two sequences both too short for order n score 1 when
/// equal, otherwise sides without n-grams score 0.
inline double rouge_n(const Tokens& cand, const Tokens& ref, std::size_t n) {
  auto cc = ngram_counts(cand, n), rc = ngram_counts(ref, n);
  const auto ct = total(cc), rt = total(rc);
  if (ct == 0 && rt == 0) return cand == ref ? 1.0 : 0.0;
  if (ct == 0 || rt == 0) return 0.0;
  const double o = double(overlap(cc, rc));
  return f1(o / double(ct), o / double(rt));
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// F_LCS with beta = 1.
inline double rouge_l(const Tokens& cand, const Tokens& ref) {
  if (cand.empty() || ref.empty()) return cand.empty() && ref.empty() ? 1.0 : 0.0;
  const double l = double(lcs_length(cand, ref));
  return f1(l / double(cand.size()), l / double(ref.size()));
}

struct PRF {
  double p = 0.0, r = 0.0, f = 0.0;
};

/// n-grams of `s` containing at least one token that does not occur in x.
inline NgramCounts restored_ngrams(const Tokens& s, const Tokens& x, std::size_t n) {
  std::set<std::string> base(x.begin(), x.end());
  NgramCounts out;
  for (auto& [g, v] : ngram_counts(s, n))
    if (std::any_of(g.begin(), g.end(), [&](const std::string& t) { return !base.count(t); })) out[g] = v;
  return out;
}

namespace detail {

inline PRF prf_from_counts(double inter, double cand_total, double gold_total) {
  PRF out;
  if (cand_total == 0.0 && gold_total == 0.0) return {1.0, 1.0, 1.0};
  out.p = cand_total > 0.0 ? inter / cand_total : 0.0;
  out.r = gold_total > 0.0 ? inter / gold_total : 0.0;
  out.f = f1(out.p, out.r);
  return out;
}

}  // namespace detail

/// Precision/recall/F of restored n-grams (relative to the incomplete utterance x).
inline PRF restoration(const Tokens& cand, const Tokens& ref, const Tokens& x, std::size_t n) {
  auto rc = restored_ngrams(cand, x, n), rg = restored_ngrams(ref, x, n);
  return detail::prf_from_counts(double(overlap(rc, rg)), double(total(rc)), double(total(rg)));
}

/// Corpus restoration score: counts are pooled over examples before dividing.
inline PRF restoration(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs,
                       const std::vector<Tokens>& xs, std::size_t n) {
  if (cands.size() != refs.size() || cands.size() != xs.size()) throw ShapeError("restoration: corpus sizes differ");
  if (cands.empty()) throw EmptyCorpus();
  double inter = 0.0, ct = 0.0, gt = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    auto rc = restored_ngrams(cands[i], xs[i], n), rg = restored_ngrams(refs[i], xs[i], n);
    inter += double(overlap(rc, rg));
    ct += double(total(rc));
    gt += double(total(rg));
  }
  return detail::prf_from_counts(inter, ct, gt);
}

struct MetricReport {
  double em = 0.0;
  double bleu[4] = {0, 0, 0, 0};
  double rouge[2] = {0, 0};
  double rouge_l = 0.0;
  PRF restoration[3];
  std::size_t count = 0;

  /// Fixed key order: EM, B1..B4, R1, R2, RL, then P, Rec, F for n = 1..3.
  std::vector<std::pair<std::string, double>> fields() const {
    std::vector<std::pair<std::string, double>> f{{"EM", em},
                                                  {"B1", bleu[0]},
                                                  {"B2", bleu[1]},
                                                  {"B3", bleu[2]},
                                                  {"B4", bleu[3]},
                                                  {"R1", rouge[0]},
                                                  {"R2", rouge[1]},
                                                  {"RL", rouge_l}};
    for (int n = 0; n < 3; ++n) {
      const auto k = std::to_string(n + 1);
      f.emplace_back("P" + k, restoration[n].p);
      f.emplace_back("Rec" + k, restoration[n].r);
      f.emplace_back("F" + k, restoration[n].f);
    }
    return f;
  }

  /// Single text record, 4 decimal places.
  std::string format() const {
    std::string s;
    for (const auto& [k, v] : fields()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v);
      s += k + "=" + buf + " ";
    }
    s += "n=" + std::to_string(count);
    return s;
  }
};

inline MetricReport evaluate(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs,
                             const std::vector<Tokens>& xs) {
  if (cands.size() != refs.size() || cands.size() != xs.size()) throw ShapeError("evaluate: corpus sizes differ");
  if (cands.empty()) throw EmptyCorpus();
  MetricReport rep;
  rep.count = cands.size();
  rep.em = exact_match(cands, refs);
  for (std::size_t n = 1; n <= 4; ++n) rep.bleu[n - 1] = bleu(cands, refs, n);
  double r1 = 0, r2 = 0, rl = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    r1 += rouge_n(cands[i], refs[i], 1);
    r2 += rouge_n(cands[i], refs[i], 2);
    rl += rouge_l(cands[i], refs[i]);
  }
  const double k = double(cands.size());
  rep.rouge[0] = r1 / k;
  rep.rouge[1] = r2 / k;
  rep.rouge_l = rl / k;
  for (std::size_t n = 1; n <= 3; ++n) rep.restoration[n - 1] = restoration(cands, refs, xs, n);
  return rep;
}

}  // namespace rau
