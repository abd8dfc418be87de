#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rau/errors.hpp"
#include "rau/tensor.hpp"

namespace rau {

using Tokens = std::vector<std::string>;

enum class TokenizerMode { Char, Whitespace };

inline std::string to_string(TokenizerMode m) { return m == TokenizerMode::Char ? "char" : "whitespace"; }

inline TokenizerMode parse_tokenizer_mode(const std::string& s) {
  if (s == "char") return TokenizerMode::Char;
  if (s == "whitespace") return TokenizerMode::Whitespace;
  throw ConfigError("unknown tokenizer mode '" + s + "' (expected char or whitespace)");
}

namespace utf8 {

/// Decodes one scalar value starting at `pos`; invalid sequences decode to U+FFFD and
/// consume a single byte.
inline char32_t decode(std::string_view s, std::size_t& pos) {
  auto b0 = static_cast<unsigned char>(s[pos]);
  auto cont = [&](std::size_t i) -> int {
    if (pos + i >= s.size()) return -1;
    auto b = static_cast<unsigned char>(s[pos + i]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++pos;
    return b0;
  }
  int len = (b0 & 0xE0) == 0xC0 ? 2 : (b0 & 0xF0) == 0xE0 ? 3 : (b0 & 0xF8) == 0xF0 ? 4 : 0;
  if (len == 0) {
    ++pos;
    return 0xFFFD;
  }
  char32_t cp = b0 & (0x7F >> len);
  for (int i = 1; i < len; ++i) {
    int c = cont(static_cast<std::size_t>(i));
    if (c < 0) {
      ++pos;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  pos += static_cast<std::size_t>(len);
  return cp;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

}  // namespace utf8

namespace detail {

inline bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' || c == 0x00A0 ||
         c == 0x3000;
}

inline bool is_ascii_alnum(char32_t c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

inline bool is_ascii_alnum_token(const std::string& t) {
  return !t.empty() && std::all_of(t.begin(), t.end(), [](char ch) {
    return is_ascii_alnum(static_cast<unsigned char>(ch));
  });
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Char mode: one token per Unicode scalar, except that contiguous ASCII letters/digits
/// stay together; whitespace separates and is dropped. Whitespace mode: split on runs.
inline Tokens tokenize(std::string_view text, TokenizerMode mode) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    char32_t cp = utf8::decode(text, pos);
    if (detail::is_space(cp)) {
      flush();
      continue;
    }
    if (mode == TokenizerMode::Whitespace || detail::is_ascii_alnum(cp)) {
      utf8::append(current, cp);
      continue;
    }
    flush();
    std::string single;
    utf8::append(single, cp);
    out.push_back(std::move(single));
  }
  flush();
  if (out.empty()) throw EmptyUtterance();
  return out;
}

/// Inverse of tokenize up to whitespace normalization.
inline std::string detokenize(const Tokens& tokens, TokenizerMode mode) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      bool spaced = mode == TokenizerMode::Whitespace ||
                    (detail::is_ascii_alnum_token(tokens[i - 1]) && detail::is_ascii_alnum_token(tokens[i]));
      if (spaced) out += ' ';
    }
    out += tokens[i];
  }
  return out;
}

class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kCls = 1;
  static constexpr std::int32_t kSep = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kReserved = 4;

  static const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r{"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
    return r;
  }

  Vocab() {
    for (const auto& t : reserved_tokens()) add(t);
  }

  /// Reserved tokens first, then the distinct non-reserved tokens in lexicographic order.
  static Vocab build(const std::set<std::string>& tokens) {
    Vocab v;
    for (const auto& t : tokens) v.add(t);
    return v;
  }

  static Vocab from_tokens(const std::vector<std::string>& all) {
    if (all.size() < static_cast<std::size_t>(kReserved)) throw DataError("vocabulary shorter than reserved block");
    for (std::size_t i = 0; i < static_cast<std::size_t>(kReserved); ++i) {
      if (all[i] != reserved_tokens()[i])
        throw DataError("vocabulary line " + std::to_string(i + 1) + " must be " + reserved_tokens()[i]);
    }
    Vocab v;
    for (std::size_t i = static_cast<std::size_t>(kReserved); i < all.size(); ++i) {
      if (v.index_.count(all[i])) throw DataError("duplicate vocabulary token '" + all[i] + "'");
      v.add(all[i]);
    }
    return v;
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    return from_tokens(lines);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::int32_t lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& render(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw IndexOutOfRange("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void add(const std::string& t) {
    index_.emplace(t, static_cast<std::int32_t>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct DialogueExample {
  std::vector<Tokens> context_turns;
  Tokens incomplete;
  std::optional<Tokens> reference;
  std::size_t line_no = 0;

  /// Context turns concatenated without separators: the token sequence c.
  Tokens context() const {
    Tokens c;
    for (const auto& t : context_turns) c.insert(c.end(), t.begin(), t.end());
    return c;
  }

  bool operator==(const DialogueExample& o) const {
    return context_turns == o.context_turns && incomplete == o.incomplete && reference == o.reference;
  }
};

inline void validate(const DialogueExample& ex) {
  if (ex.context_turns.empty()) throw EmptyUtterance("no context turns");
  for (const auto& t : ex.context_turns)
    if (t.empty()) throw EmptyUtterance("empty context turn");
  if (ex.incomplete.empty()) throw EmptyUtterance("incomplete utterance");
  if (ex.reference && ex.reference->empty()) throw EmptyUtterance("reference");
}

inline constexpr std::string_view kTurnSeparator = "<eou>";

/// Parses one TSV line: `turn <eou> turn ... \t incomplete [\t reference]`.
inline DialogueExample parse_tsv_line(const std::string& raw, std::size_t line_no, TokenizerMode mode) {
  std::string line = raw;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (fields.size() < 2 || fields.size() > 3)
    throw MalformedLine(line_no, "expected 2 or 3 tab-separated fields, got " + std::to_string(fields.size()));

  auto tok = [&](const std::string& text, const char* what) {
    if (detail::trim(text).empty())
      throw EmptyUtterance(std::string(what) + " at line " + std::to_string(line_no));
    return tokenize(text, mode);
  };

  DialogueExample ex;
  ex.line_no = line_no;
  const std::string& ctx = fields[0];
  std::size_t pos = 0;
  while (true) {
    auto sep = ctx.find(kTurnSeparator, pos);
    std::string turn = ctx.substr(pos, sep == std::string::npos ? std::string::npos : sep - pos);
    ex.context_turns.push_back(tok(turn, "context turn"));
    if (sep == std::string::npos) break;
    pos = sep + kTurnSeparator.size();
  }
  ex.incomplete = tok(fields[1], "incomplete utterance");
  if (fields.size() == 3 && !detail::trim(fields[2]).empty()) ex.reference = tokenize(fields[2], mode);
  return ex;
}

/// Reads every example in file order. Blank lines are skipped but still counted.
inline std::vector<DialogueExample> read_tsv(const std::string& path, TokenizerMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<DialogueExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    out.push_back(parse_tsv_line(line, line_no, mode));
  }
  return out;
}

inline std::string format_tsv_line(const DialogueExample& ex, TokenizerMode mode) {
  std::string line;
  for (std::size_t i = 0; i < ex.context_turns.size(); ++i) {
    if (i > 0) line += " <eou> ";
    line += detokenize(ex.context_turns[i], mode);
  }
  line += '\t';
  line += detokenize(ex.incomplete, mode);
  if (ex.reference) {
    line += '\t';
    line += detokenize(*ex.reference, mode);
  }
  return line;
}

inline void write_tsv(const std::string& path, const std::vector<DialogueExample>& examples, TokenizerMode mode) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& ex : examples) out << format_tsv_line(ex, mode) << '\n';
}

inline Vocab build_vocab(const std::vector<DialogueExample>& examples) {
  std::set<std::string> tokens;
  for (const auto& ex : examples) {
    for (const auto& t : ex.context_turns) tokens.insert(t.begin(), t.end());
    tokens.insert(ex.incomplete.begin(), ex.incomplete.end());
    if (ex.reference) tokens.insert(ex.reference->begin(), ex.reference->end());
  }
  for (const auto& r : Vocab::reserved_tokens()) tokens.erase(r);
  return Vocab::build(tokens);
}

struct EncodedExample {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> segments;
  std::vector<bool> context_mask;
  std::vector<bool> incomplete_mask;
  std::vector<bool> pad_mask;
  /// Positions of c_1..c_M and x_1..x_N in `ids`.
  std::vector<std::size_t> context_positions;
  std::vector<std::size_t> incomplete_positions;
  /// Position of the [SEP] closing the incomplete utterance.
  std::size_t final_sep = 0;

  std::size_t length() const { return ids.size(); }
  std::size_t M() const { return context_positions.size(); }
  std::size_t N() const { return incomplete_positions.size(); }
  std::size_t S() const { return length() - M() - N(); }
};

inline constexpr std::size_t kDefaultMaxLen = 128;

/// Layout: [CLS] turn_1 [SEP] ... turn_k [SEP] incomplete [SEP].
inline EncodedExample encode_example(const DialogueExample& ex, const Vocab& vocab,
                                     std::size_t max_len = kDefaultMaxLen) {
  validate(ex);
  std::size_t total = 1 + ex.incomplete.size() + 1;
  for (const auto& t : ex.context_turns) total += t.size() + 1;
  if (total > max_len) throw TooLong(total, max_len);

  EncodedExample enc;
  enc.ids.reserve(total);
  auto push = [&](std::int32_t id, std::int32_t seg, bool ctx, bool inc) {
    if (ctx) enc.context_positions.push_back(enc.ids.size());
    if (inc) enc.incomplete_positions.push_back(enc.ids.size());
    enc.ids.push_back(id);
    enc.segments.push_back(seg);
    enc.context_mask.push_back(ctx);
    enc.incomplete_mask.push_back(inc);
    enc.pad_mask.push_back(false);
  };
  push(Vocab::kCls, 0, false, false);
  for (const auto& turn : ex.context_turns) {
    for (const auto& t : turn) push(vocab.lookup(t), 0, true, false);
    push(Vocab::kSep, 0, false, false);
  }
  for (const auto& t : ex.incomplete) push(vocab.lookup(t), 1, false, true);
  enc.final_sep = enc.ids.size();
  push(Vocab::kSep, 1, false, false);
  return enc;
}

// Synthetic dialogues. Frame words, entity words, activity words and pronouns are
// pairwise disjoint so the LCS alignment between incomplete and reference is unique.
namespace synth {

struct Entity {
  const char* text;
  int gender;  // 0 she, 1 he, 2 it
};

inline const std::vector<Entity>& entities() {
  static const std::vector<Entity> e{
      {"my daughter", 0},   {"my sister", 0},      {"the young girl", 0}, {"our new teacher", 0},
      {"your mother", 0},   {"the nurse", 0},      {"my son", 1},         {"his father", 1},
      {"the old man", 1},   {"your brother", 1},   {"the new boss", 1},   {"the driver", 1},
      {"the cat", 2},       {"our dog", 2},        {"the red car", 2},    {"my laptop", 2},
      {"the small bird", 2}, {"this phone", 2},
  };
  return e;
}

inline const std::vector<const char*>& activities() {
  static const std::vector<const char*> a{
      "eat napkins",     "play chess",   "drink cold milk", "watch cartoons", "sing loudly",
      "run outside",     "break toys",   "sleep late",      "climb trees",    "chew paper",
      "paint walls",     "jump around",  "read comics",     "bake bread",     "swim daily",
  };
  return a;
}

inline const char* pronoun(int gender) {
  static const char* p[] = {"she", "he", "it"};
  return p[gender];
}

struct Frame {
  const char* incomplete;  // {P} pronoun slot, {A} omitted activity slot
  bool substitute;
  bool insert;
};

inline const std::vector<Frame>& frames() {
  static const std::vector<Frame> f{
      {"why does {P} do that", true, false},
      {"how tall is {P} now", true, false},
      {"can {P} stop soon", true, false},
      {"where does {P} live", true, false},
      {"is wanting to {A} normal", false, true},
      {"how often should kids {A} per week", false, true},
      {"why does {P} want to {A} so much", true, true},
      {"does {P} really {A} every day", true, true},
  };
  return f;
}

inline const std::vector<const char*>& first_turns() {
  static const std::vector<const char*> t{
      "{E} always wants to {A}", "{E} keeps trying to {A}", "lately {E} likes to {A}",
      "{E} started to {A} yesterday",
  };
  return t;
}

inline const std::vector<const char*>& replies() {
  static const std::vector<const char*> r{"that sounds hard", "really", "oh no", "i see", "is that so",
                                           "sounds fun"};
  return r;
}

inline Tokens words(const std::string& s) { return tokenize(s, TokenizerMode::Whitespace); }

inline std::string fill(std::string tmpl, const std::string& key, const std::string& value) {
  for (auto p = tmpl.find(key); p != std::string::npos; p = tmpl.find(key)) tmpl.replace(p, key.size(), value);
  return tmpl;
}

}  // namespace synth

/// Template-grammar dialogues whose reference differs from the incomplete utterance by one
/// Substitute span (pronoun -> entity) and/or one Insert span (omitted activity), both
/// copied verbatim from the context. Deterministic given the seed.
inline std::vector<DialogueExample> synth_generate(std::uint64_t seed, std::size_t n) {
  using namespace synth;
  Rng rng(mix_seed(seed, 0x5e7));
  std::vector<DialogueExample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Entity& ent = entities()[uniform_index(rng, entities().size())];
    const char* act = activities()[uniform_index(rng, activities().size())];
    const Frame& fr = frames()[uniform_index(rng, frames().size())];
    std::string first = fill(fill(first_turns()[uniform_index(rng, first_turns().size())], "{E}", ent.text), "{A}", act);

    DialogueExample ex;
    ex.line_no = k + 1;
    // Optional distractor entity of a different gender, mentioned before the referent.
    if (uniform01(rng) < 0.5) {
      std::size_t j;
      do {
        j = uniform_index(rng, entities().size());
      } while (entities()[j].gender == ent.gender);
      ex.context_turns.push_back(words(std::string("i met ") + entities()[j].text));
    }
    ex.context_turns.push_back(words(first));
    ex.context_turns.push_back(words(replies()[uniform_index(rng, replies().size())]));

    std::string inc = fill(fill(fr.incomplete, "{P}", pronoun(ent.gender)), " {A}", "");
    std::string ref = fill(fill(fr.incomplete, "{P}", ent.text), "{A}", act);
    ex.incomplete = words(inc);
    ex.reference = words(ref);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace rau
