#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rau/checkpoint.hpp"
#include "rau/config.hpp"
#include "rau/corpus.hpp"
#include "rau/labeler.hpp"
#include "rau/metrics.hpp"
#include "rau/model.hpp"
#include "rau/relation.hpp"
#include "rau/trainer.hpp"

namespace rau::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kNumericAbort = 3 };

namespace detail {

inline void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw DataError("no such file: " + path);
}

inline std::vector<DialogueExample> read_nonempty(const std::string& path, TokenizerMode mode) {
  require_file(path);
  auto exs = read_tsv(path, mode);
  if (exs.empty()) throw DataError("no examples in " + path);
  return exs;
}

inline void require_references(const std::vector<DialogueExample>& exs, const std::string& path) {
  for (const auto& e : exs)
    if (!e.reference) throw DataError(path + ":" + std::to_string(e.line_no) + ": missing reference field");
}

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace detail

struct TrainArgs {
  std::string train, dev, config, out, log, vocab;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc;
  if (!a.config.empty()) rc.merge_file(a.config);
  rc.merge_flags(a.sets);
  if (a.seed_given) rc.set("train.seed", std::to_string(a.seed));
  ModelConfig mc = rc.model_config();
  TrainConfig tc = rc.train_config();
  detail::require_file(a.train);
  detail::require_file(a.dev);
  if (!a.vocab.empty()) detail::require_file(a.vocab);

  auto train_raw = detail::read_nonempty(a.train, mc.tokenizer);
  auto dev_raw = detail::read_nonempty(a.dev, mc.tokenizer);
  detail::require_references(train_raw, a.train);
  detail::require_references(dev_raw, a.dev);
  Vocab vocab = a.vocab.empty() ? build_vocab(train_raw) : Vocab::load(a.vocab);
  auto model = Model<float>::init(mc, vocab, tc.seed);
  auto train_set = prepare_all(train_raw, model);
  auto dev_set = prepare_all(dev_raw, model);

  std::size_t dropped = 0, conflicts = 0, deletions = 0, uncovered = 0;
  for (const auto& p : train_set) {
    dropped += p.label_info.dropped;
    conflicts += p.label_info.conflicts;
    deletions += p.label_info.deletions;
    uncovered += p.uncovered;
  }
  const std::string log_path = a.log.empty() ? a.out + ".log" : a.log;
  std::ofstream log(log_path);
  if (!log) throw DataError("cannot write training log " + log_path);
  log << "labels train=" << train_set.size() << " dev=" << dev_set.size() << " dropped_spans=" << dropped
      << " conflicts=" << conflicts << " deletions=" << deletions << " uncovered_cells=" << uncovered << '\n';

  TrainHooks hooks;
  hooks.on_eval = [&](const EvalRecord& r) {
    log << r.format() << '\n';
    log.flush();
    out << r.format() << '\n';
  };
  hooks.on_best = [&](const Model<float>& m, const EvalRecord& r) {
    save_checkpoint(a.out, m, {{"step", double(r.step)}, {"loss", r.loss}, {"dev_cell_acc", r.cell_accuracy}, {"dev_em", r.em}});
  };
  auto result = train(std::move(model), train_set, dev_set, tc, hooks);
  const auto& r = result.best_record;
  save_checkpoint(a.out, result.best,
                  {{"step", double(r.step)}, {"loss", r.loss}, {"dev_cell_acc", r.cell_accuracy}, {"dev_em", r.em}});
  out << "best " << r.format() << '\n';
  return kOk;
}

inline int cmd_rewrite(const std::string& ckpt, const std::string& in, const std::string& out_path, std::ostream&) {
  detail::require_file(ckpt);
  detail::require_file(in);
  auto loaded = load_checkpoint(ckpt);
  const auto& model = loaded.model;
  auto exs = detail::read_nonempty(in, model.cfg.tokenizer);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + out_path);
  for (const auto& ex : exs) out << detokenize(rewrite(model, ex), model.cfg.tokenizer) << '\n';
  return kOk;
}

inline int cmd_eval(const std::string& ckpt, const std::string& in, const std::string& pred_path, std::ostream& out) {
  detail::require_file(ckpt);
  detail::require_file(in);
  auto loaded = load_checkpoint(ckpt);
  const auto& model = loaded.model;
  auto exs = detail::read_nonempty(in, model.cfg.tokenizer);
  detail::require_references(exs, in);
  std::vector<Tokens> cands, refs, xs;
  for (const auto& ex : exs) {
    cands.push_back(rewrite(model, ex));
    refs.push_back(*ex.reference);
    xs.push_back(ex.incomplete);
  }
  if (!pred_path.empty()) {
    std::ofstream p(pred_path, std::ios::binary);
    if (!p) throw DataError("cannot write " + pred_path);
    for (const auto& c : cands) p << detokenize(c, model.cfg.tokenizer) << '\n';
  }
  out << evaluate(cands, refs, xs).format() << '\n';
  return kOk;
}

inline int cmd_build_vocab(const std::vector<std::string>& inputs, const std::string& out_path, const std::string& mode,
                           std::ostream& out) {
  const TokenizerMode m = parse_tokenizer_mode(mode);
  for (const auto& p : inputs) detail::require_file(p);
  std::vector<DialogueExample> all;
  for (const auto& p : inputs) {
    auto exs = read_tsv(p, m);
    all.insert(all.end(), exs.begin(), exs.end());
  }
  if (all.empty()) throw DataError("no examples in inputs");
  Vocab v = build_vocab(all);
  v.save(out_path);
  out << "vocab size=" << v.size() << '\n';
  return kOk;
}

inline int cmd_synth(std::uint64_t seed, std::size_t n, const std::string& out_path, std::ostream& out) {
  if (n < 1) throw ConfigError("--n must be >= 1");
  write_tsv(out_path, synth_generate(seed, n), TokenizerMode::Whitespace);
  out << "wrote " << n << " examples to " << out_path << '\n';
  return kOk;
}

/// One record per example: id, matrix shape, run-length cells, coverage counters.
inline std::string label_record(const DialogueExample& ex, const LabelResult& lr) {
  return "id=" + std::to_string(ex.line_no) + "\t" + std::to_string(lr.matrix.rows()) + "x" +
         std::to_string(lr.matrix.cols()) + "\t" + run_length_encode(lr.matrix) + "\tdropped=" +
         std::to_string(lr.dropped) + " conflicts=" + std::to_string(lr.conflicts) +
         " deletions=" + std::to_string(lr.deletions);
}

inline int cmd_dump_labels(const std::string& in, const std::string& out_path, const std::string& mode, std::ostream& out) {
  const TokenizerMode m = parse_tokenizer_mode(mode);
  auto exs = detail::read_nonempty(in, m);
  detail::require_references(exs, in);
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary);
    if (!file) throw DataError("cannot write " + out_path);
  }
  std::ostream& sink = out_path.empty() ? out : file;
  for (const auto& ex : exs) sink << label_record(ex, label(ex.context(), ex.incomplete, *ex.reference)) << '\n';
  return kOk;
}

struct HeadStats {
  // Sums and counts per gold class over both slice channels.
  std::array<double, kNumEditClasses> sum{};
  std::array<std::size_t, kNumEditClasses> count{};

  void add(EditClass k, double v) {
    sum[static_cast<std::size_t>(k)] += v;
    ++count[static_cast<std::size_t>(k)];
  }
  std::optional<double> mean(EditClass k) const {
    const auto i = static_cast<std::size_t>(k);
    if (count[i] == 0) return std::nullopt;
    return sum[i] / double(count[i]);
  }
};

/// Mean attention weight per head of `layer` (0-based) over relation cells grouped by gold
/// class: coreference (Substitute), omission (Insert), other (None).
inline std::vector<HeadStats> attention_stats(const Model<float>& model, const std::vector<DialogueExample>& exs,
                                              std::size_t layer) {
  if (layer >= model.cfg.encoder.layers)
    throw ConfigError("--layer " + std::to_string(layer + 1) + " out of range 1.." + std::to_string(model.cfg.encoder.layers));
  std::vector<HeadStats> stats(model.cfg.encoder.heads);
  for (const auto& ex : exs) {
    auto enc = encode_example(ex, model.vocab, model.cfg.max_len);
    auto gold = label(ex.context(), ex.incomplete, *ex.reference).matrix.with_cols(enc.N());
    auto fwd = encoder_forward(enc, model.encoder, model.cfg.encoder, false);
    for (std::size_t h = 0; h < stats.size(); ++h) {
      auto [top, bottom] = slice_pair(fwd.attention.at(layer, h), enc);
      for (std::size_t m = 0; m < enc.M(); ++m)
        for (std::size_t n = 0; n < enc.N(); ++n) {
          const EditClass k = gold.at(m, n);
          stats[h].add(k, top(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)));
          stats[h].add(k, bottom(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)));
        }
    }
  }
  return stats;
}

inline std::string format_attention_stats(const std::vector<HeadStats>& stats) {
  auto cell = [](std::optional<double> v) { return v ? detail::fmt4(*v) : std::string("-"); };
  std::string s = "head\tcoreference\tomission\tother\n";
  HeadStats pooled;
  for (std::size_t h = 0; h < stats.size(); ++h) {
    s += std::to_string(h + 1) + "\t" + cell(stats[h].mean(EditClass::Substitute)) + "\t" +
         cell(stats[h].mean(EditClass::Insert)) + "\t" + cell(stats[h].mean(EditClass::None)) + "\n";
    for (std::size_t k = 0; k < kNumEditClasses; ++k) {
      pooled.sum[k] += stats[h].sum[k];
      pooled.count[k] += stats[h].count[k];
    }
  }
  s += "avg\t" + cell(pooled.mean(EditClass::Substitute)) + "\t" + cell(pooled.mean(EditClass::Insert)) + "\t" +
       cell(pooled.mean(EditClass::None)) + "\n";
  return s;
}

inline int cmd_inspect_attention(const std::string& ckpt, const std::string& in, std::size_t layer_1based,
                                 std::ostream& out) {
  detail::require_file(ckpt);
  detail::require_file(in);
  if (layer_1based < 1) throw ConfigError("--layer is 1-based");
  auto loaded = load_checkpoint(ckpt);
  auto exs = detail::read_nonempty(in, loaded.model.cfg.tokenizer);
  detail::require_references(exs, in);
  out << format_attention_stats(attention_stats(loaded.model, exs, layer_1based - 1));
  return kOk;
}

/// Maps library errors onto exit codes: 1 configuration, 2 data, 3 numeric abort.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const IndexOutOfRange*>(&e)) return kConfigError;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericAbort;
  return kDataError;
}

/// Entry point shared by the executable and the tests. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Incomplete utterance rewriting from self-attention relation maps", "rau"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train encoder + U-Net and write the best checkpoint");
  train->add_option("--train", ta.train, "training TSV")->required();
  train->add_option("--dev", ta.dev, "development TSV")->required();
  train->add_option("--config", ta.config, "key = value config file");
  train->add_option("--out", ta.out, "checkpoint path")->required();
  train->add_option("--log", ta.log, "training log path (default: <out>.log)");
  train->add_option("--vocab", ta.vocab, "vocabulary file (default: built from the training set)");
  train->add_option("--set", ta.sets, "override a config key (key=value), repeatable");
  auto* seed_opt = train->add_option("--seed", ta.seed, "seed for every random choice");

  std::string ckpt, in, out_path, pred_path, mode = "char";
  std::vector<std::string> inputs;
  std::uint64_t seed = 1;
  std::size_t n = 0, layer = 0;

  auto* rewrite_cmd = app.add_subcommand("rewrite", "rewrite incomplete utterances, one per line");
  rewrite_cmd->add_option("--ckpt", ckpt)->required();
  rewrite_cmd->add_option("--in", in)->required();
  rewrite_cmd->add_option("--out", out_path)->required();

  auto* eval_cmd = app.add_subcommand("eval", "score rewrites against references");
  eval_cmd->add_option("--ckpt", ckpt)->required();
  eval_cmd->add_option("--in", in)->required();
  eval_cmd->add_option("--pred", pred_path, "also write the rewrites here");

  auto* vocab_cmd = app.add_subcommand("build-vocab", "write a vocabulary file from TSV inputs");
  vocab_cmd->add_option("--in", inputs)->required();
  vocab_cmd->add_option("--out", out_path)->required();
  vocab_cmd->add_option("--tokenizer", mode, "char or whitespace");

  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic dialogues as TSV");
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--n", n)->required();
  synth_cmd->add_option("--out", out_path)->required();

  auto* labels_cmd = app.add_subcommand("dump-labels", "print gold edit matrices");
  labels_cmd->add_option("--in", in)->required();
  labels_cmd->add_option("--out", out_path);
  labels_cmd->add_option("--tokenizer", mode, "char or whitespace");

  auto* inspect_cmd = app.add_subcommand("inspect-attention", "mean attention per head by relation type");
  inspect_cmd->add_option("--ckpt", ckpt)->required();
  inspect_cmd->add_option("--in", in)->required();
  inspect_cmd->add_option("--layer", layer, "1-based layer index")->required();

  std::vector<std::string> argv_store{"rau"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    if (*train) {
      ta.seed_given = seed_opt->count() > 0;
      return cmd_train(ta, out);
    }
    if (*rewrite_cmd) return cmd_rewrite(ckpt, in, out_path, out);
    if (*eval_cmd) return cmd_eval(ckpt, in, pred_path, out);
    if (*vocab_cmd) return cmd_build_vocab(inputs, out_path, mode, out);
    if (*synth_cmd) return cmd_synth(seed, n, out_path, out);
    if (*labels_cmd) return cmd_dump_labels(in, out_path, mode, out);
    if (*inspect_cmd) return cmd_inspect_attention(ckpt, in, layer, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kConfigError;
}

}  // namespace rau::cli
