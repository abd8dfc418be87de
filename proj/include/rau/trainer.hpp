#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <type_traits>
#include <numeric>
#include <string>
#include <vector>

#include "rau/errors.hpp"
#include "rau/metrics.hpp"
#include "rau/model.hpp"

namespace rau {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 1000;
  /// Stop after this many optimizer steps (0 = run all epochs).
  std::size_t max_steps = 500;
  std::size_t batch_size = 8;
  double weight_cap = 50.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 50;
  /// Global gradient-norm clip (0 disables).
  double clip = 1.0;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(weight_cap >= 1.0)) throw ConfigError("train.weight_cap must be >= 1");
    if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta1/beta2 must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
    if (!(clip >= 0.0)) throw ConfigError("train.clip must be >= 0");
  }
};

using ClassWeights = std::array<double, kNumEditClasses>;

template <typename S>
struct LossAndGrad {
  double loss = 0.0;
  Mat<S> grad;  // same layout as the logits
};

/// Mean over cells of weight[gold] * -log softmax(F)[gold], with its gradient.
template <typename S>
LossAndGrad<S> weighted_ce(const LogitMap<S>& f, const EditMatrix& gold, const ClassWeights& w) {
  if (f.rows != gold.rows() || f.cols != gold.cols() || f.values.rows() != static_cast<Eigen::Index>(kNumEditClasses))
    throw ShapeError("weighted_ce: logits " + std::to_string(f.rows) + "x" + std::to_string(f.cols) + " vs gold " +
                     std::to_string(gold.rows()) + "x" + std::to_string(gold.cols()));
  for (double x : w)
    if (!(x > 0.0)) throw ConfigError("weighted_ce: class weights must be positive");
  const std::size_t cells = f.rows * f.cols;
  LossAndGrad<S> out;
  out.grad.resize(f.values.rows(), f.values.cols());
  const double inv_cells = 1.0 / double(cells);
  double loss = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const auto cell = static_cast<Eigen::Index>(i);
    const auto g = static_cast<std::size_t>(gold.cells()[i]);
    double mx = f.values(0, cell);
    for (Eigen::Index k = 1; k < f.values.rows(); ++k) mx = std::max(mx, double(f.values(k, cell)));
    double z = 0.0;
    for (Eigen::Index k = 0; k < f.values.rows(); ++k) z += std::exp(double(f.values(k, cell)) - mx);
    const double log_z = mx + std::log(z);
    loss += w[g] * (log_z - double(f.values(static_cast<Eigen::Index>(g), cell)));
    for (Eigen::Index k = 0; k < f.values.rows(); ++k) {
      const double p = std::exp(double(f.values(k, cell)) - log_z);
      out.grad(k, cell) = static_cast<S>(w[g] * (p - (static_cast<std::size_t>(k) == g ? 1.0 : 0.0)) * inv_cells);
    }
  }
  out.loss = loss * inv_cells;
  return out;
}

/// Inverse relative frequency over the batch, normalized so None = 1 and clamped to [1, cap].
/// A class absent from the batch gets the cap.
inline ClassWeights class_weights(const std::vector<const EditMatrix*>& golds, double cap) {
  std::array<std::size_t, kNumEditClasses> counts{};
  for (const auto* g : golds)
    for (auto v : g->cells()) ++counts[static_cast<std::size_t>(v)];
  ClassWeights w{1.0, 1.0, 1.0};
  for (std::size_t k = 1; k < kNumEditClasses; ++k) {
    if (counts[k] == 0) {
      w[k] = cap;
    } else if (counts[0] > 0) {
      w[k] = std::clamp(double(counts[0]) / double(counts[k]), 1.0, cap);
    }
  }
  return w;
}

template <typename S>
class Adam {
 public:
  Adam(Model<S>& model, const TrainConfig& cfg) : cfg_(cfg) {
    for (auto& t : model.tensors()) {
      m_.push_back(Mat<S>::Zero(t.value->rows(), t.value->cols()));
      v_.push_back(Mat<S>::Zero(t.value->rows(), t.value->cols()));
    }
  }

  void step(Model<S>& model, Model<S>& grads) {
    ++t_;
    auto params = model.tensors();
    auto gs = grads.tensors();
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S step = static_cast<S>(cfg_.lr / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    const S eps = static_cast<S>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat<S>& g = *gs[i].value;
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g.cwiseProduct(g);
      *params[i].value -= step * m_[i].cwiseQuotient(((v_[i] * inv_bc2).cwiseSqrt().array() + eps).matrix());
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Mat<S>> m_, v_;
  std::size_t t_ = 0;
};

template <typename S>
double global_norm(Model<S>& grads) {
  double sq = 0.0;
  for (auto& t : grads.tensors()) sq += t.value->template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

struct DevScores {
  double cell_accuracy = 0.0;
  double em = 0.0;
  std::size_t examples = 0;
};

/// Cell accuracy against gold matrices and exact match of the rewritten utterances.
template <typename S>
DevScores evaluate_dev(const Model<S>& model, const std::vector<PreparedExample>& set) {
  DevScores s;
  std::size_t cells = 0, correct = 0, hits = 0;
  for (const auto& ex : set) {
    if (!ex.gold) continue;
    EditMatrix pred = predict_edits(model, ex.encoded);
    for (std::size_t i = 0; i < pred.cells().size(); ++i) correct += pred.cells()[i] == ex.gold->cells()[i];
    cells += pred.cells().size();
    hits += apply(ex.context, ex.source.incomplete, pred) == *ex.source.reference;
    ++s.examples;
  }
  if (s.examples) {
    s.cell_accuracy = double(correct) / double(cells);
    s.em = double(hits) / double(s.examples);
  }
  return s;
}

struct EvalRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double cell_accuracy = 0.0;
  double em = 0.0;

  std::string format() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "step=%zu loss=%.6f cell_acc=%.4f em=%.4f", step, loss, cell_accuracy, em);
    return buf;
  }
};

template <typename S>
struct TrainResult {
  Model<S> best;
  EvalRecord best_record;
  std::vector<double> losses;  // one per step
  std::vector<EvalRecord> evals;
};

struct TrainHooks {
  std::function<void(const EvalRecord&)> on_eval;
  /// Called with every new best model, so the last good checkpoint survives an abort.
  std::function<void(const Model<float>&, const EvalRecord&)> on_best;
};

/// Raised when a step produces a non-finite loss; carries the last evaluation record.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::size_t step) : NumericError(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Loss and accumulated gradient (scaled by `scale`) for one example.
template <typename S>
double example_step(const Model<S>& model, const PreparedExample& ex, const ClassWeights& w, bool train, Rng* rng,
                    double scale, Model<S>& grads) {
  auto fp = model_forward(model, ex.encoded, train, rng);
  auto lg = weighted_ce(fp.unet.logits, *ex.gold, w);
  lg.grad *= static_cast<S>(scale);
  model_backward(model, ex.encoded, fp, lg.grad, grads);
  return lg.loss;
}

/// Mini-batch training with per-batch class weights and gradient accumulation over the
/// batch's examples (each at its own M x N). Evaluates on `dev` every `eval_every` steps and
/// after the last step; keeps the parameters with the best dev EM (earliest wins ties).
template <typename S>
TrainResult<S> train(Model<S> model, const std::vector<PreparedExample>& train_set,
                     const std::vector<PreparedExample>& dev_set, const TrainConfig& tc, const TrainHooks& hooks = {}) {
  tc.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (train_set[i].gold) usable.push_back(i);
  if (usable.empty()) throw EmptyDataset("training set has no examples with references");
  if (dev_set.empty()) throw EmptyDataset("dev set");

  TrainResult<S> result;
  result.best = model;
  bool have_best = false;
  Adam<S> adam(model, tc);
  Model<S> grads = model.zeros_like();
  std::size_t step = 0;
  double running = 0.0;
  std::size_t since_eval = 0;

  auto evaluate = [&](double loss) {
    DevScores ds = evaluate_dev(model, dev_set);
    EvalRecord rec{step, loss, ds.cell_accuracy, ds.em};
    result.evals.push_back(rec);
    if (hooks.on_eval) hooks.on_eval(rec);
    if (!have_best || rec.em > result.best_record.em) {
      have_best = true;
      result.best = model;
      result.best_record = rec;
      if constexpr (std::is_same_v<S, float>)
        if (hooks.on_best) hooks.on_best(model, rec);
    }
  };

  bool done = false;
  for (std::size_t epoch = 0; epoch < tc.epochs && !done; ++epoch) {
    std::vector<std::size_t> order = usable;
    Rng shuffle_rng(mix_seed(tc.seed, 0x5ff1e, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    for (std::size_t start = 0; start < order.size() && !done; start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const EditMatrix*> golds;
      for (std::size_t i = start; i < end; ++i) golds.push_back(&*train_set[order[i]].gold);
      const ClassWeights w = class_weights(golds, tc.weight_cap);

      for (auto& t : grads.tensors()) t.value->setZero();
      double loss = 0.0;
      const double scale = 1.0 / double(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Rng rng(mix_seed(tc.seed, step + 1, i - start));
        loss += example_step(model, train_set[order[i]], w, true, &rng, scale, grads) * scale;
      }
      if (!std::isfinite(loss) || loss < 0.0)
        throw TrainingAborted("non-finite loss at step " + std::to_string(step + 1), step + 1);
      if (tc.clip > 0.0) {
        const double norm = global_norm(grads);
        if (!std::isfinite(norm)) throw TrainingAborted("non-finite gradient at step " + std::to_string(step + 1), step + 1);
        if (norm > tc.clip)
          for (auto& t : grads.tensors()) *t.value *= static_cast<S>(tc.clip / norm);
      }
      adam.step(model, grads);
      ++step;
      result.losses.push_back(loss);
      running += loss;
      ++since_eval;
      if (step % tc.eval_every == 0) {
        evaluate(running / double(since_eval));
        running = 0.0;
        since_eval = 0;
      }
      if (tc.max_steps && step >= tc.max_steps) done = true;
    }
  }
  if (since_eval > 0) evaluate(running / double(since_eval));
  return result;
}

}  // namespace rau
