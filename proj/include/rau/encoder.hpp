#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rau/corpus.hpp"
#include "rau/errors.hpp"
#include "rau/tensor.hpp"

namespace rau {

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t model_dim = 128;
  std::size_t ffn_dim = 512;
  std::size_t max_positions = 128;
  std::size_t vocab_size = Vocab::kReserved;
  double dropout = 0.1;

  std::size_t head_dim() const { return model_dim / heads; }

  void validate() const {
    if (layers < 1 || heads < 1 || model_dim < 1 || ffn_dim < 1 || max_positions < 1 || vocab_size < 1)
      throw ConfigError("encoder sizes must all be >= 1");
    if (model_dim % heads != 0)
      throw ConfigError("encoder.dim (" + std::to_string(model_dim) + ") not divisible by encoder.heads (" +
                        std::to_string(heads) + ")");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder.dropout must be in [0,1)");
  }
};

/// weights[layer][head] is a T x T row-stochastic matrix.
template <typename S>
struct AttentionStack {
  std::vector<std::vector<Mat<S>>> weights;

  std::size_t layers() const { return weights.size(); }
  std::size_t heads() const { return weights.empty() ? 0 : weights.front().size(); }
  const Mat<S>& at(std::size_t layer, std::size_t head) const { return weights[layer][head]; }

  static AttentionStack zeros(std::size_t layers, std::size_t heads, std::size_t t) {
    AttentionStack s;
    s.weights.assign(layers, std::vector<Mat<S>>(heads, Mat<S>::Zero(static_cast<Eigen::Index>(t),
                                                                      static_cast<Eigen::Index>(t))));
    return s;
  }
};

template <typename S>
struct EncoderLayerParams {
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln1_g, ln1_b;
  // Empty for the last layer, which has no feed-forward sublayer.
  Mat<S> w1, b1, w2, b2, ln2_g, ln2_b;
};

template <typename S>
struct EncoderParams {
  Mat<S> tok_emb, pos_emb, seg_emb, emb_ln_g, emb_ln_b;
  std::vector<EncoderLayerParams<S>> layers;

  /// Zero-filled parameters with the shapes implied by `cfg`.
  static EncoderParams zeros(const EncoderConfig& cfg) {
    auto z = [](std::size_t r, std::size_t c) {
      return Mat<S>::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    };
    const std::size_t d = cfg.model_dim;
    EncoderParams p;
    p.tok_emb = z(cfg.vocab_size, d);
    p.pos_emb = z(cfg.max_positions, d);
    p.seg_emb = z(2, d);
    p.emb_ln_g = z(1, d);
    p.emb_ln_b = z(1, d);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      EncoderLayerParams<S> lp;
      lp.wq = z(d, d), lp.bq = z(1, d), lp.wk = z(d, d), lp.bk = z(1, d);
      lp.wv = z(d, d), lp.bv = z(1, d), lp.wo = z(d, d), lp.bo = z(1, d);
      lp.ln1_g = z(1, d), lp.ln1_b = z(1, d);
      if (l + 1 < cfg.layers) {
        lp.w1 = z(d, cfg.ffn_dim), lp.b1 = z(1, cfg.ffn_dim), lp.w2 = z(cfg.ffn_dim, d), lp.b2 = z(1, d);
        lp.ln2_g = z(1, d), lp.ln2_b = z(1, d);
      }
      p.layers.push_back(std::move(lp));
    }
    return p;
  }

  /// Truncated-normal-free BERT-style init: N(0, 0.02) weights, unit gains, zero biases.
  static EncoderParams init(const EncoderConfig& cfg, Rng& rng) {
    EncoderParams p = zeros(cfg);
    const double sd = 0.02;
    fill_normal(p.tok_emb, rng, sd);
    fill_normal(p.pos_emb, rng, sd);
    fill_normal(p.seg_emb, rng, sd);
    p.emb_ln_g.setOnes();
    for (auto& lp : p.layers) {
      fill_normal(lp.wq, rng, sd);
      fill_normal(lp.wk, rng, sd);
      fill_normal(lp.wv, rng, sd);
      fill_normal(lp.wo, rng, sd);
      lp.ln1_g.setOnes();
      if (lp.w1.size()) {
        fill_normal(lp.w1, rng, sd);
        fill_normal(lp.w2, rng, sd);
        lp.ln2_g.setOnes();
      }
    }
    return p;
  }

  std::vector<TensorRef<S>> tensors() {
    std::vector<TensorRef<S>> t{{"tok_emb", &tok_emb},
                                {"pos_emb", &pos_emb},
                                {"seg_emb", &seg_emb},
                                {"emb_ln.g", &emb_ln_g},
                                {"emb_ln.b", &emb_ln_b}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& lp = layers[l];
      const std::string pre = "layer" + std::to_string(l) + ".";
      for (auto [n, m] : {std::pair{"wq", &lp.wq}, {"bq", &lp.bq}, {"wk", &lp.wk}, {"bk", &lp.bk},
                          {"wv", &lp.wv}, {"bv", &lp.bv}, {"wo", &lp.wo}, {"bo", &lp.bo},
                          {"ln1.g", &lp.ln1_g}, {"ln1.b", &lp.ln1_b}})
        t.push_back({pre + n, m});
      if (lp.w1.size()) {
        for (auto [n, m] : {std::pair{"w1", &lp.w1}, {"b1", &lp.b1}, {"w2", &lp.w2}, {"b2", &lp.b2},
                            {"ln2.g", &lp.ln2_g}, {"ln2.b", &lp.ln2_b}})
          t.push_back({pre + n, m});
      }
    }
    return t;
  }
};

/// softmax(Q K^T / sqrt(d_k)) row-wise; masked columns get exactly zero weight.
/// Reductions run in double.
template <typename S>
Mat<S> attention_weights(const Mat<S>& q, const Mat<S>& k, const std::vector<bool>& pad_mask = {}) {
  if (q.cols() != k.cols() || q.rows() != k.rows())
    throw ShapeError("attention_weights: Q and K shapes differ");
  if (!pad_mask.empty() && pad_mask.size() != static_cast<std::size_t>(k.rows()))
    throw ShapeError("attention_weights: pad mask length differs from T");
  if (!q.allFinite() || !k.allFinite()) throw NumericError("attention_weights: non-finite Q or K");
  const Eigen::Index t = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat<S> scores = q * k.transpose();
  Mat<S> a(t, t);
  for (Eigen::Index r = 0; r < t; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < t; ++c)
      if (pad_mask.empty() || !pad_mask[static_cast<std::size_t>(c)]) mx = std::max(mx, double(scores(r, c)) * scale);
    if (!std::isfinite(mx)) throw ShapeError("attention_weights: every key position is masked");
    double sum = 0.0;
    for (Eigen::Index c = 0; c < t; ++c) {
      double e = 0.0;
      if (pad_mask.empty() || !pad_mask[static_cast<std::size_t>(c)]) e = std::exp(double(scores(r, c)) * scale - mx);
      a(r, c) = static_cast<S>(e);
      sum += e;
    }
    for (Eigen::Index c = 0; c < t; ++c) a(r, c) = static_cast<S>(double(a(r, c)) / sum);
  }
  return a;
}

namespace detail {

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;
  std::vector<double> inv_std;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, LayerNormCache<S>& cache) {
  constexpr double eps = 1e-5;
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.inv_std.assign(static_cast<std::size_t>(n), 0.0);
  Mat<S> y(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) mean += x(r, c);
    mean /= double(d);
    double var = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std[static_cast<std::size_t>(r)] = inv;
    for (Eigen::Index c = 0; c < d; ++c) {
      const S xh = static_cast<S>((x(r, c) - mean) * inv);
      cache.xhat(r, c) = xh;
      y(r, c) = xh * g(0, c) + b(0, c);
    }
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& g, const LayerNormCache<S>& cache, Mat<S>& dg,
                           Mat<S>& db) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  dg += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  Mat<S> dx(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    double m1 = 0.0, m2 = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double dxh = double(dy(r, c)) * g(0, c);
      m1 += dxh;
      m2 += dxh * cache.xhat(r, c);
    }
    m1 /= double(d);
    m2 /= double(d);
    const double inv = cache.inv_std[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < d; ++c) {
      const double dxh = double(dy(r, c)) * g(0, c);
      dx(r, c) = static_cast<S>(inv * (dxh - m1 - double(cache.xhat(r, c)) * m2));
    }
  }
  return dx;
}

/// Softmax Jacobian-vector product: dS = A .* (dA - rowsum(dA .* A)).
template <typename S>
Mat<S> softmax_backward(const Mat<S>& a, const Mat<S>& da) {
  Mat<S> ds(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double dot = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) dot += double(a(r, c)) * da(r, c);
    for (Eigen::Index c = 0; c < a.cols(); ++c) ds(r, c) = static_cast<S>(a(r, c) * (da(r, c) - dot));
  }
  return ds;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * 0.7071067811865476)) + x * 0.3989422804014327 * std::exp(-0.5 * x * x);
}

/// Inverted dropout mask: entries are 0 or 1/(1-p).
template <typename S>
Mat<S> dropout_mask(Eigen::Index r, Eigen::Index c, double p, Rng& rng) {
  Mat<S> m(r, c);
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < p ? S(0) : keep;
  return m;
}

template <typename S>
Mat<S> apply_mask(const Mat<S>& x, const Mat<S>& mask) {
  return mask.size() ? Mat<S>(x.cwiseProduct(mask)) : x;
}

}  // namespace detail

/// Intermediates recorded by a forward pass; consumed by backward.
template <typename S>
struct EncoderTape {
  struct Layer {
    Mat<S> h_in, q, k, v, ctx, h1, f1, g;
    std::vector<Mat<S>> attn, attn_dropped;
    std::vector<Mat<S>> attn_masks;
    Mat<S> out_mask, ffn_mask;
    detail::LayerNormCache<S> ln1, ln2;
  };
  bool recorded = false;
  std::vector<std::int32_t> ids, segments;
  std::vector<bool> pad_mask;
  detail::LayerNormCache<S> emb_ln;
  Mat<S> emb_mask;
  std::vector<Layer> layers;
};

template <typename S>
struct EncoderOutput {
  AttentionStack<S> attention;
  EncoderTape<S> tape;
};

/// Runs the stack and returns every layer's pre-dropout attention weights. The last layer
/// stops after computing its weights: no value path, output projection, or feed-forward.
/// `rng` is only consulted when `train` is set and dropout > 0.
template <typename S>
EncoderOutput<S> encoder_forward(const EncodedExample& ex, const EncoderParams<S>& p, const EncoderConfig& cfg,
                                 bool train, Rng* rng = nullptr) {
  const std::size_t t = ex.length();
  if (t == 0) throw ShapeError("encoder_forward: empty input");
  if (t > cfg.max_positions) throw TooLong(t, cfg.max_positions);
  const bool drop = train && cfg.dropout > 0.0;
  if (drop && rng == nullptr) throw ConfigError("encoder_forward: dropout requires an rng");
  const auto ti = static_cast<Eigen::Index>(t);
  const auto d = static_cast<Eigen::Index>(cfg.model_dim);
  const auto dk = static_cast<Eigen::Index>(cfg.head_dim());

  EncoderOutput<S> out;
  auto& tape = out.tape;
  tape.ids = ex.ids;
  tape.segments = ex.segments;
  tape.pad_mask = ex.pad_mask;

  Mat<S> h(ti, d);
  for (std::size_t i = 0; i < t; ++i) {
    const auto id = ex.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      throw IndexOutOfRange("token id " + std::to_string(id) + " outside embedding table");
    const auto r = static_cast<Eigen::Index>(i);
    h.row(r) = p.tok_emb.row(id) + p.pos_emb.row(r) + p.seg_emb.row(ex.segments[i]);
  }
  h = detail::layer_norm(h, p.emb_ln_g, p.emb_ln_b, tape.emb_ln);
  if (drop) {
    tape.emb_mask = detail::dropout_mask<S>(ti, d, cfg.dropout, *rng);
    h = h.cwiseProduct(tape.emb_mask);
  }

  out.attention.weights.resize(cfg.layers);
  tape.layers.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& lp = p.layers[l];
    auto& lt = tape.layers[l];
    const bool last = l + 1 == cfg.layers;
    lt.h_in = h;
    lt.q = (h * lp.wq).rowwise() + lp.bq.row(0);
    lt.k = (h * lp.wk).rowwise() + lp.bk.row(0);
    auto& heads = out.attention.weights[l];
    heads.resize(cfg.heads);
    for (std::size_t i = 0; i < cfg.heads; ++i) {
      const auto c0 = static_cast<Eigen::Index>(i) * dk;
      heads[i] = attention_weights<S>(lt.q.middleCols(c0, dk), lt.k.middleCols(c0, dk), ex.pad_mask);
    }
    lt.attn = heads;
    if (last) break;

    lt.v = (h * lp.wv).rowwise() + lp.bv.row(0);
    lt.ctx.resize(ti, d);
    lt.attn_dropped.resize(cfg.heads);
    lt.attn_masks.resize(cfg.heads);
    for (std::size_t i = 0; i < cfg.heads; ++i) {
      const auto c0 = static_cast<Eigen::Index>(i) * dk;
      if (drop) {
        lt.attn_masks[i] = detail::dropout_mask<S>(ti, ti, cfg.dropout, *rng);
        lt.attn_dropped[i] = heads[i].cwiseProduct(lt.attn_masks[i]);
      } else {
        lt.attn_dropped[i] = heads[i];
      }
      lt.ctx.middleCols(c0, dk) = lt.attn_dropped[i] * lt.v.middleCols(c0, dk);
    }
    Mat<S> o = (lt.ctx * lp.wo).rowwise() + lp.bo.row(0);
    if (drop) {
      lt.out_mask = detail::dropout_mask<S>(ti, d, cfg.dropout, *rng);
      o = o.cwiseProduct(lt.out_mask);
    }
    lt.h1 = detail::layer_norm<S>(h + o, lp.ln1_g, lp.ln1_b, lt.ln1);

    lt.f1 = (lt.h1 * lp.w1).rowwise() + lp.b1.row(0);
    lt.g = lt.f1.unaryExpr([](S x) { return static_cast<S>(detail::gelu(x)); });
    Mat<S> f2 = (lt.g * lp.w2).rowwise() + lp.b2.row(0);
    if (drop) {
      lt.ffn_mask = detail::dropout_mask<S>(ti, d, cfg.dropout, *rng);
      f2 = f2.cwiseProduct(lt.ffn_mask);
    }
    h = detail::layer_norm<S>(lt.h1 + f2, lp.ln2_g, lp.ln2_b, lt.ln2);
    if (!h.allFinite()) throw NumericError("encoder_forward: non-finite activations in layer " + std::to_string(l));
  }
  tape.recorded = true;
  return out;
}

/// Accumulates into `grads` the gradient of a loss whose derivative with respect to the
/// recorded attention weights is `d_attention` (same layer x head x T x T layout; layers or
/// heads the loss does not touch may be zero matrices).
template <typename S>
void encoder_backward(const EncoderTape<S>& tape, const AttentionStack<S>& d_attention, const EncoderParams<S>& p,
                      const EncoderConfig& cfg, EncoderParams<S>& grads) {
  if (!tape.recorded) throw BackwardWithoutForward();
  if (d_attention.layers() != cfg.layers || d_attention.heads() != cfg.heads)
    throw ShapeError("encoder_backward: upstream gradient has wrong layer/head count");
  const auto ti = static_cast<Eigen::Index>(tape.ids.size());
  const auto d = static_cast<Eigen::Index>(cfg.model_dim);
  const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));

  Mat<S> dh = Mat<S>::Zero(ti, d);  // gradient w.r.t. the current layer's output
  for (std::size_t li = cfg.layers; li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& lt = tape.layers[li];
    auto& lg = grads.layers[li];
    const bool last = li + 1 == cfg.layers;

    Mat<S> dq = Mat<S>::Zero(ti, d), dkm = Mat<S>::Zero(ti, d);
    Mat<S> dh_in;
    if (last) {
      dh_in = Mat<S>::Zero(ti, d);
      for (std::size_t i = 0; i < cfg.heads; ++i) {
        const auto c0 = static_cast<Eigen::Index>(i) * dk;
        Mat<S> ds = detail::softmax_backward<S>(lt.attn[i], d_attention.weights[li][i]) * scale;
        dq.middleCols(c0, dk) = ds * lt.k.middleCols(c0, dk);
        dkm.middleCols(c0, dk) = ds.transpose() * lt.q.middleCols(c0, dk);
      }
    } else {
      // Feed-forward sublayer.
      Mat<S> du2 = detail::layer_norm_backward<S>(dh, lp.ln2_g, lt.ln2, lg.ln2_g, lg.ln2_b);
      Mat<S> df2 = detail::apply_mask<S>(du2, lt.ffn_mask);
      lg.w2.noalias() += lt.g.transpose() * df2;
      lg.b2 += df2.colwise().sum();
      Mat<S> dg = df2 * lp.w2.transpose();
      Mat<S> df1 = dg.cwiseProduct(lt.f1.unaryExpr([](S x) { return static_cast<S>(detail::gelu_grad(x)); }));
      lg.w1.noalias() += lt.h1.transpose() * df1;
      lg.b1 += df1.colwise().sum();
      Mat<S> dh1 = du2 + df1 * lp.w1.transpose();

      // Attention sublayer.
      Mat<S> du = detail::layer_norm_backward<S>(dh1, lp.ln1_g, lt.ln1, lg.ln1_g, lg.ln1_b);
      dh_in = du;
      Mat<S> dout = detail::apply_mask<S>(du, lt.out_mask);
      lg.wo.noalias() += lt.ctx.transpose() * dout;
      lg.bo += dout.colwise().sum();
      Mat<S> dctx = dout * lp.wo.transpose();
      Mat<S> dv(ti, d);
      for (std::size_t i = 0; i < cfg.heads; ++i) {
        const auto c0 = static_cast<Eigen::Index>(i) * dk;
        Mat<S> dad = dctx.middleCols(c0, dk) * lt.v.middleCols(c0, dk).transpose();
        dv.middleCols(c0, dk) = lt.attn_dropped[i].transpose() * dctx.middleCols(c0, dk);
        Mat<S> da = detail::apply_mask<S>(dad, lt.attn_masks[i]) + d_attention.weights[li][i];
        Mat<S> ds = detail::softmax_backward<S>(lt.attn[i], da) * scale;
        dq.middleCols(c0, dk) = ds * lt.k.middleCols(c0, dk);
        dkm.middleCols(c0, dk) = ds.transpose() * lt.q.middleCols(c0, dk);
      }
      lg.wv.noalias() += lt.h_in.transpose() * dv;
      lg.bv += dv.colwise().sum();
      dh_in.noalias() += dv * lp.wv.transpose();
    }
    lg.wq.noalias() += lt.h_in.transpose() * dq;
    lg.bq += dq.colwise().sum();
    lg.wk.noalias() += lt.h_in.transpose() * dkm;
    lg.bk += dkm.colwise().sum();
    dh_in.noalias() += dq * lp.wq.transpose();
    dh_in.noalias() += dkm * lp.wk.transpose();
    dh = std::move(dh_in);
  }

  dh = detail::apply_mask<S>(dh, tape.emb_mask);
  Mat<S> de = detail::layer_norm_backward<S>(dh, p.emb_ln_g, tape.emb_ln, grads.emb_ln_g, grads.emb_ln_b);
  for (Eigen::Index r = 0; r < ti; ++r) {
    const auto i = static_cast<std::size_t>(r);
    grads.tok_emb.row(tape.ids[i]) += de.row(r);
    grads.pos_emb.row(r) += de.row(r);
    grads.seg_emb.row(tape.segments[i]) += de.row(r);
  }
}

}  // namespace rau
