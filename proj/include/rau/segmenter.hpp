#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rau/edit_matrix.hpp"
#include "rau/errors.hpp"
#include "rau/relation.hpp"
#include "rau/tensor.hpp"

namespace rau {

struct UNetConfig {
  std::size_t depth = 2;
  std::size_t base_channels = 32;
  std::size_t in_channels = 8;
  std::size_t out_channels = kNumEditClasses;
  std::size_t kernel = 3;

  std::size_t level_channels(std::size_t level) const { return base_channels << level; }

  /// Grids are padded to a multiple of this.
  std::size_t multiple() const { return std::size_t{1} << depth; }

  void validate() const {
    if (base_channels < 1 || in_channels < 1) throw ConfigError("unet channels must be >= 1");
    if (out_channels != kNumEditClasses) throw ConfigError("unet output channels are fixed at 3");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("unet.kernel must be odd");
    if (depth > 6) throw ConfigError("unet.depth must be <= 6");
  }
};

/// Per-cell class scores, channel-major: values(class, m * cols + n).
template <typename S>
struct LogitMap {
  Mat<S> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

template <typename S>
struct ConvParams {
  Mat<S> w;  // out x (in * k * k)
  Mat<S> b;  // 1 x out
};

template <typename S>
struct BlockParams {
  ConvParams<S> conv1, conv2;
};

template <typename S>
struct UNetParams {
  std::vector<BlockParams<S>> down;
  BlockParams<S> mid;
  std::vector<BlockParams<S>> up;  // up[k] produces level k
  ConvParams<S> head;

  static UNetParams zeros(const UNetConfig& cfg) {
    const auto kk = cfg.kernel * cfg.kernel;
    auto conv = [&](std::size_t in, std::size_t out, std::size_t k2) {
      return ConvParams<S>{Mat<S>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * k2)),
                           Mat<S>::Zero(1, static_cast<Eigen::Index>(out))};
    };
    auto block = [&](std::size_t in, std::size_t out) { return BlockParams<S>{conv(in, out, kk), conv(out, out, kk)}; };
    UNetParams p;
    std::size_t in = cfg.in_channels;
    for (std::size_t k = 0; k < cfg.depth; ++k) {
      p.down.push_back(block(in, cfg.level_channels(k)));
      in = cfg.level_channels(k);
    }
    p.mid = block(in, cfg.level_channels(cfg.depth));
    p.up.resize(cfg.depth);
    for (std::size_t k = 0; k < cfg.depth; ++k)
      p.up[k] = block(cfg.level_channels(k + 1) + cfg.level_channels(k), cfg.level_channels(k));
    p.head = conv(cfg.level_channels(0), cfg.out_channels, 1);
    return p;
  }

  /// He-normal convolutions, zero biases.
  static UNetParams init(const UNetConfig& cfg, Rng& rng) {
    UNetParams p = zeros(cfg);
    for (auto& t : p.tensors())
      if (t.name.ends_with(".w")) fill_normal(*t.value, rng, std::sqrt(2.0 / double(t.value->cols())));
    fill_normal(p.head.w, rng, std::sqrt(1.0 / double(p.head.w.cols())));
    return p;
  }

  std::vector<TensorRef<S>> tensors() {
    std::vector<TensorRef<S>> t;
    auto add_block = [&](const std::string& pre, BlockParams<S>& b) {
      t.push_back({pre + ".conv1.w", &b.conv1.w});
      t.push_back({pre + ".conv1.b", &b.conv1.b});
      t.push_back({pre + ".conv2.w", &b.conv2.w});
      t.push_back({pre + ".conv2.b", &b.conv2.b});
    };
    for (std::size_t k = 0; k < down.size(); ++k) add_block("down" + std::to_string(k), down[k]);
    add_block("mid", mid);
    for (std::size_t k = 0; k < up.size(); ++k) add_block("up" + std::to_string(k), up[k]);
    t.push_back({"head.w", &head.w});
    t.push_back({"head.b", &head.b});
    return t;
  }
};

namespace detail {

struct Grid {
  std::size_t h = 0, w = 0;            // stored extent
  std::size_t valid_h = 0, valid_w = 0;  // cells outside are held at zero

  bool valid(std::size_t y, std::size_t x) const { return y < valid_h && x < valid_w; }
  Grid half() const { return {h / 2, w / 2, (valid_h + 1) / 2, (valid_w + 1) / 2}; }
};

template <typename S>
Mat<S> im2col(const Mat<S>& x, const Grid& g, std::size_t k) {
  const auto cin = static_cast<std::size_t>(x.rows());
  const auto pad = static_cast<long>(k / 2);
  Mat<S> col = Mat<S>::Zero(static_cast<Eigen::Index>(cin * k * k), static_cast<Eigen::Index>(g.h * g.w));
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
        for (std::size_t y = 0; y < g.h; ++y) {
          const long iy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            const long ix = static_cast<long>(xx) + static_cast<long>(kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            col(row, static_cast<Eigen::Index>(y * g.w + xx)) =
                x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(iy * static_cast<long>(g.w) + ix));
          }
        }
      }
  return col;
}

template <typename S>
void col2im_add(const Mat<S>& dcol, const Grid& g, std::size_t k, Mat<S>& dx) {
  const auto cin = static_cast<std::size_t>(dx.rows());
  const auto pad = static_cast<long>(k / 2);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = static_cast<Eigen::Index>((c * k + ky) * k + kx);
        for (std::size_t y = 0; y < g.h; ++y) {
          const long iy = static_cast<long>(y) + static_cast<long>(ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            const long ix = static_cast<long>(xx) + static_cast<long>(kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(iy * static_cast<long>(g.w) + ix)) +=
                dcol(row, static_cast<Eigen::Index>(y * g.w + xx));
          }
        }
      }
}

template <typename S>
struct ConvTape {
  Mat<S> col;
  Mat<S> out;  // post-activation
};

/// conv (zero padding) -> rectifier -> zero outside the valid region.
template <typename S>
Mat<S> conv_relu(const Mat<S>& x, const Grid& g, const ConvParams<S>& p, std::size_t k, ConvTape<S>& tape) {
  tape.col = im2col(x, g, k);
  Mat<S> y = p.w * tape.col;
  y.colwise() += p.b.row(0).transpose();
  for (std::size_t yy = 0; yy < g.h; ++yy)
    for (std::size_t xx = 0; xx < g.w; ++xx) {
      const auto cell = static_cast<Eigen::Index>(yy * g.w + xx);
      if (!g.valid(yy, xx)) {
        y.col(cell).setZero();
      } else {
        y.col(cell) = y.col(cell).cwiseMax(S(0));
      }
    }
  tape.out = y;
  return y;
}

template <typename S>
Mat<S> conv_relu_backward(const Mat<S>& dy, const Grid& g, const ConvParams<S>& p, std::size_t k,
                          const ConvTape<S>& tape, ConvParams<S>& grad, Eigen::Index in_channels) {
  Mat<S> dz = dy.cwiseProduct((tape.out.array() > S(0)).template cast<S>().matrix());
  grad.w.noalias() += dz * tape.col.transpose();
  grad.b += dz.rowwise().sum().transpose();
  Mat<S> dcol = p.w.transpose() * dz;
  Mat<S> dx = Mat<S>::Zero(in_channels, dy.cols());
  col2im_add(dcol, g, k, dx);
  return dx;
}

template <typename S>
struct BlockTape {
  ConvTape<S> c1, c2;
  Eigen::Index in_channels = 0;
};

template <typename S>
Mat<S> block_forward(const Mat<S>& x, const Grid& g, const BlockParams<S>& p, std::size_t k, BlockTape<S>& t) {
  t.in_channels = x.rows();
  Mat<S> h = conv_relu(x, g, p.conv1, k, t.c1);
  return conv_relu(h, g, p.conv2, k, t.c2);
}

template <typename S>
Mat<S> block_backward(const Mat<S>& dy, const Grid& g, const BlockParams<S>& p, std::size_t k, const BlockTape<S>& t,
                      BlockParams<S>& grad) {
  Mat<S> dh = conv_relu_backward(dy, g, p.conv2, k, t.c2, grad.conv2, p.conv1.w.rows());
  return conv_relu_backward(dh, g, p.conv1, k, t.c1, grad.conv1, t.in_channels);
}

/// 2x2 max-pool; records the flat source cell of every output.
template <typename S>
Mat<S> max_pool(const Mat<S>& x, const Grid& g, std::vector<Eigen::Index>& argmax) {
  const Grid o = g.half();
  Mat<S> y(x.rows(), static_cast<Eigen::Index>(o.h * o.w));
  argmax.assign(static_cast<std::size_t>(y.size()), 0);
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (std::size_t yy = 0; yy < o.h; ++yy)
      for (std::size_t xx = 0; xx < o.w; ++xx) {
        Eigen::Index best = static_cast<Eigen::Index>((2 * yy) * g.w + 2 * xx);
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const auto src = static_cast<Eigen::Index>((2 * yy + dy) * g.w + 2 * xx + dx);
            if (x(c, src) > x(c, best)) best = src;
          }
        const auto dst = static_cast<Eigen::Index>(yy * o.w + xx);
        y(c, dst) = x(c, best);
        argmax[static_cast<std::size_t>(c * y.cols() + dst)] = best;
      }
  return y;
}

template <typename S>
Mat<S> upsample(const Mat<S>& x, const Grid& fine) {
  const Grid coarse = fine.half();
  Mat<S> y(x.rows(), static_cast<Eigen::Index>(fine.h * fine.w));
  for (std::size_t yy = 0; yy < fine.h; ++yy)
    for (std::size_t xx = 0; xx < fine.w; ++xx)
      y.col(static_cast<Eigen::Index>(yy * fine.w + xx)) = x.col(static_cast<Eigen::Index>((yy / 2) * coarse.w + xx / 2));
  return y;
}

template <typename S>
Mat<S> upsample_backward(const Mat<S>& dy, const Grid& fine) {
  const Grid coarse = fine.half();
  Mat<S> dx = Mat<S>::Zero(dy.rows(), static_cast<Eigen::Index>(coarse.h * coarse.w));
  for (std::size_t yy = 0; yy < fine.h; ++yy)
    for (std::size_t xx = 0; xx < fine.w; ++xx)
      dx.col(static_cast<Eigen::Index>((yy / 2) * coarse.w + xx / 2)) += dy.col(static_cast<Eigen::Index>(yy * fine.w + xx));
  return dx;
}

}  // namespace detail

template <typename S>
struct UNetTape {
  bool recorded = false;
  detail::Grid grid;  // padded level-0 grid
  std::size_t rows = 0, cols = 0;
  std::vector<detail::BlockTape<S>> down;
  std::vector<std::vector<Eigen::Index>> pool_argmax;
  detail::BlockTape<S> mid;
  std::vector<detail::BlockTape<S>> up;
  Mat<S> head_in;
};

template <typename S>
struct UNetOutput {
  LogitMap<S> logits;
  UNetTape<S> tape;
};

/// Runs the network on an explicitly sized grid: `input` is C x (grid.h * grid.w) and must
/// already be zero outside the valid region. Returns logits over the whole grid.
template <typename S>
Mat<S> unet_forward_grid(const Mat<S>& input, const detail::Grid& grid, const UNetParams<S>& p, const UNetConfig& cfg,
                         UNetTape<S>& tape) {
  if (grid.h % cfg.multiple() != 0 || grid.w % cfg.multiple() != 0)
    throw ShapeError("unet grid is not a multiple of 2^depth");
  const std::size_t k = cfg.kernel;
  tape.grid = grid;
  tape.down.resize(cfg.depth);
  tape.pool_argmax.resize(cfg.depth);
  tape.up.resize(cfg.depth);
  std::vector<Mat<S>> skips(cfg.depth);
  std::vector<detail::Grid> grids{grid};
  Mat<S> x = input;
  for (std::size_t lvl = 0; lvl < cfg.depth; ++lvl) {
    skips[lvl] = detail::block_forward(x, grids[lvl], p.down[lvl], k, tape.down[lvl]);
    x = detail::max_pool(skips[lvl], grids[lvl], tape.pool_argmax[lvl]);
    grids.push_back(grids[lvl].half());
  }
  x = detail::block_forward(x, grids[cfg.depth], p.mid, k, tape.mid);
  for (std::size_t lvl = cfg.depth; lvl-- > 0;) {
    Mat<S> u = detail::upsample(x, grids[lvl]);
    Mat<S> cat(u.rows() + skips[lvl].rows(), u.cols());
    cat << u, skips[lvl];
    x = detail::block_forward(cat, grids[lvl], p.up[lvl], k, tape.up[lvl]);
  }
  tape.head_in = x;
  Mat<S> f = p.head.w * x;
  f.colwise() += p.head.b.row(0).transpose();
  tape.recorded = true;
  return f;
}

/// F = U-Net(relation tensor): pads the grid with zeros to a multiple of 2^depth, runs the
/// network, crops the logits back to rows x cols. There is no dropout inside the network, so
/// `train` only documents intent.
template <typename S>
UNetOutput<S> unet_forward(const RelationTensor<S>& rt, const UNetParams<S>& p, const UNetConfig& cfg,
                           [[maybe_unused]] bool train = false) {
  if (rt.channels() != cfg.in_channels)
    throw ShapeError("unet_forward: relation tensor has " + std::to_string(rt.channels()) + " channels, expected " +
                     std::to_string(cfg.in_channels));
  if (rt.rows == 0 || rt.cols == 0) throw ShapeError("unet_forward: empty grid");
  if (!rt.values.allFinite()) throw NumericError("unet_forward: non-finite relation tensor");
  const std::size_t mult = cfg.multiple();
  detail::Grid g{(rt.rows + mult - 1) / mult * mult, (rt.cols + mult - 1) / mult * mult, rt.rows, rt.cols};
  Mat<S> x = Mat<S>::Zero(rt.values.rows(), static_cast<Eigen::Index>(g.h * g.w));
  for (std::size_t r = 0; r < rt.rows; ++r)
    x.middleCols(static_cast<Eigen::Index>(r * g.w), static_cast<Eigen::Index>(rt.cols)) =
        rt.values.middleCols(static_cast<Eigen::Index>(r * rt.cols), static_cast<Eigen::Index>(rt.cols));

  UNetOutput<S> out;
  Mat<S> f = unet_forward_grid(x, g, p, cfg, out.tape);
  out.tape.rows = rt.rows;
  out.tape.cols = rt.cols;
  out.logits.rows = rt.rows;
  out.logits.cols = rt.cols;
  out.logits.values.resize(f.rows(), static_cast<Eigen::Index>(rt.rows * rt.cols));
  for (std::size_t r = 0; r < rt.rows; ++r)
    out.logits.values.middleCols(static_cast<Eigen::Index>(r * rt.cols), static_cast<Eigen::Index>(rt.cols)) =
        f.middleCols(static_cast<Eigen::Index>(r * g.w), static_cast<Eigen::Index>(rt.cols));
  if (!out.logits.values.allFinite()) throw NumericError("unet_forward: non-finite logits");
  return out;
}

/// Accumulates parameter gradients into `grads` and returns the gradient with respect to the
/// relation tensor values (channels x rows*cols).
template <typename S>
Mat<S> unet_backward(const UNetTape<S>& tape, const Mat<S>& d_logits, const UNetParams<S>& p, const UNetConfig& cfg,
                     UNetParams<S>& grads) {
  if (!tape.recorded) throw BackwardWithoutForward();
  if (d_logits.rows() != static_cast<Eigen::Index>(cfg.out_channels) ||
      d_logits.cols() != static_cast<Eigen::Index>(tape.rows * tape.cols))
    throw ShapeError("unet_backward: upstream gradient shape differs from logits");
  const auto& g = tape.grid;
  const std::size_t k = cfg.kernel;
  Mat<S> df = Mat<S>::Zero(d_logits.rows(), static_cast<Eigen::Index>(g.h * g.w));
  for (std::size_t r = 0; r < tape.rows; ++r)
    df.middleCols(static_cast<Eigen::Index>(r * g.w), static_cast<Eigen::Index>(tape.cols)) =
        d_logits.middleCols(static_cast<Eigen::Index>(r * tape.cols), static_cast<Eigen::Index>(tape.cols));

  grads.head.w.noalias() += df * tape.head_in.transpose();
  grads.head.b += df.rowwise().sum().transpose();
  Mat<S> dx = p.head.w.transpose() * df;

  std::vector<detail::Grid> grids{g};
  for (std::size_t lvl = 0; lvl < cfg.depth; ++lvl) grids.push_back(grids.back().half());
  std::vector<Mat<S>> dskips(cfg.depth);
  for (std::size_t lvl = 0; lvl < cfg.depth; ++lvl) {
    Mat<S> dcat = detail::block_backward(dx, grids[lvl], p.up[lvl], k, tape.up[lvl], grads.up[lvl]);
    const auto up_ch = static_cast<Eigen::Index>(cfg.level_channels(lvl + 1));
    dskips[lvl] = dcat.bottomRows(dcat.rows() - up_ch);
    dx = detail::upsample_backward<S>(dcat.topRows(up_ch), grids[lvl]);
  }
  dx = detail::block_backward(dx, grids[cfg.depth], p.mid, k, tape.mid, grads.mid);
  for (std::size_t lvl = cfg.depth; lvl-- > 0;) {
    const auto& argmax = tape.pool_argmax[lvl];
    Mat<S> dpool = dskips[lvl];
    for (Eigen::Index c = 0; c < dx.rows(); ++c)
      for (Eigen::Index j = 0; j < dx.cols(); ++j) dpool(c, argmax[static_cast<std::size_t>(c * dx.cols() + j)]) += dx(c, j);
    dx = detail::block_backward(dpool, grids[lvl], p.down[lvl], k, tape.down[lvl], grads.down[lvl]);
  }

  Mat<S> d_input(dx.rows(), static_cast<Eigen::Index>(tape.rows * tape.cols));
  for (std::size_t r = 0; r < tape.rows; ++r)
    d_input.middleCols(static_cast<Eigen::Index>(r * tape.cols), static_cast<Eigen::Index>(tape.cols)) =
        dx.middleCols(static_cast<Eigen::Index>(r * g.w), static_cast<Eigen::Index>(tape.cols));
  return d_input;
}

/// Per-cell argmax; ties go to the lower class index (None < Substitute < Insert).
template <typename S>
EditMatrix decode(const LogitMap<S>& f) {
  if (!f.values.allFinite()) throw NumericError("decode: non-finite logits");
  EditMatrix em(f.rows, f.cols);
  for (std::size_t r = 0; r < f.rows; ++r)
    for (std::size_t c = 0; c < f.cols; ++c) {
      const auto cell = static_cast<Eigen::Index>(r * f.cols + c);
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < f.values.rows(); ++k)
        if (f.values(k, cell) > f.values(best, cell)) best = k;
      em.set(r, c, static_cast<EditClass>(best));
    }
  return em;
}

}  // namespace rau
