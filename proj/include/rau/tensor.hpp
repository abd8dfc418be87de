#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rau/errors.hpp"

namespace rau {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

/// Named view over a parameter tensor; the pointer is owned by the parameter struct.
template <typename S>
struct TensorRef {
  std::string name;
  Mat<S>* value;
};

template <typename S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

/// Uniform in [0,1) from raw engine output; std distributions are not portable across
/// standard libraries and checkpoints must be reproducible.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double normal01(Rng& rng) {
  // Box-Muller.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

template <typename S>
void fill_normal(Mat<S>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(normal01(rng) * stddev);
}

/// Deterministic child seed for (seed, a, b) without consuming a shared stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

/// Row-major fill of an Eigen matrix from nested initializer data; used mostly by tests.
template <typename S>
Mat<S> make_mat(std::initializer_list<std::initializer_list<double>> rows) {
  Mat<S> m(static_cast<Eigen::Index>(rows.size()),
           rows.size() ? static_cast<Eigen::Index>(rows.begin()->size()) : 0);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = static_cast<S>(v);
    ++r;
  }
  return m;
}

template <typename S>
void zero_all(std::vector<TensorRef<S>> tensors) {
  for (auto& t : tensors) t.value->setZero();
}

}  // namespace rau
