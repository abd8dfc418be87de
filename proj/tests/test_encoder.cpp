#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace rau;

namespace {

EncoderConfig small_config(std::size_t layers = 2, std::size_t heads = 2, std::size_t dim = 16) {
  EncoderConfig c;
  c.layers = layers;
  c.heads = heads;
  c.model_dim = dim;
  c.ffn_dim = 2 * dim;
  c.max_positions = 64;
  c.vocab_size = 24;
  c.dropout = 0.0;
  return c;
}

void expect_row_stochastic(const Mat<float>& a) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      EXPECT_GE(a(r, c), 0.0f);
      EXPECT_LE(a(r, c), 1.0f);
      sum += a(r, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

}  // namespace

TEST(AttentionWeights, EqualLogitsGiveUniformRows) {
  Mat<double> z = Mat<double>::Zero(3, 2);
  Mat<double> a = attention_weights(z, z);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(a(r, c), 1.0 / 3.0, 1e-12);
}

TEST(AttentionWeights, SingleToken) {
  Mat<double> q = make_mat<double>({{0.3, -2.0}});
  EXPECT_EQ(attention_weights(q, q)(0, 0), 1.0);
}

TEST(AttentionWeights, IdentityQueriesAndKeys) {
  Mat<double> eye = make_mat<double>({{1, 0}, {0, 1}});
  Mat<double> a = attention_weights(eye, eye);
  // Scalar softmax of (1/sqrt(2), 0).
  const double e = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(a(0, 0), e / (e + 1.0), 1e-12);
  EXPECT_NEAR(a(0, 1), 1.0 / (e + 1.0), 1e-12);
  EXPECT_NEAR(a(0, 0), 0.6698, 1e-4);
  EXPECT_NEAR(a(0, 1), 0.3302, 1e-4);
  EXPECT_NEAR(a(1, 1), a(0, 0), 1e-15);
}

TEST(AttentionWeights, MaskedColumnsGetZeroWeight) {
  Rng rng(1);
  Mat<double> q(4, 3), k(4, 3);
  fill_normal(q, rng, 1.0);
  fill_normal(k, rng, 1.0);
  Mat<double> a = attention_weights(q, k, {false, true, false, true});
  for (Eigen::Index r = 0; r < 4; ++r) {
    EXPECT_EQ(a(r, 1), 0.0);
    EXPECT_EQ(a(r, 3), 0.0);
    EXPECT_NEAR(a(r, 0) + a(r, 2), 1.0, 1e-12);
  }
}

TEST(AttentionWeights, Errors) {
  Mat<double> q = Mat<double>::Zero(2, 2);
  Mat<double> bad = q;
  bad(1, 1) = std::nan("");
  EXPECT_THROW(attention_weights(bad, q), NumericError);
  EXPECT_THROW(attention_weights(q, Mat<double>::Zero(3, 2).eval()), ShapeError);
  EXPECT_THROW(attention_weights(q, q, {true, true}), ShapeError);
}

TEST(LayerNorm, NormalizesRows) {
  Rng rng(2);
  Mat<double> x(3, 8);
  fill_normal(x, rng, 3.0);
  Mat<double> g = Mat<double>::Ones(1, 8), b = Mat<double>::Zero(1, 8);
  detail::LayerNormCache<double> cache;
  Mat<double> y = detail::layer_norm(x, g, b, cache);
  for (Eigen::Index r = 0; r < 3; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 8.0, 1.0, 1e-4);
  }
}

TEST(Gelu, ValuesAndDerivative) {
  EXPECT_EQ(detail::gelu(0.0), 0.0);
  EXPECT_NEAR(detail::gelu(1.0), 0.8413447460685429, 1e-12);
  EXPECT_NEAR(detail::gelu(-1.0), -0.15865525393145707, 1e-12);
  for (double x : {-2.0, -0.5, 0.0, 0.7, 3.0}) {
    const double h = 1e-6;
    EXPECT_NEAR(detail::gelu_grad(x), (detail::gelu(x + h) - detail::gelu(x - h)) / (2 * h), 1e-7);
  }
}

TEST(EncoderConfig, Validation) {
  EncoderConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EncoderParams, LastLayerHasNoFeedForward) {
  EncoderConfig c = small_config(3);
  auto p = EncoderParams<float>::zeros(c);
  EXPECT_GT(p.layers[0].w1.size(), 0);
  EXPECT_GT(p.layers[1].w1.size(), 0);
  EXPECT_EQ(p.layers[2].w1.size(), 0);
  for (auto& t : p.tensors()) EXPECT_EQ(t.name.find("layer2.w1"), std::string::npos);
}

TEST(EncoderForward, ShapesAndRowStochasticity) {
  EncoderConfig c = small_config(3, 4, 16);
  Rng rng(5);
  auto p = EncoderParams<float>::init(c, rng);
  for (int trial = 0; trial < 10; ++trial) {
    auto ex = test::random_encoded(1 + uniform_index(rng, 10), 1 + uniform_index(rng, 6), rng);
    auto out = encoder_forward(ex, p, c, false);
    ASSERT_EQ(out.attention.layers(), 3u);
    ASSERT_EQ(out.attention.heads(), 4u);
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t h = 0; h < 4; ++h) {
        const auto& a = out.attention.at(l, h);
        ASSERT_EQ(static_cast<std::size_t>(a.rows()), ex.length());
        ASSERT_EQ(static_cast<std::size_t>(a.cols()), ex.length());
        EXPECT_TRUE(all_finite(a));
        expect_row_stochastic(a);
      }
  }
}

TEST(EncoderForward, EvalModeIsBitIdentical) {
  EncoderConfig c = small_config();
  c.dropout = 0.3;
  Rng rng(6);
  auto p = EncoderParams<float>::init(c, rng);
  auto ex = test::random_encoded(7, 4, rng);
  auto a = encoder_forward(ex, p, c, false);
  auto b = encoder_forward(ex, p, c, false);
  for (std::size_t l = 0; l < c.layers; ++l)
    for (std::size_t h = 0; h < c.heads; ++h) EXPECT_EQ(a.attention.at(l, h), b.attention.at(l, h));
}

TEST(EncoderForward, DropoutKeepsExtractedWeightsStochastic) {
  EncoderConfig c = small_config();
  c.dropout = 0.5;
  Rng rng(7);
  auto p = EncoderParams<float>::init(c, rng);
  auto ex = test::random_encoded(6, 3, rng);
  Rng r1(11), r2(11);
  auto a = encoder_forward(ex, p, c, true, &r1);
  auto b = encoder_forward(ex, p, c, true, &r2);
  auto ev = encoder_forward(ex, p, c, false);
  for (std::size_t l = 0; l < c.layers; ++l)
    for (std::size_t h = 0; h < c.heads; ++h) {
      expect_row_stochastic(a.attention.at(l, h));
      EXPECT_EQ(a.attention.at(l, h), b.attention.at(l, h));
    }
  // Layer 0 sees dropped embeddings, so training and eval weights differ.
  EXPECT_NE(a.attention.at(1, 0), ev.attention.at(1, 0));
  EXPECT_THROW(encoder_forward(ex, p, c, true), ConfigError);
}

TEST(EncoderForward, RejectsBadInput) {
  EncoderConfig c = small_config();
  Rng rng(8);
  auto p = EncoderParams<float>::init(c, rng);
  auto ex = test::random_encoded(3, 2, rng);
  ex.ids[1] = 999;
  EXPECT_THROW(encoder_forward(ex, p, c, false), IndexOutOfRange);
  c.max_positions = 4;
  EXPECT_THROW(encoder_forward(test::random_encoded(3, 2, rng), p, c, false), TooLong);
}

TEST(EncoderForward, PadTailDoesNotChangeRealPositions) {
  EncoderConfig c = small_config(2, 2, 16);
  Rng rng(9);
  auto p = EncoderParams<float>::init(c, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto ex = test::random_encoded(2 + uniform_index(rng, 6), 1 + uniform_index(rng, 4), rng);
    auto base = encoder_forward(ex, p, c, false);
    auto padded = ex;
    const std::size_t pads = 1 + uniform_index(rng, 4);
    for (std::size_t i = 0; i < pads; ++i) {
      padded.ids.push_back(Vocab::kPad);
      padded.segments.push_back(static_cast<std::int32_t>(uniform_index(rng, 2)));
      padded.context_mask.push_back(false);
      padded.incomplete_mask.push_back(false);
      padded.pad_mask.push_back(true);
    }
    auto shuffled = padded;
    std::reverse(shuffled.segments.begin() + static_cast<std::ptrdiff_t>(ex.length()), shuffled.segments.end());
    for (const auto* variant : {&padded, &shuffled}) {
      auto out = encoder_forward(*variant, p, c, false);
      for (std::size_t l = 0; l < c.layers; ++l)
        for (std::size_t h = 0; h < c.heads; ++h)
          for (auto m : ex.context_positions)
            for (auto n : ex.incomplete_positions) {
              const auto mi = static_cast<Eigen::Index>(m), ni = static_cast<Eigen::Index>(n);
              EXPECT_NEAR(out.attention.at(l, h)(mi, ni), base.attention.at(l, h)(mi, ni), 1e-6);
              EXPECT_NEAR(out.attention.at(l, h)(ni, mi), base.attention.at(l, h)(ni, mi), 1e-6);
            }
    }
  }
}

TEST(EncoderBackward, RequiresForward) {
  EncoderConfig c = small_config();
  auto p = EncoderParams<float>::zeros(c);
  auto g = EncoderParams<float>::zeros(c);
  EncoderTape<float> tape;
  EXPECT_THROW(encoder_backward(tape, AttentionStack<float>::zeros(2, 2, 3), p, c, g), BackwardWithoutForward);
}

TEST(EncoderBackward, ZeroUpstreamGivesZeroGradients) {
  EncoderConfig c = small_config();
  Rng rng(10);
  auto p = EncoderParams<float>::init(c, rng);
  auto g = EncoderParams<float>::zeros(c);
  auto ex = test::random_encoded(5, 3, rng);
  auto out = encoder_forward(ex, p, c, false);
  encoder_backward(out.tape, AttentionStack<float>::zeros(c.layers, c.heads, ex.length()), p, c, g);
  for (auto& t : g.tensors()) EXPECT_TRUE(t.value->isZero(0.0)) << t.name;
}

TEST(EncoderBackward, MatchesFiniteDifferences) {
  for (double dropout : {0.0, 0.2}) {
    EncoderConfig c = small_config(3, 2, 8);
    c.dropout = dropout;
    Rng rng(12);
    auto p = EncoderParams<double>::init(c, rng);
    for (auto& t : p.tensors()) {
      if (t.name.find(".g") != std::string::npos) continue;
      Mat<double> noise(t.value->rows(), t.value->cols());
      fill_normal(noise, rng, 0.3);
      *t.value += noise;
    }
    auto ex = test::random_encoded(5, 3, rng);
    AttentionStack<double> w = AttentionStack<double>::zeros(c.layers, c.heads, ex.length());
    for (auto& layer : w.weights)
      for (auto& m : layer) fill_normal(m, rng, 1.0);
    auto loss = [&] {
      Rng drop(77);
      auto out = encoder_forward(ex, p, c, dropout > 0, &drop);
      double s = 0.0;
      for (std::size_t l = 0; l < c.layers; ++l)
        for (std::size_t h = 0; h < c.heads; ++h) s += out.attention.at(l, h).cwiseProduct(w.at(l, h)).sum();
      return s;
    };
    Rng drop(77);
    auto out = encoder_forward(ex, p, c, dropout > 0, &drop);
    auto g = EncoderParams<double>::zeros(c);
    encoder_backward(out.tape, w, p, c, g);
    auto gt = g.tensors();
    for (auto& t : gt) {
      if (t.name == "layer2.wv" || t.name == "layer2.wo") {
        EXPECT_TRUE(t.value->isZero(0.0)) << t.name;
      }
    }
    auto res = test::grad_check(p.tensors(), gt, loss, 300, rng, 1e-5, 1e-4);
    EXPECT_GE(res.fraction(), 0.99) << "dropout=" << dropout << " worst=" << res.worst;
  }
}
