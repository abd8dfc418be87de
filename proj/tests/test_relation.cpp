#include <gtest/gtest.h>

#include "support.hpp"

using namespace rau;

namespace {

Mat<double> counting_matrix(Eigen::Index t) {
  Mat<double> a(t, t);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = double(i + 1);
  return a;
}

AttentionStack<double> random_stack(std::size_t layers, std::size_t heads, std::size_t t, Rng& rng) {
  auto s = AttentionStack<double>::zeros(layers, heads, t);
  for (auto& layer : s.weights)
    for (auto& m : layer)
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng);
  return s;
}

}  // namespace

TEST(SlicePair, FourByFourNoSpecials) {
  auto ex = test::from_masks({true, true, false, false}, {false, false, true, true});
  auto [top, bottom] = slice_pair(counting_matrix(4), ex);
  EXPECT_EQ(top, make_mat<double>({{3, 4}, {7, 8}}));
  EXPECT_EQ(bottom, make_mat<double>({{9, 13}, {10, 14}}));
}

TEST(SlicePair, SymmetricMatrixGivesEqualSlices) {
  Rng rng(1);
  Mat<double> a(7, 7);
  fill_normal(a, rng, 1.0);
  a = (a + a.transpose()).eval();
  auto ex = test::from_masks({false, true, true, false, true, false, false}, {false, false, false, false, false, true, true});
  auto [top, bottom] = slice_pair(a, ex);
  EXPECT_EQ(top, bottom);
}

TEST(SlicePair, SkipsSpecialRowsAndColumns) {
  // [CLS] c1 c2 [SEP] x1 [SEP]
  auto ex = test::from_masks({false, true, true, false, false, false}, {false, false, false, false, true, false});
  auto a = counting_matrix(6);
  auto [top, bottom] = slice_pair(a, ex);
  EXPECT_EQ(top, make_mat<double>({{a(1, 4)}, {a(2, 4)}}));
  EXPECT_EQ(bottom, make_mat<double>({{a(4, 1)}, {a(4, 2)}}));
}

TEST(SlicePair, ShapeErrors) {
  auto ex = test::from_masks({true, false}, {false, true});
  EXPECT_THROW(slice_pair(counting_matrix(3), ex), ShapeError);
  auto bad = ex;
  bad.context_mask[1] = true;
  EXPECT_THROW(slice_pair(counting_matrix(2), bad), ShapeError);
  bad = ex;
  bad.context_positions = {1};
  EXPECT_THROW(slice_pair(counting_matrix(2), bad), ShapeError);
  bad = ex;
  bad.incomplete_mask.pop_back();
  EXPECT_THROW(slice_pair(counting_matrix(2), bad), ShapeError);
}

TEST(SlicePair, TopRowsSumToAtMostOneProperty) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto ex = test::random_encoded(1 + uniform_index(rng, 8), 1 + uniform_index(rng, 5), rng);
    Mat<double> q(static_cast<Eigen::Index>(ex.length()), 4), k = q;
    fill_normal(q, rng, 2.0);
    fill_normal(k, rng, 2.0);
    auto [top, bottom] = slice_pair(attention_weights(q, k), ex);
    for (Eigen::Index m = 0; m < top.rows(); ++m) EXPECT_LE(top.row(m).sum(), 1.0 + 1e-12);
  }
}

TEST(SelectionSpec, DefaultIsLastLayerAllHeads) {
  EncoderConfig c;
  c.layers = 4;
  c.heads = 4;
  auto s = SelectionSpec::last_layer(c);
  EXPECT_EQ(s.layers, std::vector<std::size_t>{3});
  EXPECT_EQ(s.heads, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(s.selected(), 4u);
}

TEST(SelectionSpec, Validation) {
  SelectionSpec s{{0}, {0, 1}};
  EXPECT_NO_THROW(s.validate(2, 2));
  EXPECT_THROW((SelectionSpec{{2}, {0}}.validate(2, 2)), IndexOutOfRange);
  EXPECT_THROW((SelectionSpec{{0}, {5}}.validate(2, 2)), IndexOutOfRange);
  EXPECT_THROW((SelectionSpec{{}, {0}}.validate(2, 2)), ConfigError);
  EXPECT_THROW((SelectionSpec{{0, 0}, {0}}.validate(2, 2)), ConfigError);
}

TEST(SelectionSpec, IndexListParsing) {
  EXPECT_EQ(parse_index_list("all", 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(parse_index_list("last", 12), std::vector<std::size_t>{11});
  EXPECT_EQ(parse_index_list("1,6,12", 12), (std::vector<std::size_t>{0, 5, 11}));
  EXPECT_EQ(parse_index_list("1-3", 12), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(parse_index_list("2, 4-5", 12), (std::vector<std::size_t>{1, 3, 4}));
  EXPECT_THROW(parse_index_list("0", 4), ConfigError);
  EXPECT_THROW(parse_index_list("x", 4), ConfigError);
  EXPECT_THROW(parse_index_list("3-1", 4), ConfigError);
  EXPECT_EQ(format_index_list(parse_index_list("1,6,12", 12)), "1,6,12");
}

TEST(Assemble, DefaultSpecShape) {
  Rng rng(3);
  auto ex = test::random_encoded(6, 4, rng);
  auto stack = random_stack(3, 4, ex.length(), rng);
  EncoderConfig c;
  c.layers = 3;
  c.heads = 4;
  auto rt = assemble(stack, ex, SelectionSpec::last_layer(c));
  EXPECT_EQ(rt.rows, 6u);
  EXPECT_EQ(rt.cols, 4u);
  EXPECT_EQ(rt.channels(), 8u);
}

TEST(Assemble, SingletonSelectionEqualsSlicePair) {
  Rng rng(4);
  auto ex = test::random_encoded(5, 3, rng);
  auto stack = random_stack(2, 2, ex.length(), rng);
  auto rt = assemble(stack, ex, SelectionSpec{{0}, {0}});
  ASSERT_EQ(rt.channels(), 2u);
  auto [top, bottom] = slice_pair(stack.at(0, 0), ex);
  for (std::size_t m = 0; m < rt.rows; ++m)
    for (std::size_t n = 0; n < rt.cols; ++n) {
      EXPECT_EQ(rt.at(m, n, 0), top(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)));
      EXPECT_EQ(rt.at(m, n, 1), bottom(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)));
    }
}

TEST(Assemble, FirstHalfOfHeadsInLastLayer) {
  Rng rng(5);
  auto ex = test::random_encoded(4, 4, rng);
  auto stack = random_stack(12, 12, ex.length(), rng);
  auto rt = assemble(stack, ex, SelectionSpec{parse_index_list("last", 12), parse_index_list("1-6", 12)});
  EXPECT_EQ(rt.channels(), 12u);
}

TEST(Assemble, ChannelsFollowSpecOrderProperty) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto ex = test::random_encoded(1 + uniform_index(rng, 6), 1 + uniform_index(rng, 4), rng);
    auto stack = random_stack(3, 3, ex.length(), rng);
    SelectionSpec a{{0, 2}, {0, 1, 2}};
    SelectionSpec b{{2, 0}, {2, 0, 1}};
    auto ra = assemble(stack, ex, a), rb = assemble(stack, ex, b);
    auto channel_of = [](const SelectionSpec& s, std::size_t l, std::size_t h) {
      std::size_t j = 0;
      for (auto sl : s.layers)
        for (auto sh : s.heads) {
          if (sl == l && sh == h) return j;
          ++j;
        }
      return j;
    };
    for (std::size_t l : {0u, 2u})
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t side = 0; side < 2; ++side) {
          const auto ca = static_cast<Eigen::Index>(2 * channel_of(a, l, h) + side);
          const auto cb = static_cast<Eigen::Index>(2 * channel_of(b, l, h) + side);
          EXPECT_EQ(ra.values.row(ca), rb.values.row(cb));
        }
  }
}

TEST(Assemble, SpecialsDoNotAffectTensorProperty) {
  // The same attention restricted to word positions, with and without special rows.
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto ex = test::random_encoded(1 + uniform_index(rng, 6), 1 + uniform_index(rng, 4), rng);
    auto stack = random_stack(1, 2, ex.length(), rng);
    std::vector<std::size_t> words = ex.context_positions;
    words.insert(words.end(), ex.incomplete_positions.begin(), ex.incomplete_positions.end());
    const auto w = static_cast<Eigen::Index>(words.size());
    auto compact = AttentionStack<double>::zeros(1, 2, words.size());
    for (std::size_t h = 0; h < 2; ++h)
      for (Eigen::Index i = 0; i < w; ++i)
        for (Eigen::Index j = 0; j < w; ++j)
          compact.weights[0][h](i, j) = stack.at(0, h)(static_cast<Eigen::Index>(words[static_cast<std::size_t>(i)]),
                                                       static_cast<Eigen::Index>(words[static_cast<std::size_t>(j)]));
    std::vector<bool> cm(words.size(), false), im(words.size(), false);
    for (std::size_t i = 0; i < ex.M(); ++i) cm[i] = true;
    for (std::size_t i = ex.M(); i < words.size(); ++i) im[i] = true;
    auto compact_ex = test::from_masks(cm, im);
    SelectionSpec spec{{0}, {0, 1}};
    EXPECT_EQ(assemble(stack, ex, spec).values, assemble(compact, compact_ex, spec).values);
  }
}

TEST(Assemble, EndOfUtteranceColumnUsesClosingSep) {
  Rng rng(8);
  auto ex = test::random_encoded(3, 2, rng);
  auto stack = random_stack(1, 1, ex.length(), rng);
  auto rt = assemble(stack, ex, SelectionSpec{{0}, {0}}, true);
  ASSERT_EQ(rt.cols, 3u);
  const auto sep = static_cast<Eigen::Index>(ex.final_sep);
  for (std::size_t m = 0; m < 3; ++m) {
    const auto rc = static_cast<Eigen::Index>(ex.context_positions[m]);
    EXPECT_EQ(rt.at(m, 2, 0), stack.at(0, 0)(rc, sep));
    EXPECT_EQ(rt.at(m, 2, 1), stack.at(0, 0)(sep, rc));
  }
}

TEST(Assemble, Errors) {
  Rng rng(9);
  auto ex = test::random_encoded(3, 2, rng);
  auto stack = random_stack(2, 2, ex.length(), rng);
  EXPECT_THROW(assemble(stack, ex, SelectionSpec{{2}, {0}}), IndexOutOfRange);
  auto short_stack = random_stack(2, 2, ex.length() - 1, rng);
  EXPECT_THROW(assemble(short_stack, ex, SelectionSpec{{0}, {0}}), ShapeError);
}

TEST(AssembleBackward, IsAdjointOfAssemble) {
  // <assemble(A), G> == <A, assemble_backward(G)> for any A, G.
  Rng rng(10);
  for (bool eou : {false, true}) {
    auto ex = test::random_encoded(4, 3, rng);
    auto stack = random_stack(2, 3, ex.length(), rng);
    SelectionSpec spec{{1, 0}, {2, 0}};
    auto rt = assemble(stack, ex, spec, eou);
    Mat<double> g(rt.values.rows(), rt.values.cols());
    fill_normal(g, rng, 1.0);
    auto back = assemble_backward(g, ex, spec, 2, 3, eou);
    double rhs = 0.0;
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t h = 0; h < 3; ++h) rhs += stack.at(l, h).cwiseProduct(back.at(l, h)).sum();
    EXPECT_NEAR(rt.values.cwiseProduct(g).sum(), rhs, 1e-10);
  }
  auto ex = test::random_encoded(2, 2, rng);
  EXPECT_THROW(assemble_backward(Mat<double>::Zero(3, 4).eval(), ex, SelectionSpec{{0}, {0}}, 1, 1), ShapeError);
}
