#include <gtest/gtest.h>

#include "mattforge/aim.hpp"
#include "mattforge/error.hpp"
#include "mattforge/rng.hpp"
#include "support/oracles.hpp"

using namespace mattforge;

namespace {

// One traced layer with hand-set attention and values; o is filled as A V.
AttentionTrace<double> fake_trace(std::vector<MatrixD> attn, MatrixD v) {
  AttentionTrace<double> t;
  const auto n = v.rows();
  t.ids.assign(static_cast<std::size_t>(n), 0);
  t.depth = 1;
  LayerCache<double> c;
  c.v = v;
  c.o.setZero(n, v.cols());
  const auto dk = v.cols() / static_cast<Eigen::Index>(attn.size());
  for (std::size_t h = 0; h < attn.size(); ++h) {
    c.o.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = attn[h] * v.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
  }
  c.attn = std::move(attn);
  t.layers.push_back(std::move(c));
  t.traced = {0};
  return t;
}

MatrixD causal_random(Rng& rng, int n) {
  MatrixD a = MatrixD::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double z = 0;
    for (int j = 0; j <= i; ++j) z += a(i, j) = std::exp(rng.normal());
    a.row(i) /= z;
  }
  return a;
}

MatrixD random_matrix(Rng& rng, int r, int c) {
  MatrixD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

SegmentStates<double> states_from_rows(int m, std::vector<std::vector<double>> rows) {
  SegmentStates<double> s;
  s.m = m;
  s.hidden = static_cast<int>(rows[0].size());
  MatrixD mat(static_cast<Eigen::Index>(rows.size()), s.hidden);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < s.hidden; ++j) mat(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  s.layers.push_back(mat);
  return s;
}

}  // namespace

TEST(Kernels, HandValues) {
  const std::vector<double> x{1, 0}, y{0, 1}, z{0, 0};
  EXPECT_DOUBLE_EQ(kernel_mse(x, y).loss, 1.0);
  EXPECT_DOUBLE_EQ(kernel_cosine(x, y).loss, 1.0);
  EXPECT_DOUBLE_EQ(kernel_mse(x, x).loss, 0.0);
  EXPECT_NEAR(kernel_cosine(x, x).loss, 0.0, 1e-15);
  const auto deg = kernel_cosine(x, z);
  EXPECT_TRUE(deg.degenerate);
  EXPECT_DOUBLE_EQ(deg.loss, 1.0);
  EXPECT_EQ(deg.grad_y, (std::vector<double>{0, 0}));
  EXPECT_THROW(kernel_mse(x, std::vector<double>{1}), Error);
}

TEST(Kernels, GradientsMatchCentralDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(6), y(6);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    for (auto kernel : {kernel_mse, kernel_cosine}) {
      const auto r = kernel(x, y);
      std::vector<std::size_t> coords{0, 1, 2, 3, 4, 5};
      const auto fd = oracle::central_differences([&] { return kernel(x, y).loss; }, y.data(), coords, 1e-6);
      for (std::size_t k = 0; k < 6; ++k) ASSERT_LT(oracle::rel_error(r.grad_y[k], fd[k], 1e-7), 1e-6);
    }
  }
}

TEST(SegmentStates, ThreeTokenHandFixture) {
  // Tokens 0,1 form segment 0 and token 2 forms segment 1.
  MatrixD a(3, 3);
  a << 1.0, 0.0, 0.0,  //
      0.5987, 0.4013, 0.0,  //
      0.2, 0.3, 0.5;
  MatrixD v(3, 2);
  v << 1, 0,  //
      0, 1,  //
      2, 2;
  const auto trace = fake_trace({a}, v);
  const std::vector<int> seg{0, 0, 1}, ell{1, 2};
  const auto s = segment_states(trace, seg, ell);
  ASSERT_EQ(s.m, 2);
  ASSERT_EQ(s.layers[0].rows(), 3);
  const auto& L = s.layers[0];
  // (i=0, j=0): query token 1 over tokens 0 and 1.
  EXPECT_NEAR(L(SegmentStates<double>::pair_index(0, 0), 0), 0.5987, 1e-12);
  EXPECT_NEAR(L(SegmentStates<double>::pair_index(0, 0), 1), 0.4013, 1e-12);
  // (i=1, j=0): query token 2 over tokens 0 and 1.
  EXPECT_NEAR(L(SegmentStates<double>::pair_index(1, 0), 0), 0.2, 1e-12);
  EXPECT_NEAR(L(SegmentStates<double>::pair_index(1, 0), 1), 0.3, 1e-12);
  // (i=1, j=1): query token 2 over token 2.
  EXPECT_NEAR(L(SegmentStates<double>::pair_index(1, 1), 0), 1.0, 1e-12);
  EXPECT_NEAR(L(SegmentStates<double>::pair_index(1, 1), 1), 1.0, 1e-12);

  const auto outs = segment_outputs(trace, ell);
  const auto summed = outputs_from_states(s);
  EXPECT_LT((outs.layers[0] - summed.layers[0]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SegmentStates, SoftmaxExample) {
  const double e1 = std::exp(0.8), e2 = std::exp(0.4);
  EXPECT_NEAR(e1 / (e1 + e2), 0.5987, 1e-4);
  EXPECT_NEAR(e2 / (e1 + e2), 0.4013, 1e-4);
}

TEST(SegmentStates, RejectsBadSegmentation) {
  Rng rng(2);
  const auto trace = fake_trace({causal_random(rng, 3)}, random_matrix(rng, 3, 2));
  EXPECT_THROW(segment_states(trace, std::vector<int>{0, 1}, std::vector<int>{0, 1}), Error);
  EXPECT_THROW(segment_states(trace, std::vector<int>{0, 1, 0}, std::vector<int>{2, 1}), Error);
  EXPECT_THROW(segment_states(trace, std::vector<int>{0, 0, 1}, std::vector<int>{1, 3}), Error);
  EXPECT_THROW(segment_states(trace, std::vector<int>{0, 0, 1}, std::vector<int>{0, 2}), Error);
}

TEST(AimLoss, TwoSegmentsAverageThreePairs) {
  const auto t = states_from_rows(2, {{1, 0}, {0, 0}, {0, 0}});
  const auto s = states_from_rows(2, {{0, 1}, {0, 0}, {1, 1}});
  // Per-pair mse: 1, 0, 1 -> sum 2, weight 2 / (2 * 3).
  const auto r = aim_loss(t, s, AimKernel::Mse);
  EXPECT_NEAR(r.loss, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.kernel_terms, 3);
  const auto star = aim_star_loss(t, s, AimKernel::Mse);
  // Outputs: t = (1,0), (0,0); s = (0,1), (1,1). mse 1 and 1.
  EXPECT_NEAR(star.loss, 1.0, 1e-15);
}

TEST(AimLoss, ZeroWhenStatesMatch) {
  Rng rng(3);
  const auto trace = fake_trace({causal_random(rng, 6), causal_random(rng, 6)}, random_matrix(rng, 6, 4));
  const std::vector<int> seg{0, 1, 1, 2, 3, 3}, ell{0, 2, 3, 5};
  const auto s = segment_states(trace, seg, ell);
  for (auto kernel : {AimKernel::Mse, AimKernel::Cosine}) {
    EXPECT_NEAR(aim_loss(s, s, kernel).loss, 0.0, 1e-15);
    EXPECT_NEAR(aim_star_loss(s, s, kernel).loss, 0.0, 1e-15);
    EXPECT_NEAR(aim_loss(s, s, kernel, HeadReduction::PerHeadMean, 2).loss, 0.0, 1e-15);
  }
}

TEST(AimLoss, PerHeadMeanEqualsConcatForMse) {
  Rng rng(4);
  const auto ta = fake_trace({causal_random(rng, 5), causal_random(rng, 5)}, random_matrix(rng, 5, 4));
  const auto sa = fake_trace({causal_random(rng, 4), causal_random(rng, 4)}, random_matrix(rng, 4, 4));
  const auto t = segment_states(ta, std::vector<int>{0, 0, 1, 2, 2}, std::vector<int>{1, 2, 4});
  const auto s = segment_states(sa, std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 1, 3});
  EXPECT_NEAR(aim_loss(t, s, AimKernel::Mse).loss, aim_loss(t, s, AimKernel::Mse, HeadReduction::PerHeadMean, 2).loss,
              1e-13);
  EXPECT_THROW(aim_loss(t, s, AimKernel::Mse, HeadReduction::PerHeadMean, 3), Error);
}

TEST(AimLoss, GradientMatchesCentralDifferences) {
  Rng rng(5);
  const auto ta = fake_trace({causal_random(rng, 5)}, random_matrix(rng, 5, 3));
  const auto sa = fake_trace({causal_random(rng, 6)}, random_matrix(rng, 6, 3));
  const auto t = segment_states(ta, std::vector<int>{0, 0, 1, 2, 2}, std::vector<int>{1, 2, 4});
  auto s = segment_states(sa, std::vector<int>{0, 1, 1, 1, 2, 2}, std::vector<int>{0, 3, 5});
  for (auto kernel : {AimKernel::Mse, AimKernel::Cosine}) {
    for (auto heads : {HeadReduction::Concat, HeadReduction::PerHeadMean}) {
      const int nh = heads == HeadReduction::Concat ? 1 : 3;
      const auto r = aim_loss(t, s, kernel, heads, nh);
      std::vector<std::size_t> coords;
      for (std::size_t c = 0; c < static_cast<std::size_t>(s.layers[0].size()); ++c) coords.push_back(c);
      const auto fd = oracle::central_differences([&] { return aim_loss(t, s, kernel, heads, nh).loss; },
                                                  s.layers[0].data(), coords, 1e-6);
      for (std::size_t k = 0; k < coords.size(); ++k) {
        ASSERT_LT(oracle::rel_error(r.grad.layers[0].data()[k], fd[k], 1e-7), 1e-6);
      }
      const auto rs = aim_star_loss(t, s, kernel, heads, nh);
      auto so = outputs_from_states(s);
      const auto to = outputs_from_states(t);
      coords.clear();
      for (std::size_t c = 0; c < static_cast<std::size_t>(so.layers[0].size()); ++c) coords.push_back(c);
      const auto fd2 = oracle::central_differences([&] { return aim_star_loss(to, so, kernel, heads, nh).loss; },
                                                   so.layers[0].data(), coords, 1e-6);
      for (std::size_t k = 0; k < coords.size(); ++k) {
        ASSERT_LT(oracle::rel_error(rs.grad.layers[0].data()[k], fd2[k], 1e-7), 1e-6);
      }
    }
  }
}

TEST(AimLoss, MismatchedSegmentCounts) {
  const auto t = states_from_rows(1, {{1, 0}});
  const auto s = states_from_rows(2, {{0, 1}, {0, 0}, {1, 1}});
  EXPECT_THROW(aim_loss(t, s, AimKernel::Mse), Error);
  EXPECT_THROW(aim_star_loss(t, s, AimKernel::Mse), Error);
}

TEST(Backward, StatesChainToAttentionAndValues) {
  Rng rng(6);
  const std::vector<int> tseg{0, 0, 1, 2, 2}, tell{1, 2, 4};
  const std::vector<int> sseg{0, 1, 1, 2}, sell{0, 2, 3};
  const auto teacher = segment_states(fake_trace({causal_random(rng, 5), causal_random(rng, 5)}, random_matrix(rng, 5, 4)),
                                      tseg, tell);
  auto student = fake_trace({causal_random(rng, 4), causal_random(rng, 4)}, random_matrix(rng, 4, 4));
  for (auto kernel : {AimKernel::Mse, AimKernel::Cosine}) {
    const auto f = [&] { return aim_loss(teacher, segment_states(student, sseg, sell), kernel).loss; };
    const auto r = aim_loss(teacher, segment_states(student, sseg, sell), kernel);
    const auto g = segment_states_backward(student, sseg, sell, r.grad);
    ASSERT_EQ(g.layers.size(), 1u);
    auto& c = student.layers[0];
    for (int h = 0; h < 2; ++h) {
      std::vector<std::size_t> coords;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j <= i; ++j) coords.push_back(static_cast<std::size_t>(i * 4 + j));
      const auto fd = oracle::central_differences(f, c.attn[static_cast<std::size_t>(h)].data(), coords, 1e-6);
      for (std::size_t k = 0; k < coords.size(); ++k) {
        ASSERT_LT(oracle::rel_error(g.layers[0].d_attn[static_cast<std::size_t>(h)].data()[coords[k]], fd[k], 1e-7), 1e-6);
      }
    }
    std::vector<std::size_t> coords;
    for (std::size_t k = 0; k < 16; ++k) coords.push_back(k);
    const auto fd = oracle::central_differences(f, c.v.data(), coords, 1e-6);
    for (std::size_t k = 0; k < 16; ++k) ASSERT_LT(oracle::rel_error(g.layers[0].d_v.data()[k], fd[k], 1e-7), 1e-6);
  }
}

TEST(Backward, OutputsChainToAttentionOutput) {
  Rng rng(7);
  const std::vector<int> ell{1, 3};
  auto student = fake_trace({causal_random(rng, 4)}, random_matrix(rng, 4, 2));
  const auto teacher = segment_outputs(fake_trace({causal_random(rng, 4)}, random_matrix(rng, 4, 2)), ell);
  const auto r = aim_star_loss(teacher, segment_outputs(student, ell), AimKernel::Cosine);
  const auto g = segment_outputs_backward(student, ell, r.grad);
  std::vector<std::size_t> coords{0, 1, 2, 3, 4, 5, 6, 7};
  const auto fd = oracle::central_differences(
      [&] { return aim_star_loss(teacher, segment_outputs(student, ell), AimKernel::Cosine).loss; },
      student.layers[0].o.data(), coords, 1e-6);
  for (std::size_t k = 0; k < 8; ++k) ASSERT_LT(oracle::rel_error(g.layers[0].d_o.data()[k], fd[k], 1e-7), 1e-6);
}

TEST(AimConfig, Validates) {
  AimConfig c;
  EXPECT_NO_THROW(c.validate(4));
  c.depth_n = 5;
  EXPECT_THROW(c.validate(4), Error);
  c.depth_n = 0;
  EXPECT_THROW(c.validate(4), Error);
}

TEST(AimLoss, TracedLayersAverageUniformly) {
  Rng rng(8);
  const auto p = oracle::tiny_params(8, 3, 2, 4);
  std::vector<TokenId> ids{256, 4, 9, 33, 2, 100};
  const std::vector<int> seg{0, 1, 2, 2, 3, 3}, ell{0, 1, 3, 5};
  MatrixD other = p.embedding;
  other.row(9) *= -1.0;
  const auto t_all = segment_states(forward_trace(ModelView<double>(p), ids, 2, TraceLayers::AllUpToN), seg, ell);
  const auto s_all = segment_states(forward_trace(ModelView<double>(p, other), ids, 2, TraceLayers::AllUpToN), seg, ell);
  double per_layer = 0;
  for (int l = 0; l < 2; ++l) {
    SegmentStates<double> a{t_all.m, t_all.hidden, {t_all.layers[static_cast<std::size_t>(l)]}};
    SegmentStates<double> b{s_all.m, s_all.hidden, {s_all.layers[static_cast<std::size_t>(l)]}};
    per_layer += aim_loss(a, b, AimKernel::Mse).loss / 2.0;
  }
  EXPECT_NEAR(aim_loss(t_all, s_all, AimKernel::Mse).loss, per_layer, 1e-14);
}
