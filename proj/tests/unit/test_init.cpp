#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mattforge/error.hpp"
#include "mattforge/init.hpp"
#include "mattforge/rng.hpp"

using namespace mattforge;

namespace {

// Extended vocab of 7: ids 0..4 shared with base ids 0..4, ids 5 and 6 new.
VocabOverlap toy_overlap() {
  VocabOverlap o;
  o.base_of = {0, 1, 2, 3, 4, -1, -1};
  o.new_ids = {5, 6};
  return o;
}

AuxEmbeddings toy_aux() {
  AuxEmbeddings a;
  a.dim = 2;
  a.matrix = MatrixD::Zero(7, 2);
  a.coverage.assign(7, true);
  a.matrix.row(0) << 1, 0;
  a.matrix.row(1) << 0.6, 0.8;
  a.matrix.row(2) << 0, 1;    // orthogonal to token 5
  a.matrix.row(3) << -1, 0;   // opposite
  a.coverage[4] = false;      // not covered
  a.matrix.row(5) << 1, 0;
  a.matrix.row(6) << 0, -1;  // no neighbor with positive similarity
  return a;
}

MatrixF toy_base() {
  MatrixF b(5, 3);
  b << 1, 2, 3,  //
      -1, 0, 4,  //
      7, 7, 7,  //
      0, 0, -9,  //
      5, 5, 5;
  return b;
}

}  // namespace

TEST(FocusLite, HandWeights) {
  const auto w = focus_lite_weights(5, toy_overlap(), toy_aux(), {.k = 10, .temperature = 0.1});
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].base_id, 0);
  EXPECT_EQ(w[1].base_id, 1);
  const double a = std::exp(1.0 / 0.1), b = std::exp(0.6 / 0.1);
  EXPECT_NEAR(w[0].weight, a / (a + b), 1e-12);
  EXPECT_NEAR(w[1].weight, b / (a + b), 1e-12);

  const auto top1 = focus_lite_weights(5, toy_overlap(), toy_aux(), {.k = 1, .temperature = 0.1});
  ASSERT_EQ(top1.size(), 1u);
  EXPECT_EQ(top1[0].base_id, 0);
  EXPECT_DOUBLE_EQ(top1[0].weight, 1.0);

  EXPECT_TRUE(focus_lite_weights(6, toy_overlap(), toy_aux()).empty());
}

TEST(FocusLite, InitIsConvexAndFallsBackToMean) {
  const auto base = toy_base();
  const auto init = focus_lite_init(base, toy_overlap(), toy_aux(), {.k = 10, .temperature = 0.1});
  ASSERT_EQ(init.rows(), 7);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(init.row(i), base.row(i));
  const double a = std::exp(10.0), b = std::exp(6.0);
  const Eigen::RowVectorXd expect = (a * base.row(0).cast<double>() + b * base.row(1).cast<double>()) / (a + b);
  EXPECT_LT((init.row(5).cast<double>() - expect).cwiseAbs().maxCoeff(), 1e-6);
  // Norm cannot exceed the largest neighbor norm.
  EXPECT_LE(init.row(5).norm(), std::max(base.row(0).norm(), base.row(1).norm()) + 1e-6);
  const Eigen::RowVectorXf mean = base.colwise().mean();
  EXPECT_LT((init.row(6) - mean).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FocusLite, TiesBreakOnId) {
  auto aux = toy_aux();
  aux.matrix.row(1) << 1, 0;  // same similarity as token 0
  const auto w = focus_lite_weights(5, toy_overlap(), aux, {.k = 1, .temperature = 0.1});
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].base_id, 0);
}

TEST(FocusLite, ValidatesOptions) {
  EXPECT_THROW(focus_lite_weights(5, toy_overlap(), toy_aux(), {.k = 0}), Error);
  EXPECT_THROW(focus_lite_weights(5, toy_overlap(), toy_aux(), {.temperature = 0.0}), Error);
  auto small = toy_aux();
  small.matrix.conservativeResize(6, 2);
  small.coverage.resize(6);
  EXPECT_THROW(focus_lite_init(toy_base(), toy_overlap(), small), Error);
}

TEST(MeanInit, CopiesSharedRowsAndAveragesBase) {
  const auto base = toy_base();
  const auto init = mean_init(base, toy_overlap());
  for (int i = 0; i < 5; ++i) EXPECT_EQ(init.row(i), base.row(i));
  EXPECT_NEAR(init(5, 0), (1 - 1 + 7 + 0 + 5) / 5.0, 1e-6);
  EXPECT_NEAR(init(6, 2), (3 + 4 + 7 - 9 + 5) / 5.0, 1e-6);
}

TEST(RandomInit, SeededAndCopiesShared) {
  const auto base = toy_base();
  const auto a = copy_overlap_init(base, toy_overlap(), 9);
  const auto b = copy_overlap_init(base, toy_overlap(), 9);
  const auto c = copy_overlap_init(base, toy_overlap(), 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.row(5), c.row(5));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.row(i), base.row(i));
  EXPECT_LT(a.bottomRows(2).cwiseAbs().maxCoeff(), 0.2f);
}

TEST(AuxEmbeddings, RowsAreUnitOrZero) {
  const Corpus corpus{"the cat sat on the mat", "the dog sat on the log", "a cat and a dog"};
  const Vocab v = train_bpe(corpus, 280);
  const auto aux = aux_embeddings(corpus, v, {.dim = 8, .window = 2});
  ASSERT_EQ(aux.matrix.rows(), static_cast<Eigen::Index>(v.size()));
  EXPECT_EQ(aux.dim, 8);
  for (std::size_t id = 0; id < v.size(); ++id) {
    const double n = aux.matrix.row(static_cast<Eigen::Index>(id)).norm();
    if (aux.covers(static_cast<TokenId>(id))) ASSERT_NEAR(n, 1.0, 1e-9);
    else ASSERT_EQ(n, 0.0);
  }
  std::vector<bool> seen(v.size(), false);
  for (const auto& doc : corpus)
    for (TokenId id : encode(v, doc).ids) seen[static_cast<std::size_t>(id)] = true;
  for (std::size_t id = 0; id < v.size(); ++id) EXPECT_EQ(aux.covers(static_cast<TokenId>(id)), seen[id]) << id;
  const auto again = aux_embeddings(corpus, v, {.dim = 8, .window = 2});
  EXPECT_EQ(aux.matrix, again.matrix);
  EXPECT_THROW(aux_embeddings({}, v), Error);
  EXPECT_THROW(aux_embeddings(corpus, v, {.dim = 0}), Error);
}

TEST(AuxEmbeddings, FileFormat) {
  const auto path = std::filesystem::temp_directory_path() / "mattforge_aux.txt";
  std::ofstream(path) << "0 2 3 4\n2 2 0 -5\n";
  const auto aux = load_aux_embeddings(path, 4);
  EXPECT_EQ(aux.dim, 2);
  EXPECT_TRUE(aux.covers(0));
  EXPECT_FALSE(aux.covers(1));
  EXPECT_NEAR(aux.matrix(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(aux.matrix(2, 1), -1.0, 1e-12);
  std::ofstream(path) << "0 2 1 1\n1 3 1 1 1\n";
  EXPECT_THROW(load_aux_embeddings(path, 4), Error);
  std::ofstream(path) << "9 2 1 1\n";
  EXPECT_THROW(load_aux_embeddings(path, 4), Error);
  std::filesystem::remove(path);
}

TEST(InitStrategy, Names) {
  for (auto s : {InitStrategy::FocusLite, InitStrategy::Mean, InitStrategy::Random}) {
    EXPECT_EQ(parse_init_strategy(to_string(s)), s);
  }
  EXPECT_EQ(parse_init_strategy("focus-lite"), InitStrategy::FocusLite);
  EXPECT_THROW(parse_init_strategy("focus"), Error);
}
