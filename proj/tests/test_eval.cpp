#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gcpc/eval.hpp"
#include "oracles.hpp"

using namespace gcpc;

namespace {

// Vocabulary {0, 1}, blank 2; joint width 1 so the output logits are
// s·out.W + out.b with s = tanh(pred.W·h + joint.b). The encoder is cut off.
TransducerModel wired_model() {
  EncoderTopology enc;
  enc.feature_dim = 2;
  enc.dense = {{3}, true};
  enc.lstm_width = 3;
  std::mt19937_64 rng(1);
  TransducerModel m = make_transducer(enc, TransducerTopology{2, 2, 1}, 2, rng);
  for (auto& e : m.params.entries())
    if (e.name.rfind("pred.", 0) == 0 || e.name.rfind("joint.", 0) == 0) e.value = Tensor::zeros(e.value.shape());
  return m;
}

Tensor frames(std::size_t T) { return Tensor::zeros({T, 2}); }

}  // namespace

TEST(GreedyDecode, AlwaysBlankGivesEmpty) {
  auto m = wired_model();
  m.params.set("joint.out.b", Tensor::vector({0, 0, 3}));
  EXPECT_TRUE(greedy_decode(m, frames(5)).empty());
}

TEST(GreedyDecode, SingleTokenThenBlanks) {
  auto m = wired_model();
  // Embedding of token 0 drives the prediction LSTM; the start symbol leaves it at zero.
  m.params.set("pred.embed", Tensor::matrix(3, 2, {1, 0, 0, 0, 0, 0}));
  std::vector<double> wx(8 * 2, 0.0);
  for (std::size_t gate : {0u, 4u, 6u}) wx[gate * 2] = 5.0;  // i, g, o of unit 0
  m.params.set("pred.lstm0.Wx", Tensor::matrix(8, 2, wx));
  m.params.set("joint.pred.W", Tensor::matrix(1, 2, {10, 0}));
  m.params.set("joint.out.W", Tensor::matrix(3, 1, {-5, 0, 5}));
  m.params.set("joint.out.b", Tensor::vector({1, 0, 0}));
  EXPECT_EQ(greedy_decode(m, frames(4)), (TokenSequence{0}));
}

TEST(GreedyDecode, EmissionCapBoundsOutput) {
  auto m = wired_model();
  m.params.set("joint.out.b", Tensor::vector({2, 0, 0}));
  for (std::size_t cap : {1u, 3u}) {
    const auto hyp = greedy_decode(m, frames(6), cap);
    EXPECT_EQ(hyp.size(), 6 * cap);
  }
}

TEST(EditDistance, Examples) {
  EXPECT_EQ(align_and_count_errors({0, 1, 2}, {0, 1, 2}), (AlignmentCounts{0, 0, 0, 3}));
  EXPECT_EQ(align_and_count_errors({0, 1, 2}, {0, 2}), (AlignmentCounts{0, 0, 1, 3}));
  EXPECT_EQ(align_and_count_errors({0, 1}, {0, 5, 1}), (AlignmentCounts{0, 1, 0, 2}));
  EXPECT_EQ(align_and_count_errors({}, {1, 1}), (AlignmentCounts{0, 2, 0, 0}));
  EXPECT_EQ(align_and_count_errors({1, 1}, {}), (AlignmentCounts{0, 0, 2, 2}));
}

TEST(EditDistance, ExhaustiveOracleSmallAlphabet) {
  const auto seqs = oracle::all_sequences(4, 3);
  for (const auto& a : seqs)
    for (const auto& b : seqs) {
      const auto c = align_and_count_errors(a, b);
      ASSERT_EQ(c.errors(), oracle::exhaustive_edit_distance(a, 0, b, 0));
      ASSERT_EQ(c.ref_length, a.size());
      // Every reference token is either matched, substituted or deleted.
      ASSERT_EQ(b.size() + c.deletions, a.size() + c.insertions);
    }
}

TEST(Wer, FormulaAndRelativeReduction) {
  EXPECT_DOUBLE_EQ(word_error_rate({1, 0, 1, 10}), 0.2);
  EXPECT_THROW(word_error_rate({0, 0, 0, 0}), NumericError);
  const AlignmentCounts base{10, 5, 5, 100}, sys{9, 5, 4, 100};
  const auto r = compute_wer_werr(sys, base);
  EXPECT_NEAR(*r.werr, 10.0, 1e-12);
  EXPECT_NEAR(*r.subr, 10.0, 1e-12);
  EXPECT_NEAR(*r.insr, 0.0, 1e-12);
  EXPECT_NEAR(*r.delr, 20.0, 1e-12);
  EXPECT_EQ(*compute_wer_werr(base, base).werr, 0.0);
  const auto no_ins = compute_wer_werr({1, 2, 0, 10}, {1, 0, 1, 10});
  EXPECT_FALSE(no_ins.insr.has_value());
  EXPECT_THROW(compute_wer_werr(sys, {0, 0, 0, 100}), NumericError);
}

TEST(Pca, TwoDimensionalDataIsRotated) {
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_matrix(40, 2, rng);
  const auto r = pca_project(x, 2);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double dx = std::hypot(x.at(i, 0) - x.at(j, 0), x.at(i, 1) - x.at(j, 1));
      const double dp = std::hypot(r.projection.at(i, 0) - r.projection.at(j, 0), r.projection.at(i, 1) - r.projection.at(j, 1));
      ASSERT_NEAR(dx, dp, 1e-9);
    }
}

TEST(Pca, CollinearDataHasOneComponent) {
  std::vector<double> v;
  for (int i = 0; i < 20; ++i)
    for (double d : {1.0, -2.0, 0.5}) v.push_back(d * (i - 7.5));
  const auto r = pca_project(Tensor::matrix(20, 3, v), 2);
  EXPECT_NEAR(r.explained_variance[0] / r.total_variance, 1.0, 1e-12);
  EXPECT_NEAR(r.explained_variance[1], 0.0, 1e-9);
}

TEST(Pca, RecoversLeadingAxesOfDiagonalGaussian) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  const double sd[5] = {std::sqrt(5.0), 2.0, std::sqrt(3.0), std::sqrt(2.0), 1.0};
  std::vector<double> v;
  for (int i = 0; i < 20000; ++i)
    for (double s : sd) v.push_back(s * n(rng));
  const auto r = pca_project(Tensor::matrix(20000, 5, v), 2);
  EXPECT_GT(std::abs(r.components.at(0, 0)), 0.95);
  EXPECT_GT(std::abs(r.components.at(1, 1)), 0.95);
  EXPECT_NEAR(r.explained_variance[0], 5.0, 0.25);
  EXPECT_NEAR(r.explained_variance[1], 4.0, 0.25);
  for (std::size_t k = 0; k < 2; ++k) {
    double best = 0.0;
    for (std::size_t j = 0; j < 5; ++j)
      if (std::abs(r.components.at(k, j)) > std::abs(best)) best = r.components.at(k, j);
    EXPECT_GT(best, 0.0);
  }
}

TEST(Fisher, TwoUnitClassesAtPlusMinusOne) {
  // Each class is {m-1, m+1}: within-class variance 1, between-class variance 1.
  const EmbeddingMatrix e{Tensor::matrix(4, 1, {-2, 0, 0, 2}), {0, 0, 1, 1}};
  EXPECT_NEAR(fisher_ratio(e), 1.0, 1e-12);
}

TEST(Fisher, IdenticalClassMeansGiveZero) {
  const EmbeddingMatrix e{Tensor::matrix(4, 2, {1, 0, -1, 0, 0, 1, 0, -1}), {0, 0, 1, 1}};
  EXPECT_NEAR(fisher_ratio(e), 0.0, 1e-12);
}

TEST(Fisher, InvariantToTranslationAndRotation) {
  std::mt19937_64 rng(4);
  std::vector<std::uint16_t> labels;
  std::vector<double> v;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const auto c = static_cast<std::uint16_t>(i % 3);
    labels.push_back(c);
    for (int j = 0; j < 3; ++j) v.push_back(n(rng) + (j == c ? 2.0 : 0.0));
  }
  const Tensor x = Tensor::matrix(300, 3, v);
  const double base = fisher_ratio({x, labels});
  // rotation about the z axis by 0.7 rad plus a shift
  const double cs = std::cos(0.7), sn = std::sin(0.7);
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < 300; ++i) {
    w[i * 3 + 0] = cs * v[i * 3] - sn * v[i * 3 + 1] + 10.0;
    w[i * 3 + 1] = sn * v[i * 3] + cs * v[i * 3 + 1] - 4.0;
    w[i * 3 + 2] = v[i * 3 + 2] + 1.5;
  }
  EXPECT_NEAR(fisher_ratio({Tensor::matrix(300, 3, w), labels}), base, 1e-9);
}

TEST(Fisher, ContractViolations) {
  EXPECT_THROW(fisher_ratio({Tensor::matrix(3, 1, {1, 2, 3}), {0, 0, 0}}), ContractError);
  EXPECT_THROW(fisher_ratio({Tensor::matrix(3, 1, {1, 2, 3}), {0, 1}}), DimensionError);
}

TEST(Fisher, GrowsAsMeansSeparate) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> noise;
  std::vector<std::uint16_t> labels;
  for (int i = 0; i < 100; ++i) {
    noise.push_back(n(rng));
    noise.push_back(n(rng));
    labels.push_back(static_cast<std::uint16_t>(i % 2));
  }
  double prev = -1.0;
  for (double gap : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    std::vector<double> v = noise;
    for (int i = 0; i < 100; ++i) v[i * 2] += labels[i] ? gap : -gap;
    const double f = fisher_ratio({Tensor::matrix(100, 2, v), labels});
    EXPECT_GT(f, prev) << "gap " << gap;
    prev = f;
  }
}
