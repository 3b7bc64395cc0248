#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "gcpc/losses.hpp"
#include "oracles.hpp"

using namespace gcpc;

namespace {

ParameterStore heads(std::size_t K, std::size_t target_dim, std::size_t context_dim, std::mt19937_64& rng,
                     const std::string& prefix = "heads") {
  ParameterStore p;
  for (std::size_t k = 1; k <= K; ++k) {
    p.add(prefix + ".k" + std::to_string(k) + ".W", oracle::random_matrix(target_dim, context_dim, rng, 0.5));
    p.add(prefix + ".k" + std::to_string(k) + ".b", oracle::random_vector(target_dim, rng, 0.1));
  }
  return p;
}

}  // namespace

TEST(Negatives, ForcedCases) {
  EXPECT_EQ(sample_negatives(2, 1, 1, 7), (std::vector<std::size_t>{0}));
  auto v = sample_negatives(5, 2, 4, 123);
  std::sort(v.begin(), v.end());
  EXPECT_EQ(v, (std::vector<std::size_t>{0, 1, 3, 4}));
}

TEST(Negatives, DistinctAndReproducible) {
  auto a = sample_negatives(10, 5, 4, 99);
  auto b = sample_negatives(10, 5, 4, 99);
  EXPECT_EQ(a, b);
  std::set<std::size_t> s(a.begin(), a.end());
  EXPECT_EQ(s.size(), 4u);
  EXPECT_FALSE(s.count(5));
  for (auto i : a) EXPECT_LT(i, 10u);
}

TEST(Negatives, WithReplacementWhenUtteranceIsShort) {
  auto v = sample_negatives(3, 0, 8, 5);
  EXPECT_EQ(v.size(), 8u);
  for (auto i : v) EXPECT_TRUE(i == 1 || i == 2);
  EXPECT_THROW(sample_negatives(1, 0, 1, 5), ContractError);
}

TEST(Negatives, SharedAcrossStepsByDefault) {
  ContrastiveConfig cfg;
  cfg.n_neg = 3;
  const auto k1 = sample_step_negatives(12, 1, cfg, 42);
  const auto k2 = sample_step_negatives(12, 2, cfg, 42);
  // Same shuffled order per anchor; only the excluded positive differs.
  for (std::size_t t = 0; t < k2.size(); ++t) {
    std::vector<std::size_t> a = k1[t], b = k2[t];
    std::erase(a, t + 2);
    std::erase(b, t + 1);
    const std::size_t n = std::min(a.size(), b.size());
    EXPECT_TRUE(std::equal(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n), b.begin())) << "anchor " << t;
  }
}

TEST(InfoNCE, UniformScoresGiveLogOfCandidates) {
  ParameterStore p;
  p.add("heads.k1.W", Tensor::zeros({2, 2}));
  p.add("heads.k1.b", Tensor::zeros({2}));
  Graph g;
  std::mt19937_64 rng(1);
  Var z = g.constant(oracle::random_matrix(6, 2, rng));
  NegativeIndexSet negs(5);
  for (std::size_t t = 0; t < 5; ++t) negs[t] = sample_negatives(6, t + 1, 3, t);
  EXPECT_NEAR(infonce_step_loss(g, z, z, p, "heads", 1, 1, 0.1, negs).value().item(), std::log(4.0), 1e-15);
}

TEST(InfoNCE, DominantPositiveGivesZero) {
  ParameterStore p;
  p.add("heads.k1.W", Tensor::matrix(1, 1, {1.0}));
  p.add("heads.k1.b", Tensor::zeros({1}));
  Graph g;
  // score margin (20 - 0) / 0.1 = 200
  Var targets = g.constant(Tensor::matrix(2, 1, {0, 20}));
  Var contexts = g.constant(Tensor::matrix(2, 1, {1, 1}));
  EXPECT_LT(infonce_step_loss(g, targets, contexts, p, "heads", 1, 1, 0.1, {{0}}).value().item(), 1e-40);
}

TEST(InfoNCE, SmallCaseMatchesDirectFormula) {
  std::mt19937_64 rng(3);
  auto p = heads(1, 2, 2, rng);
  const Tensor z = Tensor::matrix(3, 2, {0.1, -0.2, 0.4, 0.3, -0.5, 0.2});
  const Tensor c = Tensor::matrix(3, 2, {0.3, 0.1, -0.2, 0.6, 0.05, -0.4});
  const NegativeIndexSet negs{{0, 2}, {0, 1}};
  Graph g;
  const double got = infonce_step_loss(g, g.constant(z), g.constant(c), p, "heads", 1, 1, 0.1, negs).value().item();
  EXPECT_NEAR(got, oracle::infonce_step(z, c, p.get("heads.k1.W"), p.get("heads.k1.b"), 1, 0.1, negs), 1e-13);
}

TEST(InfoNCE, PositiveExcludedFromDenominator) {
  std::mt19937_64 rng(4);
  auto p = heads(1, 3, 3, rng);
  const Tensor z = oracle::random_matrix(5, 3, rng), c = oracle::random_matrix(5, 3, rng);
  NegativeIndexSet negs(4);
  for (std::size_t t = 0; t < 4; ++t) negs[t] = sample_negatives(5, t + 1, 2, 10 + t);
  double expect = 0.0;
  for (std::size_t t = 0; t < 4; ++t) {
    auto h = oracle::affine(p.get("heads.k1.W"), p.get("heads.k1.b"), &c.data()[t * 3]);
    const double pos = oracle::dot(&z.data()[(t + 1) * 3], h.data(), 3) / 0.2;
    std::vector<double> s;
    for (auto j : negs[t]) s.push_back(oracle::dot(&z.data()[j * 3], h.data(), 3) / 0.2);
    expect += -(pos - oracle::lse(s));
  }
  Graph g;
  EXPECT_NEAR(infonce_step_loss(g, g.constant(z), g.constant(c), p, "heads", 1, 1, 0.2, negs, false).value().item(),
              expect / 4.0, 1e-13);
}

TEST(Contrastive, SingleStepReducesToStepLoss) {
  std::mt19937_64 rng(5);
  auto p = heads(1, 3, 4, rng);
  const Tensor z = oracle::random_matrix(7, 3, rng), c = oracle::random_matrix(7, 4, rng);
  ContrastiveConfig cfg;
  cfg.K = 1;
  cfg.n_neg = 4;
  Graph g;
  Var zt = g.constant(z), ct = g.constant(c);
  const double full = contrastive_loss(g, zt, ct, p, "heads", cfg, 77).value().item();
  const double step =
      infonce_step_loss(g, zt, ct, p, "heads", 1, 1, cfg.kappa, sample_step_negatives(7, 1, cfg, 77)).value().item();
  EXPECT_EQ(full, step);
}

TEST(Contrastive, MatchesDoubleSumOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = heads(2, 3, 4, rng);
    const Tensor z = oracle::random_matrix(6, 3, rng, 0.5), c = oracle::random_matrix(6, 4, rng, 0.5);
    ContrastiveConfig cfg;
    cfg.K = 2;
    cfg.n_neg = 3;
    cfg.resample_per_step = trial % 2 == 1;
    Graph g;
    const double got = contrastive_loss(g, g.constant(z), g.constant(c), p, "heads", cfg, 100 + trial).value().item();
    double expect = 0.0;
    for (std::size_t k = 1; k <= 2; ++k) {
      NegativeIndexSet negs(6 - k);
      for (std::size_t t = 0; t + k < 6; ++t)
        negs[t] = sample_negatives(6, t + k, 3, negative_seed(100 + trial, t, cfg.resample_per_step ? k : 0));
      expect += oracle::infonce_step(z, c, p.get("heads.k" + std::to_string(k) + ".W"),
                                     p.get("heads.k" + std::to_string(k) + ".b"), k, cfg.kappa, negs);
    }
    EXPECT_NEAR(got, expect / 2.0, 1e-12);
  }
}

TEST(Contrastive, ShortUtterances) {
  std::mt19937_64 rng(7);
  auto p = heads(4, 2, 2, rng);
  ContrastiveConfig cfg;
  Graph g;
  Var z = g.constant(oracle::random_matrix(3, 2, rng));
  EXPECT_THROW(contrastive_loss(g, z, z, p, "heads", cfg, 1), ContractError);
  // Partial mode averages over the two steps a 3-frame utterance supports.
  const double partial = contrastive_loss(g, z, z, p, "heads", cfg, 1, true).value().item();
  double expect = 0.0;
  for (std::size_t k = 1; k <= 2; ++k)
    expect += infonce_step_loss(g, z, z, p, "heads", k, 4, cfg.kappa, sample_step_negatives(3, k, cfg, 1)).value().item();
  EXPECT_NEAR(partial, expect / 2.0, 1e-15);
}

TEST(Contrastive, TemperatureIdentity) {
  std::mt19937_64 rng(8);
  auto p = heads(2, 3, 3, rng);
  const Tensor z = oracle::random_matrix(8, 3, rng);
  Tensor z3 = z;
  for (auto& v : z3.mutable_data()) v *= 3.0;
  const Tensor c = oracle::random_matrix(8, 3, rng);
  ContrastiveConfig a;
  a.K = 2;
  a.kappa = 0.3;
  ContrastiveConfig b = a;
  b.kappa = 0.1;
  Graph g;
  const double la = contrastive_loss(g, g.constant(z3), g.constant(c), p, "heads", a, 5).value().item();
  const double lb = contrastive_loss(g, g.constant(z), g.constant(c), p, "heads", b, 5).value().item();
  EXPECT_NEAR(la, lb, 1e-12 * std::abs(lb));
}

TEST(Contrastive, GuidedWithIdentityEncoderEqualsRegular) {
  std::mt19937_64 rng(9);
  auto p = heads(3, 4, 5, rng);
  const auto guided_heads = heads(3, 4, 5, rng, "gheads");
  for (const auto& e : guided_heads.entries()) p.add(e.name, e.value);
  // copy heads so both modes score with the same weights
  for (std::size_t k = 1; k <= 3; ++k) {
    p.set("gheads.k" + std::to_string(k) + ".W", p.get("heads.k" + std::to_string(k) + ".W"));
    p.set("gheads.k" + std::to_string(k) + ".b", p.get("heads.k" + std::to_string(k) + ".b"));
  }
  EncoderTopology topo;
  topo.guidance.widths.clear();
  const Tensor z = oracle::random_matrix(9, 4, rng), c = oracle::random_matrix(9, 5, rng);
  ContrastiveConfig cfg;
  cfg.K = 3;
  Graph g;
  Var zt = g.constant(z), ct = g.constant(c);
  const double regular = contrastive_loss(g, zt, ct, p, "heads", cfg, 31).value().item();
  ContrastiveConfig guided = cfg;
  guided.target_mode = TargetMode::Guidance;
  const double gl = contrastive_loss(g, run_guidance(g, zt, p, topo), ct, p, "gheads", guided, 31).value().item();
  EXPECT_EQ(regular, gl);
}

TEST(JointContrastive, Additivity) {
  Graph g;
  EXPECT_EQ(joint_contrastive_loss(g, g.constant(Tensor::scalar(1.0)), g.constant(Tensor::scalar(2.0))).value().item(), 3.0);
  EXPECT_THROW(joint_contrastive_loss(g, g.constant(Tensor::vector({1.0, 2.0})), g.constant(Tensor::scalar(1.0))),
               ContractError);
}

TEST(JointContrastive, UniformGuidedComponentAddsLogCandidates) {
  std::mt19937_64 rng(10);
  auto p = heads(2, 3, 3, rng);
  p.add("gheads.k1.W", Tensor::zeros({3, 3}));
  p.add("gheads.k1.b", Tensor::zeros({3}));
  p.add("gheads.k2.W", Tensor::zeros({3, 3}));
  p.add("gheads.k2.b", Tensor::zeros({3}));
  ContrastiveConfig cfg;
  cfg.K = 2;
  cfg.n_neg = 5;
  Graph g;
  Var z = g.constant(oracle::random_matrix(10, 3, rng)), c = g.constant(oracle::random_matrix(10, 3, rng));
  Var reg = contrastive_loss(g, z, c, p, "heads", cfg, 3);
  Var gd = contrastive_loss(g, z, c, p, "gheads", cfg, 3);
  EXPECT_NEAR(joint_contrastive_loss(g, reg, gd).value().item(), reg.value().item() + std::log(6.0), 1e-14);
}

TEST(FrameCrossEntropy, LimitsAndHandValue) {
  Graph g;
  std::vector<double> peaked(2 * 3, 0.0);
  peaked[0 * 3 + 1] = 200;
  peaked[1 * 3 + 2] = 200;
  EXPECT_LT(frame_cross_entropy(g, g.constant(Tensor::matrix(2, 3, peaked)), {1, 2}).value().item(), 1e-80);
  EXPECT_NEAR(frame_cross_entropy(g, g.constant(Tensor::zeros({4, 5})), {0, 1, 2, 4}).value().item(), std::log(5.0), 1e-15);
  const Tensor lg = Tensor::matrix(2, 3, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  const double a = -(2.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
  const double b = -(-1.0 - std::log(std::exp(-1.0) + std::exp(0.0) + std::exp(3.0)));
  EXPECT_NEAR(frame_cross_entropy(g, g.constant(lg), {1, 0}).value().item(), (a + b) / 2.0, 1e-14);
  EXPECT_THROW(frame_cross_entropy(g, g.constant(lg), {1, 3}), ContractError);
}

TEST(Rnnt, ForcedPaths) {
  std::mt19937_64 rng(11);
  const Tensor one = oracle::random_lattice(1, 0, 3, rng);
  Graph g;
  EXPECT_NEAR(rnnt_loss(g, g.constant(one), 1, {}, 2).value().item(), -one.at(0, 2), 1e-15);
  EXPECT_NEAR(rnnt_brute_force(one, 1, {}, 2), -one.at(0, 2), 1e-15);

  const Tensor two = oracle::random_lattice(1, 1, 3, rng);
  EXPECT_NEAR(rnnt_loss(g, g.constant(two), 1, {0}, 2).value().item(), -(two.at(0, 0) + two.at(1, 2)), 1e-14);

  const Tensor blanks = oracle::random_lattice(2, 0, 3, rng);
  EXPECT_NEAR(rnnt_brute_force(blanks, 2, {}, 2), -(blanks.at(0, 2) + blanks.at(1, 2)), 1e-14);
}

TEST(Rnnt, MatchesPathEnumeration) {
  std::mt19937_64 rng(12);
  for (std::size_t T = 1; T <= 4; ++T)
    for (std::size_t U = 0; U <= 3; ++U)
      for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::uint16_t> y(U);
        for (auto& v : y) v = static_cast<std::uint16_t>(rng() % 3);
        const Tensor lp = oracle::random_lattice(T, U, 4, rng);
        Graph g;
        EXPECT_NEAR(rnnt_loss(g, g.constant(lp), T, y, 3).value().item(), rnnt_brute_force(lp, T, y, 3), 1e-10);
      }
}

TEST(Rnnt, ContractViolations) {
  std::mt19937_64 rng(13);
  const Tensor lp = oracle::random_lattice(2, 1, 3, rng);
  Graph g;
  EXPECT_THROW(rnnt_loss(g, g.constant(lp), 3, {0}, 2), DimensionError);
  EXPECT_THROW(rnnt_loss(g, g.constant(lp), 2, {2}, 2), ContractError);
  EXPECT_THROW(rnnt_loss(g, g.constant(Tensor::zeros({4, 3})), 2, {0}, 2), ContractError);
  EXPECT_THROW(rnnt_brute_force(oracle::random_lattice(7, 0, 3, rng), 7, {}, 2), ContractError);
}
