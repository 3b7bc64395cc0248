#pragma once

// Training objectives: InfoNCE per prediction step, the K-step contrastive
// average (latent or guidance targets), the joint contrastive sum, frame
// cross-entropy, and the transducer loss with a path-enumeration oracle.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gcpc/nets.hpp"
#include "gcpc/numcore.hpp"

namespace gcpc {

enum class TargetMode { Latent, Guidance };

struct ContrastiveConfig {
  std::size_t K = 4;
  double kappa = 0.1;
  std::size_t n_neg = 8;
  TargetMode target_mode = TargetMode::Latent;
  bool resample_per_step = false;  // false: one draw per anchor shared by all steps
  bool positive_in_denominator = true;

  void validate() const {
    if (K < 1) throw ContractError("contrastive K must be >= 1");
    if (!(kappa > 0.0)) throw ContractError("contrastive temperature must be > 0");
    if (n_neg < 1) throw ContractError("contrastive n_neg must be >= 1");
  }
};

/// Negative frame indices per anchor t (row t covers anchor t).
using NegativeIndexSet = std::vector<std::vector<std::size_t>>;

// ---------------------------------------------------------------------------
// Negative sampling

/// Seed for the draw at anchor `t`; `k` only matters when draws are per step.
inline std::uint64_t negative_seed(std::uint64_t base, std::size_t t, std::size_t k) {
  std::uint64_t x = base ^ (0x9E3779B97F4A7C15ULL * (t + 1)) ^ (0xC2B2AE3D27D4EB4FULL * (k + 1));
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDULL;
  x ^= x >> 33;
  return x;
}

/// n_neg frame indices from [0, T) other than `exclude`. Without replacement
/// when T-1 >= n_neg (a shuffled frame order with `exclude` skipped, so two
/// calls with the same seed and different `exclude` share their draws),
/// otherwise uniform with replacement.
inline std::vector<std::size_t> sample_negatives(std::size_t T, std::size_t exclude, std::size_t n_neg,
                                                 std::uint64_t seed) {
  if (T < 2) throw ContractError("sample_negatives: need at least 2 frames, got " + std::to_string(T));
  if (exclude >= T) throw ContractError("sample_negatives: positive index outside the utterance");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  out.reserve(n_neg);
  if (T - 1 >= n_neg) {
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = T - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(rng)]);
    }
    for (std::size_t idx : order) {
      if (idx == exclude) continue;
      out.push_back(idx);
      if (out.size() == n_neg) break;
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, T - 2);
    for (std::size_t i = 0; i < n_neg; ++i) {
      const std::size_t r = pick(rng);
      out.push_back(r >= exclude ? r + 1 : r);
    }
  }
  return out;
}

/// Negatives for every anchor t ∈ [0, T-k) of step k.
inline NegativeIndexSet sample_step_negatives(std::size_t T, std::size_t k, const ContrastiveConfig& cfg,
                                              std::uint64_t seed) {
  if (T <= k) throw ContractError("no valid anchors: T=" + std::to_string(T) + ", k=" + std::to_string(k));
  NegativeIndexSet out(T - k);
  for (std::size_t t = 0; t + k < T; ++t)
    out[t] = sample_negatives(T, t + k, cfg.n_neg, negative_seed(seed, t, cfg.resample_per_step ? k : 0));
  return out;
}

// ---------------------------------------------------------------------------
// Contrastive losses

/// L_k = -(1/(T-k)) Σ_t log softmax over candidates of target·h_k(c_t)/κ, the
/// positive candidate being target_{t+k}. Computed in the log domain.
inline Var infonce_step_loss(Graph& g, Var targets, Var contexts, const ParameterStore& store,
                             const std::string& heads_prefix, std::size_t k, std::size_t K, double kappa,
                             const NegativeIndexSet& negatives, bool positive_in_denominator = true) {
  const std::size_t T = targets.rows();
  if (contexts.rows() != T) throw DimensionError("infonce: targets and contexts differ in length");
  if (k < 1 || k > K) throw ContractError("infonce: step " + std::to_string(k) + " outside 1.." + std::to_string(K));
  if (T <= k) throw ContractError("infonce: no valid anchors for T=" + std::to_string(T) + ", k=" + std::to_string(k));
  if (!(kappa > 0.0)) throw ContractError("infonce: temperature must be > 0");
  const std::size_t anchors = T - k;
  if (negatives.size() != anchors) throw DimensionError("infonce: one negative list per anchor expected");
  const std::size_t n_neg = negatives.front().size();
  if (n_neg == 0) throw ContractError("infonce: empty negative set");

  Var preds = apply_step_head(g, g.slice_rows(contexts, 0, anchors), k, K, store, heads_prefix);
  Var scores = g.scale(g.matmul_nt(preds, targets), 1.0 / kappa);  // [anchors × T]

  std::vector<std::size_t> idx;
  idx.reserve(anchors * (n_neg + 1));
  for (std::size_t t = 0; t < anchors; ++t) {
    if (negatives[t].size() != n_neg) throw DimensionError("infonce: ragged negative lists");
    idx.push_back(t + k);
    for (std::size_t j : negatives[t]) {
      if (j >= T || j == t + k) throw ContractError("infonce: invalid negative index");
      idx.push_back(j);
    }
  }
  Var cand = g.gather_cols(scores, std::move(idx), n_neg + 1);
  const std::vector<std::size_t> first(anchors, 0);
  Var log_ratio = g.pick(g.log_softmax(cand), first);
  if (!positive_in_denominator) {
    // s_pos - lse(negatives) = (s_pos - s_neg0) + log_softmax(negatives)[0]
    Var negs = g.slice_cols(cand, 1, n_neg + 1);
    Var neg_first = g.pick(negs, first);
    Var pos = g.pick(cand, first);
    log_ratio = g.add(g.sub(pos, neg_first), g.pick(g.log_softmax(negs), first));
  }
  return g.scale(g.mean(log_ratio), -1.0);
}

/// Average of L_k over k = 1..K; requires T > K. With `partial` set, steps
/// the utterance is too short for are skipped and the average runs over the
/// supported ones (T ≥ 2 still required).
inline Var contrastive_loss(Graph& g, Var targets, Var contexts, const ParameterStore& store,
                            const std::string& heads_prefix, const ContrastiveConfig& cfg, std::uint64_t seed,
                            bool partial = false) {
  cfg.validate();
  const std::size_t T = targets.rows();
  if (!partial && T <= cfg.K)
    throw ContractError("contrastive_loss: utterance of length " + std::to_string(T) + " too short for K=" +
                        std::to_string(cfg.K));
  const std::size_t steps = std::min(cfg.K, T == 0 ? 0 : T - 1);
  if (steps == 0) throw ContractError("contrastive_loss: utterance too short for any prediction step");
  std::vector<Var> per_step;
  per_step.reserve(steps);
  for (std::size_t k = 1; k <= steps; ++k) {
    const auto negs = sample_step_negatives(T, k, cfg, seed);
    per_step.push_back(infonce_step_loss(g, targets, contexts, store, heads_prefix, k, cfg.K, cfg.kappa, negs,
                                         cfg.positive_in_denominator));
  }
  return g.scale(g.add_scalars(per_step), 1.0 / static_cast<double>(steps));
}

/// L_C^joint = L_C + L_C^guided.
inline Var joint_contrastive_loss(Graph& g, Var regular, Var guided) {
  if (regular.value().size() != 1 || guided.value().size() != 1)
    throw ContractError("joint_contrastive_loss: components must be scalars");
  return g.add(regular, guided);
}

// ---------------------------------------------------------------------------
// Frame cross-entropy

/// Mean over frames of -log_softmax(logits)[label].
inline Var frame_cross_entropy(Graph& g, Var logits, const std::vector<std::uint16_t>& labels) {
  if (labels.size() != logits.rows()) throw DimensionError("frame_cross_entropy: one label per frame expected");
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= logits.cols())
      throw ContractError("frame_cross_entropy: label " + std::to_string(labels[i]) + " outside [0," +
                          std::to_string(logits.cols()) + ")");
    idx[i] = labels[i];
  }
  return g.scale(g.mean(g.pick(g.log_softmax(logits), std::move(idx))), -1.0);
}

// ---------------------------------------------------------------------------
// Transducer loss

/// View of a [(T·(U+1)) × (V+1)] log-probability table, rows t-major.
struct LatticeView {
  const Tensor& logprobs;
  std::size_t T;
  std::size_t U;
  std::size_t blank;
  const std::vector<std::uint16_t>& labels;

  double blank_lp(std::size_t t, std::size_t u) const { return logprobs.at(t * (U + 1) + u, blank); }
  double label_lp(std::size_t t, std::size_t u) const { return logprobs.at(t * (U + 1) + u, labels[u]); }
};

inline void check_lattice(const Tensor& logprobs, std::size_t T, const std::vector<std::uint16_t>& labels,
                          std::size_t blank) {
  const std::size_t U = labels.size();
  if (T == 0) throw ContractError("transducer loss: empty input sequence");
  if (logprobs.rank() != 2 || logprobs.rows() != T * (U + 1) || blank >= logprobs.cols())
    throw DimensionError("transducer loss: expected [T(U+1) × (V+1)] table, got " + shape_str(logprobs.shape()));
  for (auto y : labels)
    if (y >= logprobs.cols() || y == blank) throw ContractError("transducer loss: label outside vocabulary");
  for (std::size_t r = 0; r < logprobs.rows(); ++r) {
    const double lse = logsumexp(logprobs.data().subspan(r * logprobs.cols(), logprobs.cols()));
    if (std::abs(lse) > 1e-8) throw ContractError("transducer loss: lattice node is not a normalized log-distribution");
  }
}

/// Forward table α, [T × (U+1)], log domain, α(0,0) = 0.
inline std::vector<double> transducer_alpha(const LatticeView& L) {
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> a(L.T * (L.U + 1), ninf);
  for (std::size_t t = 0; t < L.T; ++t)
    for (std::size_t u = 0; u <= L.U; ++u) {
      if (t == 0 && u == 0) {
        a[0] = 0.0;
        continue;
      }
      double v = ninf;
      if (t > 0) v = a[(t - 1) * (L.U + 1) + u] + L.blank_lp(t - 1, u);
      if (u > 0) v = logaddexp(v, a[t * (L.U + 1) + u - 1] + L.label_lp(t, u - 1));
      a[t * (L.U + 1) + u] = v;
    }
  return a;
}

/// -log P(labels | x) marginalized over every blank-augmented alignment, with
/// the analytic forward-backward gradient attached to `logprobs`.
inline Var rnnt_loss(Graph& g, Var logprobs, std::size_t T, const std::vector<std::uint16_t>& labels,
                     std::size_t blank) {
  const Tensor& lp = logprobs.value();
  check_lattice(lp, T, labels, blank);
  const LatticeView L{lp, T, labels.size(), blank, labels};
  const std::size_t U = L.U, W = U + 1;
  const double ninf = -std::numeric_limits<double>::infinity();

  const auto alpha = transducer_alpha(L);
  const double log_p = alpha[(T - 1) * W + U] + L.blank_lp(T - 1, U);

  // β(t,u): log-probability of finishing from node (t,u), final blank included.
  std::vector<double> beta(T * W, ninf);
  for (std::size_t t = T; t-- > 0;)
    for (std::size_t u = W; u-- > 0;) {
      if (t == T - 1 && u == U) {
        beta[t * W + u] = L.blank_lp(t, u);
        continue;
      }
      double v = ninf;
      if (t + 1 < T) v = beta[(t + 1) * W + u] + L.blank_lp(t, u);
      if (u < U) v = logaddexp(v, beta[t * W + u + 1] + L.label_lp(t, u));
      beta[t * W + u] = v;
    }

  std::vector<double> grad(lp.size(), 0.0);
  const std::size_t V1 = lp.cols();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= U; ++u) {
      const double a = alpha[t * W + u];
      const std::size_t row = (t * W + u) * V1;
      if (t + 1 < T)
        grad[row + blank] = -std::exp(a + L.blank_lp(t, u) + beta[(t + 1) * W + u] - log_p);
      else if (u == U)
        grad[row + blank] = -std::exp(a + L.blank_lp(t, u) - log_p);
      if (u < U) grad[row + labels[u]] = -std::exp(a + L.label_lp(t, u) + beta[t * W + u + 1] - log_p);
    }
  return g.fused_scalar(logprobs, -log_p, Tensor(lp.shape(), std::move(grad)));
}

/// Path-enumeration oracle for rnnt_loss: sums the probability of every
/// monotone alignment explicitly. Limited to T ≤ 6, U ≤ 4.
inline double rnnt_brute_force(const Tensor& logprobs, std::size_t T, const std::vector<std::uint16_t>& labels,
                               std::size_t blank) {
  if (T > 6 || labels.size() > 4) throw ContractError("rnnt_brute_force: size guard exceeded (T<=6, U<=4)");
  check_lattice(logprobs, T, labels, blank);
  const LatticeView L{logprobs, T, labels.size(), blank, labels};
  // Walk every sequence of moves; a path ends with the blank emitted at (T-1, U).
  double total = 0.0;
  struct Frame {
    std::size_t t, u;
    double prob;
  };
  std::vector<Frame> stack{{0, 0, 1.0}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (f.t == T - 1 && f.u == L.U) {
      total += f.prob * std::exp(L.blank_lp(f.t, f.u));
      continue;
    }
    if (f.t + 1 < T) stack.push_back({f.t + 1, f.u, f.prob * std::exp(L.blank_lp(f.t, f.u))});
    if (f.u < L.U) stack.push_back({f.t, f.u + 1, f.prob * std::exp(L.label_lp(f.t, f.u))});
  }
  return -std::log(total);
}

}  // namespace gcpc
