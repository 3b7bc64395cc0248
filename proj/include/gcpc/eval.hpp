#pragma once

// Downstream evaluation (greedy transducer decoding, edit-distance error
// decomposition, WER/WERR) and representation analysis (PCA projection,
// Fisher class-separation ratio).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gcpc/nets.hpp"
#include "gcpc/numcore.hpp"

namespace gcpc {

using TokenSequence = std::vector<std::uint16_t>;

// ---------------------------------------------------------------------------
// Greedy decoding

/// Frame-synchronous greedy search. At each frame the argmax symbol is
/// emitted until blank wins or `max_emissions_per_frame` labels were emitted.
inline TokenSequence greedy_decode(const TransducerModel& model, const Tensor& features,
                                   std::size_t max_emissions_per_frame = 3) {
  if (features.rank() != 2 || features.rows() == 0) throw DimensionError("greedy_decode: empty features");
  Graph g;
  const auto& P = model.params;
  EncoderOutput enc = run_encoder(g, features, P, model.encoder);
  Var enc_proj = g.matmul_nt(enc.contexts, g.param(P, "joint.enc.W"));
  Var joint_pred_W = g.param(P, "joint.pred.W");
  Var joint_b = g.param(P, "joint.b");
  Var out_W = g.param(P, "joint.out.W");
  Var out_b = g.param(P, "joint.out.b");
  Var embed = g.param(P, "pred.embed");
  const LstmParams lstm = LstmParams::bind(g, P, "pred.lstm0");

  Var h = g.constant(Tensor::zeros({lstm.width}));
  Var c = h;
  std::tie(h, c) = lstm_cell_step(g, g.row(embed, model.blank()), h, c, lstm);
  Var pred_proj = g.add(g.matmul_nt(h, joint_pred_W), joint_b);

  TokenSequence hyp;
  const std::size_t T = features.rows();
  for (std::size_t t = 0; t < T; ++t) {
    Var e_t = g.row(enc_proj, t);
    for (std::size_t emitted = 0; emitted < max_emissions_per_frame; ++emitted) {
      const Tensor& logits = g.affine(g.tanh(g.add(e_t, pred_proj)), out_W, out_b).value();
      const auto best = static_cast<std::size_t>(
          std::distance(logits.data().begin(), std::max_element(logits.data().begin(), logits.data().end())));
      if (best == model.blank()) break;
      hyp.push_back(static_cast<std::uint16_t>(best));
      std::tie(h, c) = lstm_cell_step(g, g.row(embed, best), h, c, lstm);
      pred_proj = g.add(g.matmul_nt(h, joint_pred_W), joint_b);
    }
  }
  return hyp;
}

// ---------------------------------------------------------------------------
// Error counting

struct AlignmentCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const noexcept { return substitutions + insertions + deletions; }

  AlignmentCounts& operator+=(const AlignmentCounts& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    ref_length += o.ref_length;
    return *this;
  }
  friend bool operator==(const AlignmentCounts&, const AlignmentCounts&) = default;
};

/// Unit-cost Levenshtein alignment of hyp against ref. On the backtrace,
/// ties prefer substitution (or match), then insertion, then deletion.
inline AlignmentCounts align_and_count_errors(const TokenSequence& ref, const TokenSequence& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1] ? 1u : 0u), at(i, j - 1) + 1, at(i - 1, j) + 1});

  AlignmentCounts out;
  out.ref_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool differ = ref[i - 1] != hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (differ ? 1u : 0u)) {
        if (differ) ++out.substitutions;
        --i, --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++out.insertions;
      --j;
    } else {
      ++out.deletions;
      --i;
    }
  }
  return out;
}

struct WERReport {
  AlignmentCounts counts;
  double wer = 0.0;
  std::optional<double> werr;  // percent, relative to a baseline
  std::optional<double> subr;
  std::optional<double> insr;
  std::optional<double> delr;
};

inline double word_error_rate(const AlignmentCounts& c) {
  if (c.ref_length == 0) throw NumericError("WER undefined for an empty reference");
  return static_cast<double>(c.errors()) / static_cast<double>(c.ref_length);
}

/// WER of `system` plus relative reductions (percent) against `baseline`:
/// 100·(base − sys)/base overall and per error type. A per-type ratio is empty
/// when the baseline has no errors of that type.
inline WERReport compute_wer_werr(const AlignmentCounts& system, const AlignmentCounts& baseline) {
  WERReport r;
  r.counts = system;
  r.wer = word_error_rate(system);
  const double base = word_error_rate(baseline);
  if (base == 0.0) throw NumericError("WERR undefined: baseline WER is zero");
  r.werr = 100.0 * (base - r.wer) / base;
  auto rel = [&](std::size_t sys, std::size_t b) -> std::optional<double> {
    if (b == 0) return std::nullopt;
    const double rs = static_cast<double>(sys) / static_cast<double>(system.ref_length);
    const double rb = static_cast<double>(b) / static_cast<double>(baseline.ref_length);
    return 100.0 * (rb - rs) / rb;
  };
  r.subr = rel(system.substitutions, baseline.substitutions);
  r.insr = rel(system.insertions, baseline.insertions);
  r.delr = rel(system.deletions, baseline.deletions);
  return r;
}

// ---------------------------------------------------------------------------
// Representation analysis

struct EmbeddingMatrix {
  Tensor rows;  // [N × d]
  std::vector<std::uint16_t> labels;
};

struct PcaResult {
  Tensor projection;  // [N × k]
  Tensor components;  // [k × d], orthonormal rows
  std::vector<double> explained_variance;
  double total_variance = 0.0;
};

namespace detail {
inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.at(i, j);
  return m;
}
inline Tensor from_eigen(const Eigen::MatrixXd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return Tensor::matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), std::move(v));
}
}  // namespace detail

/// Projects centered rows onto the top `out_dim` covariance eigenvectors.
/// Each component is sign-fixed so its largest-magnitude coordinate is positive.
inline PcaResult pca_project(const Tensor& data, std::size_t out_dim = 2) {
  if (data.rank() != 2 || data.rows() <= out_dim) throw ContractError("pca_project: need more rows than output dims");
  if (out_dim == 0 || out_dim > data.cols()) throw ContractError("pca_project: invalid output dimension");
  Eigen::MatrixXd X = detail::to_eigen(data);
  const Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(X.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::Index d = cov.rows();
  Eigen::MatrixXd comps(static_cast<Eigen::Index>(out_dim), d);
  PcaResult r;
  for (std::size_t k = 0; k < out_dim; ++k) {
    const Eigen::Index col = d - 1 - static_cast<Eigen::Index>(k);  // eigenvalues ascend
    Eigen::VectorXd v = es.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    comps.row(static_cast<Eigen::Index>(k)) = v.transpose();
    r.explained_variance.push_back(std::max(0.0, es.eigenvalues()(col)));
  }
  r.total_variance = cov.trace();
  r.projection = detail::from_eigen(X * comps.transpose());
  r.components = detail::from_eigen(comps);
  return r;
}

/// trace(S_W⁺ S_B) with S_W the pooled within-class scatter and S_B the
/// prior-weighted between-class scatter, both normalized by N.
inline double fisher_ratio(const EmbeddingMatrix& E) {
  const Tensor& X = E.rows;
  if (E.labels.size() != X.rows()) throw DimensionError("fisher_ratio: one label per row expected");
  std::map<std::uint16_t, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < E.labels.size(); ++i) classes[E.labels[i]].push_back(i);
  if (classes.size() < 2) throw ContractError("fisher_ratio: need at least two classes");
  for (const auto& [label, idx] : classes)
    if (idx.size() < 2) throw ContractError("fisher_ratio: class " + std::to_string(label) + " has fewer than 2 samples");

  const Eigen::MatrixXd M = detail::to_eigen(X);
  const double N = static_cast<double>(M.rows());
  const Eigen::VectorXd mu = M.colwise().mean().transpose();
  const Eigen::Index d = M.cols();
  Eigen::MatrixXd Sw = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd Sb = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [label, idx] : classes) {
    Eigen::VectorXd mc = Eigen::VectorXd::Zero(d);
    for (auto i : idx) mc += M.row(static_cast<Eigen::Index>(i)).transpose();
    mc /= static_cast<double>(idx.size());
    for (auto i : idx) {
      const Eigen::VectorXd dv = M.row(static_cast<Eigen::Index>(i)).transpose() - mc;
      Sw += dv * dv.transpose();
    }
    const Eigen::VectorXd db = mc - mu;
    Sb += (static_cast<double>(idx.size()) / N) * (db * db.transpose());
  }
  Sw /= N;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Sw);
  const auto& ev = es.eigenvalues();
  const double tol = std::max(ev.cwiseAbs().maxCoeff(), 1e-300) * static_cast<double>(d) * 1e-12;
  Eigen::VectorXd inv = ev.unaryExpr([tol](double x) { return x > tol ? 1.0 / x : 0.0; });
  const Eigen::MatrixXd pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return (pinv * Sb).trace();
}

/// CSV with columns x,y,phone_label.
inline void write_projection_csv(std::ostream& out, const Tensor& projection, const std::vector<std::uint16_t>& labels) {
  out << "x,y,phone_label\n";
  out.precision(17);
  for (std::size_t i = 0; i < projection.rows(); ++i)
    out << projection.at(i, 0) << ',' << (projection.cols() > 1 ? projection.at(i, 1) : 0.0) << ',' << labels[i] << '\n';
}

}  // namespace gcpc
