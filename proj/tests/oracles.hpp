#pragma once

// Reference computations written directly from the definitions, used to check
// the library. They share nothing with the implementation beyond Tensor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "gcpc/numcore.hpp"

namespace oracle {

inline gcpc::Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return gcpc::Tensor::matrix(r, c, std::move(v));
}

inline gcpc::Tensor random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return gcpc::Tensor::vector(std::move(v));
}

inline double dot(const double* a, const double* b, std::size_t n) {
  long double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

inline double lse(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  long double s = 0;
  for (double x : v) s += std::exp(static_cast<long double>(x - m));
  return m + static_cast<double>(std::log(s));
}

/// h = W c + b for a row-major W [out × in].
inline std::vector<double> affine(const gcpc::Tensor& W, const gcpc::Tensor& b, const double* c) {
  std::vector<double> out(W.rows());
  for (std::size_t i = 0; i < W.rows(); ++i) out[i] = dot(&W.data()[i * W.cols()], c, W.cols()) + b.data()[i];
  return out;
}

/// One InfoNCE step term, straight from the sum over anchors.
inline double infonce_step(const gcpc::Tensor& targets, const gcpc::Tensor& contexts, const gcpc::Tensor& W,
                           const gcpc::Tensor& b, std::size_t k, double kappa,
                           const std::vector<std::vector<std::size_t>>& negatives) {
  const std::size_t T = targets.rows(), d = targets.cols();
  double total = 0.0;
  for (std::size_t t = 0; t + k < T; ++t) {
    const auto h = affine(W, b, &contexts.data()[t * contexts.cols()]);
    std::vector<double> s{dot(&targets.data()[(t + k) * d], h.data(), d) / kappa};
    for (auto j : negatives[t]) s.push_back(dot(&targets.data()[j * d], h.data(), d) / kappa);
    total += -(s[0] - lse(s));
  }
  return total / static_cast<double>(T - k);
}

/// Minimal edit distance by exhaustive recursion over edit operations.
inline std::size_t exhaustive_edit_distance(const std::vector<std::uint16_t>& a, std::size_t i,
                                            const std::vector<std::uint16_t>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  std::size_t best = exhaustive_edit_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  best = std::min(best, exhaustive_edit_distance(a, i + 1, b, j) + 1);
  best = std::min(best, exhaustive_edit_distance(a, i, b, j + 1) + 1);
  return best;
}

/// All sequences over `alphabet` symbols with length <= max_len.
inline std::vector<std::vector<std::uint16_t>> all_sequences(std::size_t max_len, std::uint16_t alphabet) {
  std::vector<std::vector<std::uint16_t>> out{{}};
  std::vector<std::vector<std::uint16_t>> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<std::uint16_t>> next;
    for (const auto& s : frontier)
      for (std::uint16_t a = 0; a < alphabet; ++a) {
        auto t = s;
        t.push_back(a);
        next.push_back(t);
      }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

/// Random log-prob table of shape [(T·(U+1)) × V] with normalized rows.
inline gcpc::Tensor random_lattice(std::size_t T, std::size_t U, std::size_t V, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  std::vector<double> v(T * (U + 1) * V);
  for (std::size_t r = 0; r < T * (U + 1); ++r) {
    std::vector<double> row(V);
    for (auto& x : row) x = n(rng);
    const double z = lse(row);
    for (std::size_t c = 0; c < V; ++c) v[r * V + c] = row[c] - z;
  }
  return gcpc::Tensor::matrix(T * (U + 1), V, std::move(v));
}

/// -log P(labels) by enumerating every monotone lattice path. Row t·(U+1)+u
/// holds the distribution at frame t after u emitted labels.
inline double rnnt_paths(const gcpc::Tensor& lp, std::size_t T, const std::vector<std::uint16_t>& y,
                         std::size_t blank) {
  const std::size_t U = y.size();
  std::vector<double> ends;
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t t, std::size_t u, double acc) {
    const std::size_t row = t * (U + 1) + u;
    if (u < U) walk(t, u + 1, acc + lp.at(row, y[u]));
    if (t + 1 < T) {
      walk(t + 1, u, acc + lp.at(row, blank));
    } else if (u == U) {
      ends.push_back(acc + lp.at(row, blank));
    }
  };
  walk(0, 0, 0.0);
  return -lse(ends);
}

inline bool bit_equal(const gcpc::Tensor& a, const gcpc::Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

inline bool bit_equal(const gcpc::ParameterStore& a, const gcpc::ParameterStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.trainable != y.trainable || !bit_equal(x.value, y.value)) return false;
  }
  return true;
}

}  // namespace oracle
