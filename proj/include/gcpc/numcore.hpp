#pragma once

// Dense f64 tensors, a tape-based reverse-mode autodiff graph, Adam, and a
// central finite-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gcpc/errors.hpp"

namespace gcpc {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Row-major f64 array of rank 1 or 2. Every value is finite; construction
/// from non-finite data throws NumericError.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty() || shape_.size() > 2) throw DimensionError("tensor rank must be 1 or 2, got " + shape_str(shape_));
    std::size_t n = 1;
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
      n *= d;
    }
    if (n != data_.size())
      throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) + " values");
    for (double v : data_)
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor of shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    auto n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  /// Rank-1 tensors behave as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 1 ? 1 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.back(); }

  std::span<const double> data() const noexcept { return data_; }
  /// Mutable access; callers that write through it own the finiteness invariant.
  std::span<double> mutable_data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Parameters

/// Named tensors in insertion order, each with a trainable flag.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void add(std::string name, Tensor value, bool trainable = true) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), trainable});
  }

  /// Inserts or overwrites, keeping the original position for existing names.
  void set(const std::string& name, Tensor value, bool trainable = true) {
    if (auto it = index_.find(name); it != index_.end()) {
      entries_[it->second].value = std::move(value);
      entries_[it->second].trainable = trainable;
    } else {
      add(name, std::move(value), trainable);
    }
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const Tensor& get(const std::string& name) const { return entries_[position(name)].value; }
  Tensor& get_mutable(const std::string& name) { return entries_[position(name)].value; }
  bool trainable(const std::string& name) const { return entries_[position(name)].trainable; }
  void set_trainable(const std::string& name, bool t) { entries_[position(name)].trainable = t; }

  /// Marks every parameter whose name starts with `prefix`.
  void set_trainable_prefix(const std::string& prefix, bool t) {
    for (auto& e : entries_)
      if (e.name.rfind(prefix, 0) == 0) e.trainable = t;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }

  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient of a scalar w.r.t. every trainable parameter, keyed like the store.
using Gradients = ParameterStore;

/// Uniform in ±sqrt(6/(fan_in+fan_out)).
inline Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(fan_out * fan_in);
  for (auto& x : v) x = dist(rng);
  return Tensor::matrix(fan_out, fan_in, std::move(v));
}

// ---------------------------------------------------------------------------
// Plain numeric helpers

inline double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double logsumexp(std::span<const double> x) {
  if (x.empty()) throw DimensionError("logsumexp of empty input");
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline Tensor log_softmax(const Tensor& x) {
  std::vector<double> out(x.size());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.data().subspan(r * n, n);
    const double lse = logsumexp(row);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = row[c] - lse;
  }
  return Tensor(x.shape(), std::move(out));
}

/// W·x + b for x of shape [n], W [m×n], b [m].
inline Tensor affine_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (W.rank() != 2 || x.size() != W.cols() || b.size() != W.rows())
    throw DimensionError("affine: x" + shape_str(x.shape()) + " W" + shape_str(W.shape()) + " b" + shape_str(b.shape()));
  std::vector<double> out(W.rows());
  for (std::size_t i = 0; i < W.rows(); ++i) {
    double acc = b[i];
    for (std::size_t j = 0; j < W.cols(); ++j) acc += W.at(i, j) * x[j];
    out[i] = acc;
  }
  return Tensor::vector(std::move(out));
}

// ---------------------------------------------------------------------------
// Reverse-mode graph

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

enum class Op : std::uint8_t {
  Leaf,
  MatMulNT,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddRow,
  Relu,
  Tanh,
  Sigmoid,
  LogSoftmax,
  Pick,
  GatherCols,
  Sum,
  SliceRows,
  SliceCols,
  ConcatRows,
  OuterAdd,
  Fused,  // precomputed local Jacobian-vector rule (d out / d input stored densely)
};

/// Append-only tape. Node order is a topological order, so the backward pass
/// is a single reverse sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t) { return push(Op::Leaf, std::move(t)); }

  /// Leaf bound to a named parameter. Repeated calls return the same node.
  Var param(const ParameterStore& store, const std::string& name) {
    if (store_ != nullptr && store_ != &store) throw ContractError("graph already bound to another parameter store");
    store_ = &store;
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return {this, it->second};
    Var v = push(Op::Leaf, store.get(name));
    nodes_[v.id].param_name = name;
    param_nodes_.emplace(name, v.id);
    return v;
  }

  const Tensor& value(int id) const { return nodes_[id].value; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  // -- ops -------------------------------------------------------------

  /// A·Bᵀ with A [m×k] (or [k]) and B [n×k]. A rank-1 A yields rank-1 output.
  Var matmul_nt(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (B.rank() != 2 || A.cols() != B.cols())
      throw DimensionError("matmul_nt: " + shape_str(A.shape()) + " x " + shape_str(B.shape()) + "^T");
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    std::vector<double> out(m * n, 0.0);
    const double* pa = A.data().data();
    const double* pb = B.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        const double* ra = pa + i * k;
        const double* rb = pb + j * k;
        for (std::size_t l = 0; l < k; ++l) acc += ra[l] * rb[l];
        out[i * n + j] = acc;
      }
    Shape s = A.rank() == 1 ? Shape{n} : Shape{m, n};
    return push(Op::MatMulNT, Tensor(std::move(s), std::move(out)), a.id, b.id);
  }

  /// A·B with A [m×k] (or [k]) and B [k×n].
  Var matmul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (B.rank() != 2 || A.cols() != B.rows())
      throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const double av = A.at(i, l);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B.at(l, j);
      }
    Shape s = A.rank() == 1 ? Shape{n} : Shape{m, n};
    return push(Op::MatMul, Tensor(std::move(s), std::move(out)), a.id, b.id);
  }

  Var add(Var a, Var b) { return elementwise(Op::Add, a, b, [](double x, double y) { return x + y; }); }
  Var sub(Var a, Var b) { return elementwise(Op::Sub, a, b, [](double x, double y) { return x - y; }); }
  Var mul(Var a, Var b) { return elementwise(Op::Mul, a, b, [](double x, double y) { return x * y; }); }

  Var scale(Var a, double s) {
    std::vector<double> out(a.value().values());
    for (auto& v : out) v *= s;
    Var r = push(Op::Scale, Tensor(a.shape(), std::move(out)), a.id);
    nodes_[r.id].scalar = s;
    return r;
  }

  /// Adds vector b [n] to every row of a [m×n].
  Var add_row(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (B.size() != A.cols()) throw DimensionError("add_row: " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
    std::vector<double> out(A.values());
    const std::size_t n = A.cols();
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
    return push(Op::AddRow, Tensor(A.shape(), std::move(out)), a.id, b.id);
  }

  /// x·Wᵀ + b, row-wise. For rank-1 x this is W·x + b.
  Var affine(Var x, Var W, Var b) { return add_row(matmul_nt(x, W), b); }

  Var relu(Var a) { return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }
  Var tanh(Var a) { return unary(Op::Tanh, a, [](double x) { return std::tanh(x); }); }
  Var sigmoid(Var a) {
    return unary(Op::Sigmoid, a, [](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
  }

  /// Row-wise log-softmax (rank-1 input is one row).
  Var log_softmax(Var a) { return push(Op::LogSoftmax, gcpc::log_softmax(a.value()), a.id); }

  /// out[i] = a[i, index[i]].
  Var pick(Var a, std::vector<std::size_t> index) {
    const Tensor& A = a.value();
    if (index.size() != A.rows()) throw DimensionError("pick: index count does not match row count");
    std::vector<double> out(A.rows());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      if (index[i] >= A.cols()) throw ContractError("pick: column index out of range");
      out[i] = A.at(i, index[i]);
    }
    Var r = push(Op::Pick, Tensor::vector(std::move(out)), a.id);
    nodes_[r.id].index = std::move(index);
    return r;
  }

  /// out[i, j] = a[i, index[i*width + j]]; output shape [rows × width].
  Var gather_cols(Var a, std::vector<std::size_t> index, std::size_t width) {
    const Tensor& A = a.value();
    if (width == 0 || index.size() != A.rows() * width) throw DimensionError("gather_cols: index shape mismatch");
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const std::size_t c = index[i * width + j];
        if (c >= A.cols()) throw ContractError("gather_cols: column index out of range");
        out[i * width + j] = A.at(i, c);
      }
    Var r = push(Op::GatherCols, Tensor::matrix(A.rows(), width, std::move(out)), a.id);
    nodes_[r.id].index = std::move(index);
    return r;
  }

  Var sum(Var a) { return reduce(a, 1.0); }
  Var mean(Var a) { return reduce(a, 1.0 / static_cast<double>(a.value().size())); }

  /// Sum of the given scalars (each of size 1).
  Var add_scalars(std::span<const Var> xs) {
    if (xs.empty()) throw DimensionError("add_scalars of nothing");
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
  }

  /// Rows [r0, r1) of a; always rank 2.
  Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor& A = a.value();
    if (r0 >= r1 || r1 > A.rows()) throw DimensionError("slice_rows out of range");
    const std::size_t n = A.cols();
    std::vector<double> out(A.values().begin() + static_cast<std::ptrdiff_t>(r0 * n),
                            A.values().begin() + static_cast<std::ptrdiff_t>(r1 * n));
    Var r = push(Op::SliceRows, Tensor::matrix(r1 - r0, n, std::move(out)), a.id);
    nodes_[r.id].index = {r0, r1};
    return r;
  }

  /// Row r of a as a rank-1 tensor.
  Var row(Var a, std::size_t r) {
    const Tensor& A = a.value();
    if (r >= A.rows()) throw DimensionError("row out of range");
    const std::size_t n = A.cols();
    std::vector<double> out(A.values().begin() + static_cast<std::ptrdiff_t>(r * n),
                            A.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
    Var v = push(Op::SliceRows, Tensor::vector(std::move(out)), a.id);
    nodes_[v.id].index = {r, r + 1};
    return v;
  }

  /// Columns [c0, c1) of a; keeps the rank of a.
  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& A = a.value();
    if (c0 >= c1 || c1 > A.cols()) throw DimensionError("slice_cols out of range");
    const std::size_t w = c1 - c0, n = A.cols();
    std::vector<double> out(A.rows() * w);
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A.data()[i * n + c0 + j];
    Shape s = A.rank() == 1 ? Shape{w} : Shape{A.rows(), w};
    Var r = push(Op::SliceCols, Tensor(std::move(s), std::move(out)), a.id);
    nodes_[r.id].index = {c0, c1};
    return r;
  }

  /// Stacks equally wide inputs vertically.
  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    std::vector<double> out;
    for (const Var& p : parts) {
      if (p.cols() != n) throw DimensionError("concat_rows width mismatch");
      m += p.rows();
      out.insert(out.end(), p.value().values().begin(), p.value().values().end());
    }
    Var r = push(Op::ConcatRows, Tensor::matrix(m, n, std::move(out)));
    for (const Var& p : parts) nodes_[r.id].inputs.push_back(p.id);
    return r;
  }

  /// Row t*U + u of the output is a[t] + b[u]; a [T×J], b [U×J].
  Var outer_add(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols() != B.cols()) throw DimensionError("outer_add width mismatch");
    const std::size_t T = A.rows(), U = B.rows(), J = A.cols();
    std::vector<double> out(T * U * J);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t j = 0; j < J; ++j) out[(t * U + u) * J + j] = A.at(t, j) + B.at(u, j);
    return push(Op::OuterAdd, Tensor::matrix(T * U, J, std::move(out)), a.id, b.id);
  }

  /// Scalar node whose gradient w.r.t. `input` is `local_grad` (same shape as
  /// input). Used by losses that compute their own derivative, e.g. lattice DPs.
  Var fused_scalar(Var input, double value, Tensor local_grad) {
    if (local_grad.shape() != input.shape()) throw DimensionError("fused_scalar: gradient shape mismatch");
    Var r = push(Op::Fused, Tensor::scalar(value), input.id);
    nodes_[r.id].aux = std::move(local_grad);
    return r;
  }

  // -- backward --------------------------------------------------------

  /// Reverse sweep from a scalar root. Gradients accumulate from zero on each call.
  void backward(Var root) {
    if (root.graph != this) throw ContractError("backward: root belongs to another graph");
    if (root.value().size() != 1) throw ContractError("backward: root must be scalar, got " + shape_str(root.shape()));
    for (auto& n : nodes_) n.grad.clear();
    grad_of(root.id).assign(1, 1.0);
    for (int id = root.id; id >= 0; --id) {
      if (nodes_[id].grad.empty()) continue;
      propagate(id);
    }
  }

  /// Gradient of the last backward root w.r.t. node `v` (zeros if unreached).
  Tensor grad(Var v) const {
    const auto& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor::zeros(n.value.shape());
    return Tensor(n.value.shape(), n.grad);
  }

  /// Gradients for every trainable parameter of `store`, in store order.
  Gradients parameter_gradients(const ParameterStore& store) const {
    Gradients out;
    for (const auto& e : store.entries()) {
      if (!e.trainable) continue;
      auto it = param_nodes_.find(e.name);
      if (store_ == &store && it != param_nodes_.end())
        out.add(e.name, grad(Var{const_cast<Graph*>(this), it->second}));
      else
        out.add(e.name, Tensor::zeros(e.value.shape()));
    }
    return out;
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    std::vector<int> inputs;  // ConcatRows only
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> index;
    double scalar = 0.0;
    Tensor aux;
    std::string param_name;
  };

  Var push(Op op, Tensor value, int a = -1, int b = -1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  template <class F>
  Var elementwise(Op op, Var a, Var b, F f) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.size() != B.size() || A.cols() != B.cols())
      throw DimensionError("elementwise op: " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
    return push(op, Tensor(A.shape(), std::move(out)), a.id, b.id);
  }

  template <class F>
  Var unary(Op op, Var a, F f) {
    std::vector<double> out(a.value().values());
    for (auto& v : out) v = f(v);
    return push(op, Tensor(a.shape(), std::move(out)), a.id);
  }

  Var reduce(Var a, double factor) {
    const auto& v = a.value().values();
    double s = 0.0;
    for (double x : v) s += x;
    Var r = push(Op::Sum, Tensor::scalar(s * factor), a.id);
    nodes_[r.id].scalar = factor;
    return r;
  }

  std::vector<double>& grad_of(int id) {
    auto& g = nodes_[id].grad;
    if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
    return g;
  }

  void propagate(int id) {
    const Node& n = nodes_[id];
    const std::vector<double>& dy = n.grad;
    const Tensor& y = n.value;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMulNT: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        const std::size_t m = A.rows(), k = A.cols(), cols = B.rows();
        auto& da = grad_of(n.a);
        auto& db = grad_of(n.b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < cols; ++j) {
            const double g = dy[i * cols + j];
            if (g == 0.0) continue;
            for (std::size_t l = 0; l < k; ++l) {
              da[i * k + l] += g * B.data()[j * k + l];
              db[j * k + l] += g * A.data()[i * k + l];
            }
          }
        break;
      }
      case Op::MatMul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        const std::size_t m = A.rows(), k = A.cols(), cols = B.cols();
        auto& da = grad_of(n.a);
        auto& db = grad_of(n.b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              acc += dy[i * cols + j] * B.data()[l * cols + j];
              db[l * cols + j] += A.data()[i * k + l] * dy[i * cols + j];
            }
            da[i * k + l] += acc;
          }
        break;
      }
      case Op::Add: {
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        auto& db = grad_of(n.b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
        break;
      }
      case Op::Sub: {
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        auto& db = grad_of(n.b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
        break;
      }
      case Op::Mul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * B[i];
        auto& db = grad_of(n.b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * A[i];
        break;
      }
      case Op::Scale: {
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * n.scalar;
        break;
      }
      case Op::AddRow: {
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        auto& db = grad_of(n.b);
        const std::size_t cols = y.cols();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i % cols] += dy[i];
        break;
      }
      case Op::Relu: {
        auto& da = grad_of(n.a);
        const Tensor& A = nodes_[n.a].value;
        for (std::size_t i = 0; i < dy.size(); ++i)
          if (A[i] > 0.0) da[i] += dy[i];
        break;
      }
      case Op::Tanh: {
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::Sigmoid: {
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::LogSoftmax: {
        auto& da = grad_of(n.a);
        const std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < cols; ++c) s += dy[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c)
            da[r * cols + c] += dy[r * cols + c] - std::exp(y[r * cols + c]) * s;
        }
        break;
      }
      case Op::Pick: {
        auto& da = grad_of(n.a);
        const std::size_t cols = nodes_[n.a].value.cols();
        for (std::size_t i = 0; i < n.index.size(); ++i) da[i * cols + n.index[i]] += dy[i];
        break;
      }
      case Op::GatherCols: {
        auto& da = grad_of(n.a);
        const std::size_t cols = nodes_[n.a].value.cols();
        const std::size_t width = y.cols();
        for (std::size_t i = 0; i < y.rows(); ++i)
          for (std::size_t j = 0; j < width; ++j) da[i * cols + n.index[i * width + j]] += dy[i * width + j];
        break;
      }
      case Op::Sum: {
        auto& da = grad_of(n.a);
        const double g = dy[0] * n.scalar;
        for (auto& v : da) v += g;
        break;
      }
      case Op::SliceRows: {
        auto& da = grad_of(n.a);
        const std::size_t offset = n.index[0] * nodes_[n.a].value.cols();
        for (std::size_t i = 0; i < dy.size(); ++i) da[offset + i] += dy[i];
        break;
      }
      case Op::SliceCols: {
        auto& da = grad_of(n.a);
        const std::size_t cols = nodes_[n.a].value.cols();
        const std::size_t c0 = n.index[0], w = y.cols();
        for (std::size_t i = 0; i < y.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) da[i * cols + c0 + j] += dy[i * w + j];
        break;
      }
      case Op::ConcatRows: {
        std::size_t offset = 0;
        for (int in : n.inputs) {
          auto& da = grad_of(in);
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[offset + i];
          offset += da.size();
        }
        break;
      }
      case Op::OuterAdd: {
        const std::size_t T = nodes_[n.a].value.rows(), U = nodes_[n.b].value.rows(), J = y.cols();
        auto& da = grad_of(n.a);
        auto& db = grad_of(n.b);
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t u = 0; u < U; ++u)
            for (std::size_t j = 0; j < J; ++j) {
              const double g = dy[(t * U + u) * J + j];
              da[t * J + j] += g;
              db[u * J + j] += g;
            }
        break;
      }
      case Op::Fused: {
        auto& da = grad_of(n.a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[0] * n.aux[i];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
  const ParameterStore* store_ = nullptr;
};

inline const Tensor& Var::value() const { return graph->value(id); }

/// Runs the reverse sweep and returns d root / d p for every trainable p in
/// `store`; parameters the root does not depend on get zeros.
inline Gradients backward_pass(Var root, const ParameterStore& store) {
  root.graph->backward(root);
  return root.graph->parameter_gradients(store);
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

/// One bias-corrected Adam update of every trainable parameter that has a gradient.
/// Frozen parameters are never touched.
inline void adam_step(ParameterStore& params, const Gradients& grads, AdamState& state) {
  state.step += 1;
  const auto& cfg = state.config;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& e : params.entries()) {
    if (!e.trainable || !grads.contains(e.name)) continue;
    const Tensor& g = grads.get(e.name);
    if (g.shape() != e.value.shape())
      throw DimensionError("adam: gradient shape " + shape_str(g.shape()) + " for parameter '" + e.name + "' of shape " +
                           shape_str(e.value.shape()));
    auto& [m, v] = state.moments[e.name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    } else if (m.size() != g.size()) {
      throw DimensionError("adam: moment shape mismatch for '" + e.name + "'");
    }
    auto p = e.value.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (!std::isfinite(p[i])) throw NumericError("adam: parameter '" + e.name + "' became non-finite");
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central differences (f(p+eps) - f(p-eps)) / (2 eps) for every coordinate of
/// every trainable parameter.
inline Gradients finite_diff_gradient(const std::function<double(const ParameterStore&)>& f, const ParameterStore& params,
                                      double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_gradient: eps must be positive");
  ParameterStore work = params;
  Gradients out;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    std::vector<double> g(e.value.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto p = work.get_mutable(e.name).mutable_data();
      const double orig = p[i];
      p[i] = orig + eps;
      const double fp = f(work);
      p = work.get_mutable(e.name).mutable_data();
      p[i] = orig - eps;
      const double fm = f(work);
      work.get_mutable(e.name).mutable_data()[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff_gradient: non-finite evaluation at '" + e.name + "'");
      g[i] = (fp - fm) / (2.0 * eps);
    }
    out.add(e.name, Tensor(e.value.shape(), std::move(g)));
  }
  return out;
}

/// max |a-b| / max(1, |a|, |b|) over all shared entries; the scale floor keeps
/// near-zero coordinates from dominating.
inline double max_relative_error(const Gradients& a, const Gradients& b) {
  double worst = 0.0;
  for (const auto& e : a.entries()) {
    const Tensor& other = b.get(e.name);
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double x = e.value[i], y = other[i];
      const double denom = std::max({1.0, std::abs(x), std::abs(y)});
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  }
  return worst;
}

}  // namespace gcpc
