#pragma once

// Network blocks over the autodiff graph: dense stacks, LSTM layers, the
// feature encoder / context network pair, the guidance encoder over phone
// logits, per-step prediction heads, the frame phone classifier and the
// transducer prediction + joint networks.
//
// Parameter naming is positional and stable, e.g. "enc.dense0.W",
// "enc.lstm1.Wh", "heads.k3.b". Checkpoints and prefix initialization rely on it.

#include <cstddef>
#include <cstdint>
#include <tuple>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gcpc/numcore.hpp"

namespace gcpc {

struct DenseStackSpec {
  std::vector<std::size_t> widths;
  bool relu_last = true;  // false: the final layer is linear

  std::size_t depth() const noexcept { return widths.size(); }
  std::size_t output_dim(std::size_t input_dim) const noexcept { return widths.empty() ? input_dim : widths.back(); }
};

struct EncoderTopology {
  std::size_t feature_dim = 16;
  std::size_t frame_stack = 1;  // 1 disables stacking
  DenseStackSpec dense{{32, 32}, true};
  std::size_t lstm_layers = 1;
  std::size_t lstm_width = 64;
  DenseStackSpec guidance{{32, 32}, true};

  std::size_t input_dim() const noexcept { return feature_dim * frame_stack; }
  std::size_t latent_dim() const noexcept { return dense.output_dim(input_dim()); }
  std::size_t context_dim() const noexcept { return lstm_layers == 0 ? latent_dim() : lstm_width; }
  std::size_t guidance_dim(std::size_t phones) const noexcept { return guidance.output_dim(phones); }
};

struct ClassifierTopology {
  std::size_t dense_width = 32;
  std::size_t lstm_width = 32;
};

struct TransducerTopology {
  std::size_t embed_dim = 16;
  std::size_t pred_width = 32;
  std::size_t joint_width = 32;
};

// ---------------------------------------------------------------------------
// Initialization

inline void init_dense_stack(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                             const DenseStackSpec& spec, std::mt19937_64& rng) {
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < spec.depth(); ++i) {
    const std::string p = prefix + ".dense" + std::to_string(i);
    store.add(p + ".W", glorot_uniform(spec.widths[i], in, rng));
    store.add(p + ".b", Tensor::zeros({spec.widths[i]}));
    in = spec.widths[i];
  }
}

/// Gate layout along the 4H axis is [input, forget, candidate, output].
inline void init_lstm(ParameterStore& store, const std::string& prefix, std::size_t input_dim, std::size_t width,
                      std::mt19937_64& rng) {
  store.add(prefix + ".Wx", glorot_uniform(4 * width, input_dim, rng));
  store.add(prefix + ".Wh", glorot_uniform(4 * width, width, rng));
  std::vector<double> b(4 * width, 0.0);
  for (std::size_t i = width; i < 2 * width; ++i) b[i] = 1.0;
  store.add(prefix + ".b", Tensor::vector(std::move(b)));
}

inline void init_affine(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                        std::mt19937_64& rng) {
  store.add(prefix + ".W", glorot_uniform(out, in, rng));
  store.add(prefix + ".b", Tensor::zeros({out}));
}

inline std::string lstm_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".lstm" + std::to_string(layer);
}

/// f_enc and f_ar under prefix "enc".
inline void init_encoder(ParameterStore& store, const EncoderTopology& topo, std::mt19937_64& rng,
                         const std::string& prefix = "enc") {
  if (topo.dense.depth() == 0) throw ContractError("feature encoder needs at least one dense layer");
  init_dense_stack(store, prefix, topo.input_dim(), topo.dense, rng);
  std::size_t in = topo.latent_dim();
  for (std::size_t l = 0; l < topo.lstm_layers; ++l) {
    init_lstm(store, lstm_name(prefix, l), in, topo.lstm_width, rng);
    in = topo.lstm_width;
  }
}

inline void init_guidance(ParameterStore& store, const EncoderTopology& topo, std::size_t phones, std::mt19937_64& rng,
                          const std::string& prefix = "genc") {
  if (topo.guidance.depth() > 3) throw ContractError("guidance encoder depth must be in 0..3");
  init_dense_stack(store, prefix, phones, topo.guidance, rng);
}

/// K affine heads mapping a context vector to the target space, zero at start.
inline void init_step_heads(ParameterStore& store, const std::string& prefix, std::size_t K, std::size_t target_dim,
                            std::size_t context_dim, std::mt19937_64& /*rng*/) {
  if (K == 0) throw ContractError("need at least one prediction step");
  for (std::size_t k = 1; k <= K; ++k) {
    const std::string name = prefix + ".k" + std::to_string(k);
    store.add(name + ".W", Tensor::zeros({target_dim, context_dim}));
    store.add(name + ".b", Tensor::zeros({target_dim}));
  }
}

inline void init_classifier(ParameterStore& store, const ClassifierTopology& topo, std::size_t input_dim,
                            std::size_t phones, std::mt19937_64& rng, const std::string& prefix = "prior") {
  init_affine(store, prefix + ".dense0", input_dim, topo.dense_width, rng);
  init_lstm(store, lstm_name(prefix, 0), topo.dense_width, topo.lstm_width, rng);
  init_affine(store, prefix + ".out", topo.lstm_width, phones, rng);
}

/// Prediction network (embedding + one LSTM layer) and joint network.
/// The output layer has vocab+1 units; the last index is blank.
inline void init_transducer_heads(ParameterStore& store, const TransducerTopology& topo, std::size_t context_dim,
                                  std::size_t vocab, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 0.1);
  std::vector<double> emb((vocab + 1) * topo.embed_dim);
  for (auto& v : emb) v = nd(rng);
  store.add("pred.embed", Tensor::matrix(vocab + 1, topo.embed_dim, std::move(emb)));
  init_lstm(store, "pred.lstm0", topo.embed_dim, topo.pred_width, rng);
  store.add("joint.enc.W", glorot_uniform(topo.joint_width, context_dim, rng));
  store.add("joint.pred.W", glorot_uniform(topo.joint_width, topo.pred_width, rng));
  store.add("joint.b", Tensor::zeros({topo.joint_width}));
  init_affine(store, "joint.out", topo.joint_width, vocab + 1, rng);
}

// ---------------------------------------------------------------------------
// Forward blocks

struct LstmParams {
  Var Wx, Wh, b;
  std::size_t width;

  static LstmParams bind(Graph& g, const ParameterStore& store, const std::string& prefix) {
    LstmParams p{g.param(store, prefix + ".Wx"), g.param(store, prefix + ".Wh"), g.param(store, prefix + ".b"), 0};
    p.width = p.Wh.cols();
    return p;
  }
};

/// One LSTM step from a precomputed input projection x·Wxᵀ + b.
inline std::pair<Var, Var> lstm_cell_from_projection(Graph& g, Var x_proj, Var h, Var c, const LstmParams& p) {
  const std::size_t H = p.width;
  Var gates = g.add(x_proj, g.matmul_nt(h, p.Wh));
  Var i = g.sigmoid(g.slice_cols(gates, 0, H));
  Var f = g.sigmoid(g.slice_cols(gates, H, 2 * H));
  Var cand = g.tanh(g.slice_cols(gates, 2 * H, 3 * H));
  Var o = g.sigmoid(g.slice_cols(gates, 3 * H, 4 * H));
  Var c_next = g.add(g.mul(f, c), g.mul(i, cand));
  Var h_next = g.mul(o, g.tanh(c_next));
  return {h_next, c_next};
}

/// Standard LSTM cell: returns (h', c').
inline std::pair<Var, Var> lstm_cell_step(Graph& g, Var x, Var h, Var c, const LstmParams& p) {
  if (x.cols() != p.Wx.cols() || h.cols() != p.width || c.cols() != p.width)
    throw DimensionError("lstm_cell_step: dimension mismatch");
  return lstm_cell_from_projection(g, g.affine(x, p.Wx, p.b), h, c, p);
}

/// Runs one LSTM layer left to right over the rows of xs [T×n]; returns [T×H].
inline Var lstm_layer(Graph& g, Var xs, const LstmParams& p) {
  if (xs.cols() != p.Wx.cols()) throw DimensionError("lstm_layer: input width mismatch");
  Var proj = g.affine(xs, p.Wx, p.b);
  Var h = g.constant(Tensor::zeros({p.width}));
  Var c = h;
  std::vector<Var> outs;
  outs.reserve(xs.rows());
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    std::tie(h, c) = lstm_cell_from_projection(g, g.row(proj, t), h, c, p);
    outs.push_back(h);
  }
  return g.concat_rows(outs);
}

/// Affine + ReLU layers applied row-wise. A zero-layer stack is the identity.
inline Var dense_stack_forward(Graph& g, Var x, const ParameterStore& store, const std::string& prefix,
                               const DenseStackSpec& spec) {
  Var h = x;
  for (std::size_t i = 0; i < spec.depth(); ++i) {
    const std::string p = prefix + ".dense" + std::to_string(i);
    Var W = g.param(store, p + ".W");
    if (h.cols() != W.cols())
      throw DimensionError("dense layer " + p + ": input width " + std::to_string(h.cols()) + ", expected " +
                           std::to_string(W.cols()));
    h = g.affine(h, W, g.param(store, p + ".b"));
    if (i + 1 < spec.depth() || spec.relu_last) h = g.relu(h);
  }
  return h;
}

/// Concatenates each frame with its n-1 predecessors (clamped at the start), oldest first.
inline Tensor stack_frames(const Tensor& frames, std::size_t n) {
  if (n <= 1) return frames;
  const std::size_t T = frames.rows(), d = frames.cols();
  std::vector<double> out(T * d * n);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t src = t + j + 1 >= n ? t + j + 1 - n : 0;
      for (std::size_t i = 0; i < d; ++i) out[(t * n + j) * d + i] = frames.at(src, i);
    }
  return Tensor::matrix(T, d * n, std::move(out));
}

struct EncoderOutput {
  Var latents;   // z, [T × d_z]
  Var contexts;  // c, [T × d_c]
};

/// z = f_enc(x) per frame, c = f_ar over z left to right.
inline EncoderOutput run_encoder(Graph& g, const Tensor& features, const ParameterStore& store,
                                 const EncoderTopology& topo, const std::string& prefix = "enc") {
  if (features.rank() != 2 || features.rows() == 0) throw DimensionError("run_encoder: expected a T×d feature matrix");
  if (features.cols() != topo.feature_dim)
    throw DimensionError("run_encoder: feature width " + std::to_string(features.cols()) + ", topology expects " +
                         std::to_string(topo.feature_dim));
  Var x = g.constant(stack_frames(features, topo.frame_stack));
  Var z = dense_stack_forward(g, x, store, prefix, topo.dense);
  Var c = z;
  for (std::size_t l = 0; l < topo.lstm_layers; ++l) c = lstm_layer(g, c, LstmParams::bind(g, store, lstm_name(prefix, l)));
  return {z, c};
}

/// q = g_enc(p) per frame. Depth 0 returns the logits node itself.
inline Var run_guidance(Graph& g, Var logits, const ParameterStore& store, const EncoderTopology& topo,
                        const std::string& prefix = "genc") {
  if (topo.guidance.depth() == 0) return logits;
  return dense_stack_forward(g, logits, store, prefix, topo.guidance);
}

/// h_k(c) = W_k·c + b_k for 1 ≤ k ≤ K; c may be a vector or a [T×d_c] matrix.
inline Var apply_step_head(Graph& g, Var c, std::size_t k, std::size_t K, const ParameterStore& store,
                           const std::string& prefix = "heads") {
  if (k < 1 || k > K) throw ContractError("step head index " + std::to_string(k) + " outside 1.." + std::to_string(K));
  const std::string p = prefix + ".k" + std::to_string(k);
  return g.affine(c, g.param(store, p + ".W"), g.param(store, p + ".b"));
}

/// Frame-level phone logits [T × P]; no softmax.
inline Var run_phone_classifier(Graph& g, const Tensor& features, const ParameterStore& store,
                                const std::string& prefix = "prior") {
  Var W0 = g.param(store, prefix + ".dense0.W");
  if (features.rank() != 2 || features.cols() != W0.cols())
    throw DimensionError("run_phone_classifier: feature width does not match classifier input");
  Var x = g.constant(features);
  Var h = g.relu(g.affine(x, W0, g.param(store, prefix + ".dense0.b")));
  h = lstm_layer(g, h, LstmParams::bind(g, store, lstm_name(prefix, 0)));
  return g.affine(h, g.param(store, prefix + ".out.W"), g.param(store, prefix + ".out.b"));
}

/// Prediction network outputs for the label prefixes ∅, y1, y1y2, ... : [(U+1) × H_pred].
/// The start symbol is the blank index `vocab`.
inline Var run_prediction_network(Graph& g, const ParameterStore& store, const std::vector<std::uint16_t>& tokens,
                                  std::size_t vocab) {
  Var embed = g.param(store, "pred.embed");
  std::vector<Var> inputs;
  inputs.reserve(tokens.size() + 1);
  inputs.push_back(g.row(embed, vocab));
  for (auto tok : tokens) {
    if (tok >= vocab) throw ContractError("token id out of vocabulary");
    inputs.push_back(g.row(embed, tok));
  }
  return lstm_layer(g, g.concat_rows(inputs), LstmParams::bind(g, store, "pred.lstm0"));
}

/// Joint network over every (t, u): log-distributions over vocab ∪ {blank},
/// rows ordered t-major, shape [(T·(U+1)) × (vocab+1)].
inline Var run_joint_network(Graph& g, const ParameterStore& store, Var encoder_out, Var pred_out) {
  Var e = g.matmul_nt(encoder_out, g.param(store, "joint.enc.W"));
  Var p = g.add_row(g.matmul_nt(pred_out, g.param(store, "joint.pred.W")), g.param(store, "joint.b"));
  Var hidden = g.tanh(g.outer_add(e, p));
  Var logits = g.affine(hidden, g.param(store, "joint.out.W"), g.param(store, "joint.out.b"));
  return g.log_softmax(logits);
}

// ---------------------------------------------------------------------------
// Transducer model

/// Encoder (f_enc + f_ar, prefix "enc") feeding a joint network together with
/// the prediction network. Output index `vocab` is blank.
struct TransducerModel {
  EncoderTopology encoder;
  TransducerTopology heads;
  std::size_t vocab = 0;
  ParameterStore params;

  std::size_t blank() const noexcept { return vocab; }
};

inline TransducerModel make_transducer(const EncoderTopology& enc, const TransducerTopology& heads, std::size_t vocab,
                                       std::mt19937_64& rng) {
  TransducerModel m{enc, heads, vocab, {}};
  init_encoder(m.params, enc, rng);
  init_transducer_heads(m.params, heads, enc.context_dim(), vocab, rng);
  return m;
}

struct TransducerOutput {
  EncoderOutput encoder;
  Var logprobs;  // [(T·(U+1)) × (vocab+1)]
};

inline TransducerOutput transducer_forward(Graph& g, const TransducerModel& m, const Tensor& features,
                                           const std::vector<std::uint16_t>& tokens) {
  EncoderOutput enc = run_encoder(g, features, m.params, m.encoder);
  Var pred = run_prediction_network(g, m.params, tokens, m.vocab);
  return {enc, run_joint_network(g, m.params, enc.contexts, pred)};
}

}  // namespace gcpc
