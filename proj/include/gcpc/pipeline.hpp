#pragma once

// Experiment orchestration: prior phone classifier, encoder pre-training
// under each scheme, downstream transducer initialization and fine-tuning,
// evaluation, and the scheme × seed comparison grid.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "gcpc/eval.hpp"
#include "gcpc/losses.hpp"
#include "gcpc/nets.hpp"
#include "gcpc/numcore.hpp"
#include "gcpc/synthdata.hpp"

namespace gcpc {

enum class PretrainScheme { Scratch, PCE, CPC, GCPC, CPC_GCPC };
enum class FinetuneLoss { RNNT, RNNT_plus_C };

inline std::string scheme_name(PretrainScheme s) {
  switch (s) {
    case PretrainScheme::Scratch: return "Scratch";
    case PretrainScheme::PCE: return "PCE";
    case PretrainScheme::CPC: return "CPC";
    case PretrainScheme::GCPC: return "GCPC";
    case PretrainScheme::CPC_GCPC: return "CPC+GCPC";
  }
  return "?";
}

inline std::optional<PretrainScheme> parse_scheme(const std::string& s) {
  for (auto v : {PretrainScheme::Scratch, PretrainScheme::PCE, PretrainScheme::CPC, PretrainScheme::GCPC,
                 PretrainScheme::CPC_GCPC})
    if (scheme_name(v) == s) return v;
  return std::nullopt;
}

inline std::string finetune_loss_name(FinetuneLoss l) { return l == FinetuneLoss::RNNT ? "RNNT" : "RNNT+L_C"; }

inline std::optional<FinetuneLoss> parse_finetune_loss(const std::string& s) {
  if (s == "RNNT") return FinetuneLoss::RNNT;
  if (s == "RNNT+L_C") return FinetuneLoss::RNNT_plus_C;
  return std::nullopt;
}

inline bool needs_classifier(PretrainScheme s) { return s == PretrainScheme::GCPC || s == PretrainScheme::CPC_GCPC; }

/// Which encoder layers a checkpoint initializes: all of them, or the dense
/// stack plus the first `lstm_layers` recurrent layers.
struct InitSpec {
  bool full = true;
  std::size_t lstm_layers = 0;
  bool frozen = false;
};

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t prior_steps = 1000;
  std::size_t pretrain_steps = 2000;
  std::size_t finetune_steps = 2000;
  AdamConfig adam;
  std::size_t emission_cap = 3;
  std::size_t analysis_frames = 2000;  // frames used for the separation metric
};

struct ExperimentConfig {
  CorpusConfig corpus;
  EncoderTopology encoder;
  ClassifierTopology classifier;
  TransducerTopology transducer;
  ContrastiveConfig contrastive;  // kappa here is unused; see kappa_cpc / kappa_gcpc
  double kappa_cpc = 0.1;
  double kappa_gcpc = 0.01;
  TrainConfig train;
  PretrainScheme scheme = PretrainScheme::GCPC;
  FinetuneLoss finetune_loss = FinetuneLoss::RNNT;
  InitSpec init;
  std::uint64_t seed = 1;

  ContrastiveConfig cpc_config() const {
    auto c = contrastive;
    c.kappa = kappa_cpc;
    c.target_mode = TargetMode::Latent;
    return c;
  }
  ContrastiveConfig gcpc_config() const {
    auto c = contrastive;
    c.kappa = kappa_gcpc;
    c.target_mode = TargetMode::Guidance;
    return c;
  }
};

/// Deterministic child seed for a named stage of a run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage, std::uint64_t index = 0) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : stage) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
  h ^= seed + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  h ^= index * 0xD6E8FEB86659FD93ULL;
  h ^= h >> 32;
  h *= 0xD6E8FEB86659FD93ULL;
  h ^= h >> 32;
  return h;
}

/// Utterance order for minibatches: reshuffled every epoch, deterministic in the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    if (n == 0) throw ContractError("cannot batch an empty split");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Runs `steps` Adam updates of `loss_fn`, which builds the batch objective on
/// a fresh graph and returns the scalar root. Returns the loss curve.
template <class LossFn>
std::vector<double> train_loop(ParameterStore& params, const AdamConfig& adam, std::size_t steps, LossFn&& loss_fn) {
  AdamState state{adam, 0, {}};
  std::vector<double> curve;
  curve.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    Graph g;
    Var loss = loss_fn(g, step);
    curve.push_back(loss.value().item());
    adam_step(params, backward_pass(loss, params), state);
  }
  return curve;
}

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// Prior-knowledge phone classifier

struct PhoneClassifier {
  ClassifierTopology topology;
  std::size_t phones = 0;
  ParameterStore params;  // all entries frozen once training is done
};

struct PriorResult {
  PhoneClassifier classifier;
  double frame_accuracy = 0.0;  // on held-out labeled utterances
  std::vector<double> loss_curve;
};

inline double classifier_frame_accuracy(const PhoneClassifier& clf, std::span<const Utterance* const> utts) {
  std::size_t correct = 0, total = 0;
  for (const Utterance* u : utts) {
    Graph g;
    const Tensor& logits = run_phone_classifier(g, u->frames, clf.params).value();
    for (std::size_t t = 0; t < u->length(); ++t) {
      auto row = logits.data().subspan(t * logits.cols(), logits.cols());
      const auto best = static_cast<std::size_t>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
      correct += best == u->frame_labels[t];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

/// Trains the frame classifier with cross-entropy on the labeled split (the
/// last tenth of it held out for accuracy) and returns it frozen.
inline PriorResult train_prior_classifier(const Corpus& corpus, const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto labeled = corpus.split(Split::TrainLabeled);
  if (labeled.empty()) throw ContractError("train_prior_classifier: labeled split is empty");
  const std::size_t held = labeled.size() >= 10 ? labeled.size() / 10 : 0;
  const std::vector<const Utterance*> train(labeled.begin(), labeled.end() - static_cast<std::ptrdiff_t>(held));
  const std::vector<const Utterance*> heldout = held ? std::vector<const Utterance*>(labeled.end() - static_cast<std::ptrdiff_t>(held), labeled.end()) : train;

  PriorResult r;
  r.classifier.topology = cfg.classifier;
  r.classifier.phones = corpus.inventory.phones();
  std::mt19937_64 rng(derive_seed(seed, "prior.init"));
  init_classifier(r.classifier.params, cfg.classifier, corpus.inventory.dim(), r.classifier.phones, rng);

  BatchSampler sampler(train.size(), derive_seed(seed, "prior.batches"));
  r.loss_curve = train_loop(r.classifier.params, cfg.train.adam, cfg.train.prior_steps, [&](Graph& g, std::size_t) {
    std::vector<Var> losses;
    for (auto i : sampler.next(cfg.train.batch_size)) {
      Var logits = run_phone_classifier(g, train[i]->frames, r.classifier.params);
      losses.push_back(frame_cross_entropy(g, logits, train[i]->frame_labels));
    }
    return g.scale(g.add_scalars(losses), 1.0 / static_cast<double>(losses.size()));
  });
  for (auto& e : r.classifier.params.entries()) e.trainable = false;
  r.frame_accuracy = classifier_frame_accuracy(r.classifier, heldout);
  return r;
}

// ---------------------------------------------------------------------------
// Pre-training

struct Checkpoint {
  std::string kind = "encoder";  // encoder | prior | transducer
  PretrainScheme scheme = PretrainScheme::Scratch;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  ParameterStore params;  // empty for Scratch
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss_curve;
};

/// Frozen classifier logits for an utterance, entered as a graph constant.
inline Tensor prior_logits(const PhoneClassifier& clf, const Tensor& features) {
  Graph g;
  return run_phone_classifier(g, features, clf.params).value();
}

/// Per-utterance pre-training objective. `logits` must be provided for the
/// guided schemes. Utterances shorter than K contribute to the steps they support.
inline Var pretrain_objective(Graph& g, PretrainScheme scheme, const ParameterStore& params, const ExperimentConfig& cfg,
                              const Utterance& u, const Tensor* logits, std::uint64_t neg_seed) {
  EncoderOutput enc = run_encoder(g, u.frames, params, cfg.encoder);
  switch (scheme) {
    case PretrainScheme::PCE: {
      Var out = g.affine(enc.contexts, g.param(params, "pce.out.W"), g.param(params, "pce.out.b"));
      return frame_cross_entropy(g, out, u.frame_labels);
    }
    case PretrainScheme::CPC:
      return contrastive_loss(g, enc.latents, enc.contexts, params, "heads", cfg.cpc_config(), neg_seed, true);
    case PretrainScheme::GCPC:
    case PretrainScheme::CPC_GCPC: {
      if (logits == nullptr) throw DependencyError("guided contrastive loss needs prior classifier logits");
      Var q = run_guidance(g, g.constant(*logits), params, cfg.encoder);
      Var guided = contrastive_loss(g, q, enc.contexts, params, "gheads", cfg.gcpc_config(), neg_seed, true);
      if (scheme == PretrainScheme::GCPC) return guided;
      Var regular = contrastive_loss(g, enc.latents, enc.contexts, params, "heads", cfg.cpc_config(), neg_seed, true);
      return joint_contrastive_loss(g, regular, guided);
    }
    case PretrainScheme::Scratch:
      break;
  }
  throw ContractError("no pre-training objective for scheme " + scheme_name(scheme));
}

inline ParameterStore init_pretrain_params(PretrainScheme scheme, const ExperimentConfig& cfg, std::size_t phones,
                                           std::uint64_t seed) {
  ParameterStore p;
  std::mt19937_64 rng(derive_seed(seed, "pretrain.init"));
  init_encoder(p, cfg.encoder, rng);
  const std::size_t dc = cfg.encoder.context_dim();
  if (scheme == PretrainScheme::PCE) init_affine(p, "pce.out", dc, phones, rng);
  if (scheme == PretrainScheme::CPC || scheme == PretrainScheme::CPC_GCPC)
    init_step_heads(p, "heads", cfg.contrastive.K, cfg.encoder.latent_dim(), dc, rng);
  if (needs_classifier(scheme)) {
    init_guidance(p, cfg.encoder, phones, rng);
    init_step_heads(p, "gheads", cfg.contrastive.K, cfg.encoder.guidance_dim(phones), dc, rng);
  }
  return p;
}

/// Trains the encoder under `scheme`. CPC/GCPC use the unlabeled split; PCE
/// needs frame labels and uses the labeled split. The checkpoint holds exactly
/// the parameters that were trained.
inline PretrainResult pretrain_encoder(const Corpus& corpus, PretrainScheme scheme, const ExperimentConfig& cfg,
                                       std::uint64_t seed, const PhoneClassifier* classifier = nullptr) {
  PretrainResult r;
  r.checkpoint.scheme = scheme;
  r.checkpoint.seed = seed;
  if (scheme == PretrainScheme::Scratch) return r;
  if (needs_classifier(scheme) && classifier == nullptr)
    throw DependencyError(scheme_name(scheme) + " pre-training requires a trained phone classifier");

  const auto utts = corpus.split(scheme == PretrainScheme::PCE ? Split::TrainLabeled : Split::PretrainUnlabeled);
  if (utts.empty()) throw ContractError("pretrain_encoder: training split is empty");
  std::vector<Tensor> logits;
  if (classifier != nullptr && needs_classifier(scheme)) {
    logits.reserve(utts.size());
    for (const Utterance* u : utts) logits.push_back(prior_logits(*classifier, u->frames));
  }

  ParameterStore params = init_pretrain_params(scheme, cfg, corpus.inventory.phones(), seed);
  BatchSampler sampler(utts.size(), derive_seed(seed, "pretrain.batches"));
  const std::uint64_t neg_base = derive_seed(seed, "pretrain.negatives");
  r.loss_curve = train_loop(params, cfg.train.adam, cfg.train.pretrain_steps, [&](Graph& g, std::size_t step) {
    std::vector<Var> losses;
    for (auto i : sampler.next(cfg.train.batch_size)) {
      const Tensor* lg = logits.empty() ? nullptr : &logits[i];
      const Utterance& u = *utts[i];
      if (scheme != PretrainScheme::PCE && u.length() < 2) continue;
      losses.push_back(pretrain_objective(g, scheme, params, cfg, u, lg, derive_seed(neg_base, "step", step * 65536 + i)));
    }
    if (losses.empty()) return g.constant(Tensor::scalar(0.0));
    return g.scale(g.add_scalars(losses), 1.0 / static_cast<double>(losses.size()));
  });
  r.checkpoint.params = std::move(params);
  return r;
}

// ---------------------------------------------------------------------------
// Downstream model

inline bool in_init_prefix(const std::string& name, const InitSpec& init) {
  if (name.rfind("enc.dense", 0) == 0) return true;
  if (name.rfind("enc.lstm", 0) != 0) return false;
  if (init.full) return true;
  const std::size_t layer = std::stoul(name.substr(8, name.find('.', 8) - 8));
  return layer < init.lstm_layers;
}

/// Fresh transducer with the checkpoint's encoder prefix copied in. Step
/// heads, guidance layers and other pre-training-only parameters are dropped.
inline TransducerModel initialize_downstream(const Checkpoint& ckpt, const InitSpec& init, const ExperimentConfig& cfg,
                                             std::size_t vocab, std::uint64_t seed) {
  if (!init.full && init.lstm_layers > cfg.encoder.lstm_layers)
    throw ContractError("init prefix deeper than the encoder (" + std::to_string(init.lstm_layers) + " > " +
                        std::to_string(cfg.encoder.lstm_layers) + " recurrent layers)");
  std::mt19937_64 rng(derive_seed(seed, "downstream.init"));
  TransducerModel m = make_transducer(cfg.encoder, cfg.transducer, vocab, rng);
  for (const auto& e : ckpt.params.entries()) {
    if (!in_init_prefix(e.name, init)) continue;
    if (!m.params.contains(e.name)) throw DimensionError("checkpoint parameter '" + e.name + "' has no place in the topology");
    if (m.params.get(e.name).shape() != e.value.shape())
      throw DimensionError("checkpoint parameter '" + e.name + "' has shape " + shape_str(e.value.shape()) +
                           ", topology expects " + shape_str(m.params.get(e.name).shape()));
    m.params.set(e.name, e.value, !init.frozen);
  }
  return m;
}

struct FinetuneTerms {
  Var rnnt;
  std::optional<Var> contrastive;  // absent when not selected or the utterance is too short
  Var total;
};

/// Per-utterance fine-tuning objective: L_RNNT, plus L_C (latent targets, heads
/// "ft_heads") when the joint loss is selected and T > K.
inline FinetuneTerms finetune_objective(Graph& g, const TransducerModel& m, const Utterance& u, FinetuneLoss loss,
                                        const ExperimentConfig& cfg, std::uint64_t neg_seed) {
  TransducerOutput out = transducer_forward(g, m, u.frames, u.tokens);
  FinetuneTerms terms{rnnt_loss(g, out.logprobs, u.length(), u.tokens, m.blank()), std::nullopt, {}};
  terms.total = terms.rnnt;
  if (loss == FinetuneLoss::RNNT_plus_C && u.length() > cfg.contrastive.K) {
    terms.contrastive = contrastive_loss(g, out.encoder.latents, out.encoder.contexts, m.params, "ft_heads",
                                         cfg.cpc_config(), neg_seed);
    terms.total = g.add(terms.rnnt, *terms.contrastive);
  }
  return terms;
}

/// Adds the auxiliary contrastive heads the joint fine-tuning loss needs.
inline void ensure_finetune_heads(TransducerModel& m, const ExperimentConfig& cfg, std::uint64_t seed) {
  if (m.params.contains("ft_heads.k1.W")) return;
  std::mt19937_64 rng(derive_seed(seed, "finetune.heads"));
  init_step_heads(m.params, "ft_heads", cfg.contrastive.K, cfg.encoder.latent_dim(), cfg.encoder.context_dim(), rng);
}

struct FinetuneResult {
  std::vector<double> loss_curve;
  std::size_t skipped_contrastive = 0;  // utterance presentations with T <= K
};

inline FinetuneResult finetune_transducer(TransducerModel& m, const Corpus& corpus, FinetuneLoss loss,
                                          const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto utts = corpus.split(Split::TrainLabeled);
  if (utts.empty()) throw ContractError("finetune_transducer: labeled split is empty");
  if (loss == FinetuneLoss::RNNT_plus_C) ensure_finetune_heads(m, cfg, seed);
  FinetuneResult r;
  BatchSampler sampler(utts.size(), derive_seed(seed, "finetune.batches"));
  const std::uint64_t neg_base = derive_seed(seed, "finetune.negatives");
  r.loss_curve = train_loop(m.params, cfg.train.adam, cfg.train.finetune_steps, [&](Graph& g, std::size_t step) {
    std::vector<Var> losses;
    for (auto i : sampler.next(cfg.train.batch_size)) {
      auto terms = finetune_objective(g, m, *utts[i], loss, cfg, derive_seed(neg_base, "step", step * 65536 + i));
      if (loss == FinetuneLoss::RNNT_plus_C && !terms.contrastive) ++r.skipped_contrastive;
      losses.push_back(terms.total);
    }
    return g.scale(g.add_scalars(losses), 1.0 / static_cast<double>(losses.size()));
  });
  return r;
}

/// Summed S/I/D counts of greedy hypotheses over the test split.
inline AlignmentCounts evaluate_transducer(const TransducerModel& m, const Corpus& corpus, std::size_t emission_cap) {
  AlignmentCounts total;
  for (const Utterance* u : corpus.split(Split::Test)) total += align_and_count_errors(u->tokens, greedy_decode(m, u->frames, emission_cap));
  return total;
}

/// Frame-level context embeddings c_t of an encoder over the test split, with
/// phone labels; at most `max_frames` frames, taken in corpus order.
inline EmbeddingMatrix context_embeddings(const ParameterStore& params, const EncoderTopology& topo, const Corpus& corpus,
                                          std::size_t max_frames) {
  std::vector<double> rows;
  std::vector<std::uint16_t> labels;
  std::size_t width = topo.context_dim();
  for (const Utterance* u : corpus.split(Split::Test)) {
    if (labels.size() >= max_frames) break;
    Graph g;
    const Tensor& c = run_encoder(g, u->frames, params, topo).contexts.value();
    for (std::size_t t = 0; t < u->length() && labels.size() < max_frames; ++t) {
      for (std::size_t j = 0; j < width; ++j) rows.push_back(c.at(t, j));
      labels.push_back(u->frame_labels[t]);
    }
  }
  if (labels.empty()) throw ContractError("context_embeddings: test split is empty");
  return {Tensor::matrix(labels.size(), width, std::move(rows)), std::move(labels)};
}

/// Fisher ratio over the phones that occur at least twice among the rows.
inline double separation_score(const EmbeddingMatrix& E) {
  std::map<std::uint16_t, std::size_t> count;
  for (auto l : E.labels) ++count[l];
  std::vector<double> rows;
  std::vector<std::uint16_t> labels;
  const std::size_t w = E.rows.cols();
  for (std::size_t i = 0; i < E.labels.size(); ++i) {
    if (count[E.labels[i]] < 2) continue;
    for (std::size_t j = 0; j < w; ++j) rows.push_back(E.rows.at(i, j));
    labels.push_back(E.labels[i]);
  }
  const std::size_t n = labels.size();
  return fisher_ratio({Tensor::matrix(n, w, std::move(rows)), std::move(labels)});
}

// ---------------------------------------------------------------------------
// Comparison grid

struct RunMetrics {
  std::string scheme;  // pre-training scheme, with "|RNNT+L_C" appended for joint fine-tuning
  PretrainScheme pretrain = PretrainScheme::Scratch;
  FinetuneLoss finetune = FinetuneLoss::RNNT;
  std::uint64_t seed = 0;
  std::vector<double> pretrain_curve;
  std::vector<double> finetune_curve;
  AlignmentCounts counts;
  double wer = 0.0;
  std::optional<double> werr;
  std::optional<double> fisher;  // separation of pre-trained context embeddings
  std::size_t skipped_contrastive = 0;
  double wall_seconds = 0.0;
  std::string error;  // non-empty when the cell failed
};

inline std::string cell_label(PretrainScheme s, FinetuneLoss l) {
  return l == FinetuneLoss::RNNT ? scheme_name(s) : scheme_name(s) + "|" + finetune_loss_name(l);
}

struct AggregateRow {
  std::string scheme;
  std::size_t runs = 0;
  double wer_mean = 0.0, wer_std = 0.0;
  double werr_mean = 0.0, werr_std = 0.0;
  double fisher_mean = 0.0;
  bool has_fisher = false;
};

struct ComparisonTable {
  std::vector<RunMetrics> rows;
  std::vector<AggregateRow> aggregates;
  std::vector<double> prior_accuracy;  // one per seed that trained a classifier
  // One entry per guided pre-training: classifier unchanged by it.
  std::vector<std::pair<std::uint64_t, bool>> prior_unchanged;
};

inline void fill_werr(std::vector<RunMetrics>& rows) {
  std::map<std::uint64_t, const RunMetrics*> base;
  for (const auto& r : rows)
    if (r.error.empty() && r.pretrain == PretrainScheme::Scratch && r.finetune == FinetuneLoss::RNNT) base[r.seed] = &r;
  for (auto& r : rows) {
    if (!r.error.empty()) continue;
    auto it = base.find(r.seed);
    if (it == base.end()) continue;
    if (&r == it->second) {
      r.werr = 0.0;
      continue;
    }
    try {
      r.werr = compute_wer_werr(r.counts, it->second->counts).werr;
    } catch (const NumericError&) {
      r.werr.reset();
    }
  }
}

inline std::vector<AggregateRow> aggregate(const std::vector<RunMetrics>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunMetrics*>> by;
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    if (!by.count(r.scheme)) order.push_back(r.scheme);
    by[r.scheme].push_back(&r);
  }
  auto stats = [](const std::vector<double>& v) -> std::pair<double, double> {
    if (v.empty()) return {0.0, 0.0};
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
  };
  std::vector<AggregateRow> out;
  for (const auto& name : order) {
    AggregateRow a;
    a.scheme = name;
    std::vector<double> wer, werr, fisher;
    for (const auto* r : by[name]) {
      wer.push_back(r->wer);
      if (r->werr) werr.push_back(*r->werr);
      if (r->fisher) fisher.push_back(*r->fisher);
    }
    a.runs = wer.size();
    std::tie(a.wer_mean, a.wer_std) = stats(wer);
    std::tie(a.werr_mean, a.werr_std) = stats(werr);
    a.has_fisher = !fisher.empty();
    a.fisher_mean = stats(fisher).first;
    out.push_back(a);
  }
  return out;
}

/// Pre-train → initialize → fine-tune → evaluate for every (scheme, loss, seed).
/// Each seed gets its own corpus and classifier; WERR is against the
/// (Scratch, RNNT) cell of the same seed, which is always run. A failing cell
/// is recorded with its error and the grid continues.
inline ComparisonTable run_comparison(const ExperimentConfig& base_cfg, const std::vector<PretrainScheme>& schemes,
                                      const std::vector<FinetuneLoss>& losses, const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const RunMetrics&)>& on_row = {}) {
  if (seeds.empty()) throw ContractError("run_comparison: need at least one seed");
  std::vector<std::pair<PretrainScheme, FinetuneLoss>> cells{{PretrainScheme::Scratch, FinetuneLoss::RNNT}};
  for (auto s : schemes)
    for (auto l : losses)
      if (std::find(cells.begin(), cells.end(), std::pair{s, l}) == cells.end()) cells.emplace_back(s, l);

  ComparisonTable table;
  for (auto seed : seeds) {
    ExperimentConfig cfg = base_cfg;
    cfg.seed = seed;
    const Corpus corpus = generate_corpus(cfg.corpus, derive_seed(seed, "corpus"));
    std::optional<PriorResult> prior;
    std::string prior_error;
    std::map<PretrainScheme, PretrainResult> pretrained;
    std::map<PretrainScheme, std::string> pretrain_error;

    for (const auto& [scheme, loss] : cells) {
      RunMetrics m;
      m.scheme = cell_label(scheme, loss);
      m.pretrain = scheme;
      m.finetune = loss;
      m.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        if (needs_classifier(scheme) && !prior && prior_error.empty()) {
          try {
            prior = train_prior_classifier(corpus, cfg, derive_seed(seed, "prior"));
            table.prior_accuracy.push_back(prior->frame_accuracy);
          } catch (const std::exception& e) {
            prior_error = e.what();
          }
        }
        if (!pretrained.count(scheme) && !pretrain_error.count(scheme)) {
          try {
            const std::optional<ParameterStore> before =
                prior ? std::optional<ParameterStore>(prior->classifier.params) : std::nullopt;
            pretrained.emplace(scheme, pretrain_encoder(corpus, scheme, cfg, derive_seed(seed, "pretrain"),
                                                        prior ? &prior->classifier : nullptr));
            if (needs_classifier(scheme) && before)
              table.prior_unchanged.emplace_back(seed, *before == prior->classifier.params);
          } catch (const std::exception& e) {
            pretrain_error[scheme] = e.what();
          }
        }
        if (auto it = pretrain_error.find(scheme); it != pretrain_error.end()) throw Error(it->second);
        const PretrainResult& pre = pretrained.at(scheme);
        m.pretrain_curve = pre.loss_curve;
        if (scheme != PretrainScheme::Scratch)
          m.fisher = separation_score(context_embeddings(pre.checkpoint.params, cfg.encoder, corpus, cfg.train.analysis_frames));

        TransducerModel model = initialize_downstream(pre.checkpoint, cfg.init, cfg, corpus.inventory.phones(),
                                                      derive_seed(seed, "downstream"));
        auto ft = finetune_transducer(model, corpus, loss, cfg, derive_seed(seed, "finetune"));
        m.finetune_curve = std::move(ft.loss_curve);
        m.skipped_contrastive = ft.skipped_contrastive;
        m.counts = evaluate_transducer(model, corpus, cfg.train.emission_cap);
        m.wer = word_error_rate(m.counts);
      } catch (const std::exception& e) {
        m.error = e.what();
      }
      m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      table.rows.push_back(std::move(m));
    }
  }
  fill_werr(table.rows);
  if (on_row)
    for (const auto& r : table.rows) on_row(r);
  table.aggregates = aggregate(table.rows);
  return table;
}

}  // namespace gcpc
