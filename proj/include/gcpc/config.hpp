#pragma once

// Flat INI-style configuration. Keys are "section.name"; a "[section]" header
// prefixes the keys that follow it. Every key has a documented default and
// unknown keys are rejected.
//
//   [contrastive]
//   K = 4
//   kappa = 0.01      # temperature of the selected scheme
//
// resolve() returns the fully populated config and echo() prints it back in
// the same syntax, so resolve(echo(resolve(x))) == resolve(x).

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gcpc/errors.hpp"
#include "gcpc/pipeline.hpp"

namespace gcpc {

struct ResolvedConfig {
  ExperimentConfig experiment;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  // Stack shapes as configured; expanded into experiment.encoder on resolve.
  std::size_t enc_dense_layers = 2;
  std::size_t enc_dense_width = 32;
  std::size_t genc_depth = 2;
  std::size_t genc_width = 32;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list of seeds");
  return out;
}

inline std::vector<std::size_t> widths(std::size_t depth, std::size_t width) { return std::vector<std::size_t>(depth, width); }

struct Key {
  std::string name;
  std::string doc;
  std::function<void(ResolvedConfig&, const std::string&)> set;
  std::function<std::string(const ResolvedConfig&)> get;
};

template <class Field>
Key uint_key(std::string name, std::string doc, Field field) {
  return {name, std::move(doc),
          [name, field](ResolvedConfig& c, const std::string& v) { field(c) = static_cast<std::size_t>(parse_uint(name, v)); },
          [field](const ResolvedConfig& c) { return std::to_string(field(c)); }};
}

template <class Field>
Key double_key(std::string name, std::string doc, Field field) {
  return {name, std::move(doc), [name, field](ResolvedConfig& c, const std::string& v) { field(c) = parse_double(name, v); },
          [field](const ResolvedConfig& c) { return fmt_double(field(c)); }};
}

template <class Field>
Key bool_key(std::string name, std::string doc, Field field) {
  return {name, std::move(doc), [name, field](ResolvedConfig& c, const std::string& v) { field(c) = parse_bool(name, v); },
          [field](const ResolvedConfig& c) { return field(c) ? std::string("true") : std::string("false"); }};
}

#define GCPC_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

inline const std::vector<Key>& keys() {
  static const std::vector<Key> k = [] {
    std::vector<Key> v;
    // corpus
    v.push_back(uint_key("corpus.phones", "phone inventory size P", GCPC_FIELD(experiment.corpus.phones)));
    v.push_back(uint_key("corpus.dim", "feature dimension d", GCPC_FIELD(experiment.corpus.dim)));
    v.push_back(double_key("corpus.sigma", "emission noise standard deviation", GCPC_FIELD(experiment.corpus.sigma)));
    v.push_back(double_key("corpus.mean_norm", "norm of each phone mean", GCPC_FIELD(experiment.corpus.mean_norm)));
    v.push_back(double_key("corpus.mean_duration", "mean phone duration in frames (geometric)",
                           GCPC_FIELD(experiment.corpus.mean_duration)));
    v.push_back(uint_key("corpus.min_phones", "fewest phones per utterance", GCPC_FIELD(experiment.corpus.min_phones)));
    v.push_back(uint_key("corpus.max_phones", "most phones per utterance", GCPC_FIELD(experiment.corpus.max_phones)));
    v.push_back(uint_key("corpus.pretrain_utts", "unlabeled pre-training utterances", GCPC_FIELD(experiment.corpus.pretrain_utts)));
    v.push_back(uint_key("corpus.train_utts", "labeled training utterances", GCPC_FIELD(experiment.corpus.train_utts)));
    v.push_back(uint_key("corpus.test_utts", "test utterances", GCPC_FIELD(experiment.corpus.test_utts)));
    // topology
    v.push_back(uint_key("topology.frame_stack", "consecutive frames stacked per input (1 = off)",
                         GCPC_FIELD(experiment.encoder.frame_stack)));
    v.push_back(uint_key("topology.enc_dense_layers", "dense layers in the feature encoder", GCPC_FIELD(enc_dense_layers)));
    v.push_back(uint_key("topology.enc_dense_width", "width of each feature-encoder dense layer", GCPC_FIELD(enc_dense_width)));
    v.push_back(uint_key("topology.ar_layers", "LSTM layers in the context network", GCPC_FIELD(experiment.encoder.lstm_layers)));
    v.push_back(uint_key("topology.ar_width", "LSTM width of the context network", GCPC_FIELD(experiment.encoder.lstm_width)));
    v.push_back(uint_key("topology.genc_depth", "dense layers on top of the phone logits (0..3)", GCPC_FIELD(genc_depth)));
    v.push_back(uint_key("topology.genc_width", "width of the guidance dense layers (d_q)", GCPC_FIELD(genc_width)));
    v.push_back(bool_key("topology.genc_final_relu", "apply ReLU after the last guidance layer too",
                         GCPC_FIELD(experiment.encoder.guidance.relu_last)));
    v.push_back(uint_key("topology.classifier_dense_width", "prior classifier dense width",
                         GCPC_FIELD(experiment.classifier.dense_width)));
    v.push_back(uint_key("topology.classifier_lstm_width", "prior classifier LSTM width",
                         GCPC_FIELD(experiment.classifier.lstm_width)));
    v.push_back(uint_key("topology.pred_embed", "prediction network embedding size", GCPC_FIELD(experiment.transducer.embed_dim)));
    v.push_back(uint_key("topology.pred_width", "prediction network LSTM width", GCPC_FIELD(experiment.transducer.pred_width)));
    v.push_back(uint_key("topology.joint_width", "joint network hidden width", GCPC_FIELD(experiment.transducer.joint_width)));
    // contrastive
    v.push_back(uint_key("contrastive.K", "prediction steps", GCPC_FIELD(experiment.contrastive.K)));
    v.push_back(uint_key("contrastive.n_neg", "negatives per anchor", GCPC_FIELD(experiment.contrastive.n_neg)));
    v.push_back(double_key("contrastive.kappa_cpc", "temperature of the latent-target loss",
                           GCPC_FIELD(experiment.kappa_cpc)));
    v.push_back(double_key("contrastive.kappa_gcpc", "temperature of the guided loss", GCPC_FIELD(experiment.kappa_gcpc)));
    v.push_back(bool_key("contrastive.resample_per_step", "draw negatives separately for every step",
                         GCPC_FIELD(experiment.contrastive.resample_per_step)));
    v.push_back(bool_key("contrastive.positive_in_denominator", "include the positive among the softmax candidates",
                         GCPC_FIELD(experiment.contrastive.positive_in_denominator)));
    // optimizer
    v.push_back(double_key("optimizer.lr", "Adam learning rate", GCPC_FIELD(experiment.train.adam.lr)));
    v.push_back(double_key("optimizer.beta1", "Adam beta1", GCPC_FIELD(experiment.train.adam.beta1)));
    v.push_back(double_key("optimizer.beta2", "Adam beta2", GCPC_FIELD(experiment.train.adam.beta2)));
    v.push_back(double_key("optimizer.eps", "Adam epsilon", GCPC_FIELD(experiment.train.adam.eps)));
    // train
    v.push_back(uint_key("train.batch_size", "utterances per minibatch", GCPC_FIELD(experiment.train.batch_size)));
    v.push_back(uint_key("train.prior_steps", "prior classifier updates", GCPC_FIELD(experiment.train.prior_steps)));
    v.push_back(uint_key("train.pretrain_steps", "pre-training updates", GCPC_FIELD(experiment.train.pretrain_steps)));
    v.push_back(uint_key("train.finetune_steps", "fine-tuning updates", GCPC_FIELD(experiment.train.finetune_steps)));
    v.push_back(uint_key("train.emission_cap", "greedy decoding labels per frame", GCPC_FIELD(experiment.train.emission_cap)));
    v.push_back(uint_key("train.analysis_frames", "frames used by the separation analysis",
                         GCPC_FIELD(experiment.train.analysis_frames)));
    // run
    v.push_back({"run.scheme", "Scratch | PCE | CPC | GCPC | CPC+GCPC",
                 [](ResolvedConfig& c, const std::string& s) {
                   auto p = parse_scheme(s);
                   if (!p) throw ConfigError("run.scheme", "unknown scheme '" + s + "'");
                   c.experiment.scheme = *p;
                 },
                 [](const ResolvedConfig& c) { return scheme_name(c.experiment.scheme); }});
    v.push_back({"run.finetune_loss", "RNNT | RNNT+L_C",
                 [](ResolvedConfig& c, const std::string& s) {
                   auto p = parse_finetune_loss(s);
                   if (!p) throw ConfigError("run.finetune_loss", "unknown fine-tuning loss '" + s + "'");
                   c.experiment.finetune_loss = *p;
                 },
                 [](const ResolvedConfig& c) { return finetune_loss_name(c.experiment.finetune_loss); }});
    v.push_back({"run.init", "encoder layers taken from the checkpoint: full | dense+N",
                 [](ResolvedConfig& c, const std::string& s) {
                   auto& i = c.experiment.init;
                   if (s == "full") {
                     i.full = true;
                     i.lstm_layers = 0;
                   } else if (s.rfind("dense+", 0) == 0) {
                     i.full = false;
                     i.lstm_layers = parse_uint("run.init", s.substr(6));
                   } else {
                     throw ConfigError("run.init", "expected 'full' or 'dense+N', got '" + s + "'");
                   }
                 },
                 [](const ResolvedConfig& c) {
                   const auto& i = c.experiment.init;
                   return i.full ? std::string("full") : "dense+" + std::to_string(i.lstm_layers);
                 }});
    v.push_back(bool_key("run.init_frozen", "keep initialized encoder layers fixed during fine-tuning",
                         GCPC_FIELD(experiment.init.frozen)));
    v.push_back({"run.seed", "seed of a single run", [](ResolvedConfig& c, const std::string& s) { c.experiment.seed = parse_uint("run.seed", s); },
                 [](const ResolvedConfig& c) { return std::to_string(c.experiment.seed); }});
    v.push_back({"run.seeds", "comma-separated seeds of a comparison",
                 [](ResolvedConfig& c, const std::string& s) { c.seeds = parse_seed_list("run.seeds", s); },
                 [](const ResolvedConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
                   return out;
                 }});
    return v;
  }();
  return k;
}

#undef GCPC_FIELD

}  // namespace config_detail

/// Parses config text, fills defaults and validates. `kappa` in the
/// [contrastive] section sets the temperature of the selected scheme
/// (both temperatures for CPC+GCPC).
inline ResolvedConfig load_config_text(const std::string& text) {
  using namespace config_detail;
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line, "malformed section header on line " + std::to_string(lineno));
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value on line " + std::to_string(lineno));
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    if (values.count(key)) throw ConfigError(key, "given twice");
    values[key] = trim(std::string_view(line).substr(eq + 1));
  }

  ResolvedConfig cfg;
  std::optional<double> kappa;
  if (auto it = values.find("contrastive.kappa"); it != values.end()) {
    kappa = parse_double("contrastive.kappa", it->second);
    values.erase(it);
  }
  // run.scheme first: the shorthand kappa depends on it.
  std::vector<std::string> order{"run.scheme"};
  for (const auto& k : keys())
    if (k.name != "run.scheme") order.push_back(k.name);
  std::set<std::string> known;
  for (const auto& k : keys()) known.insert(k.name);
  for (const auto& [k, v] : values)
    if (!known.count(k)) throw ConfigError(k, "unknown key");
  for (const auto& name : order) {
    auto it = values.find(name);
    if (it == values.end()) continue;
    for (const auto& k : keys())
      if (k.name == name) k.set(cfg, it->second);
  }
  if (kappa) {
    if (!(*kappa > 0.0)) throw ConfigError("contrastive.kappa", "temperature must be > 0");
    const auto s = cfg.experiment.scheme;
    if (s == PretrainScheme::CPC || s == PretrainScheme::CPC_GCPC) cfg.experiment.kappa_cpc = *kappa;
    if (s == PretrainScheme::GCPC || s == PretrainScheme::CPC_GCPC) cfg.experiment.kappa_gcpc = *kappa;
  }

  using config_detail::widths;
  auto& e = cfg.experiment;
  e.encoder.dense.widths = widths(cfg.enc_dense_layers, cfg.enc_dense_width);
  e.encoder.guidance.widths = widths(cfg.genc_depth, cfg.genc_width);
  if (!(e.kappa_cpc > 0.0)) throw ConfigError("contrastive.kappa_cpc", "temperature must be > 0");
  if (!(e.kappa_gcpc > 0.0)) throw ConfigError("contrastive.kappa_gcpc", "temperature must be > 0");
  if (e.contrastive.K < 1) throw ConfigError("contrastive.K", "must be >= 1");
  if (e.contrastive.n_neg < 1) throw ConfigError("contrastive.n_neg", "must be >= 1");
  if (e.encoder.dense.depth() < 1) throw ConfigError("topology.enc_dense_layers", "must be >= 1");
  if (e.encoder.guidance.depth() > 3) throw ConfigError("topology.genc_depth", "must be in 0..3");
  if (e.encoder.frame_stack < 1) throw ConfigError("topology.frame_stack", "must be >= 1");
  if (e.train.batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(e.train.adam.lr > 0.0)) throw ConfigError("optimizer.lr", "must be > 0");
  if (!e.init.full && e.init.lstm_layers > e.encoder.lstm_layers)
    throw ConfigError("run.init", "prefix deeper than topology.ar_layers");
  try {
    e.corpus.validate();
  } catch (const ContractError& err) {
    throw ConfigError("corpus", err.what());
  }
  e.encoder.feature_dim = e.corpus.dim;
  return cfg;
}

inline ResolvedConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_config_text(ss.str());
}

/// Fully resolved config in loadable form, one section per key group.
inline std::string echo_config(const ResolvedConfig& cfg) {
  std::string out, section;
  for (const auto& k : config_detail::keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(cfg) + "    # " + k.doc + "\n";
  }
  return out;
}

/// FNV-1a over the echoed config; recorded in checkpoints.
inline std::uint64_t config_hash(const ResolvedConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : echo_config(cfg)) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

}  // namespace gcpc
