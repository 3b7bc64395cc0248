#pragma once

// Command-line frontend. Every subcommand writes into a run directory:
//   config.resolved, checkpoints/, metrics.jsonl, tables/*.csv, embeddings/*.csv

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gcpc/checkpoint.hpp"
#include "gcpc/config.hpp"
#include "gcpc/errors.hpp"
#include "gcpc/eval.hpp"
#include "gcpc/pipeline.hpp"
#include "gcpc/synthdata.hpp"

namespace gcpc {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitConfig = 3, kExitData = 4, kExitNumeric = 5 };

namespace cli_detail {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct UsageError : Error {
  using Error::Error;
};

class RunDir {
 public:
  explicit RunDir(fs::path root) : root_(std::move(root)) {
    for (const char* sub : {"checkpoints", "tables", "embeddings"}) fs::create_directories(root_ / sub);
  }
  const fs::path& root() const { return root_; }
  fs::path checkpoint(const std::string& name) const { return root_ / "checkpoints" / name; }
  fs::path table(const std::string& name) const { return root_ / "tables" / name; }
  fs::path embedding(const std::string& name) const { return root_ / "embeddings" / name; }

  void write_config(const ResolvedConfig& cfg) const { write_text(root_ / "config.resolved", echo_config(cfg)); }

  void append_metric(const json& record) const {
    std::ofstream out(root_ / "metrics.jsonl", std::ios::app);
    if (!out) throw Error("cannot append to " + (root_ / "metrics.jsonl").string());
    out << record.dump() << "\n";
  }

  static void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
  }

 private:
  fs::path root_;
};

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

/// Loss curve thinned to about 100 points, always keeping the last step.
inline json curve_json(const std::vector<double>& curve) {
  json out = json::array();
  if (curve.empty()) return out;
  const std::size_t stride = std::max<std::size_t>(1, curve.size() / 100);
  for (std::size_t i = 0; i < curve.size(); i += stride) out.push_back({{"step", i}, {"loss", curve[i]}});
  if ((curve.size() - 1) % stride != 0) out.push_back({{"step", curve.size() - 1}, {"loss", curve.back()}});
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = config_detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Common {
  std::string config_path;
  std::string out_dir;
};

inline ResolvedConfig resolve(const Common& c) {
  ResolvedConfig cfg = c.config_path.empty() ? load_config_text("") : load_config_file(c.config_path);
  if (const char* env = std::getenv("GCPC_SEED"); env != nullptr && *env != '\0')
    cfg.experiment.seed = config_detail::parse_uint("GCPC_SEED", env);
  return cfg;
}

inline Corpus load_corpus_arg(const std::string& path) {
  if (path.empty()) throw UsageError("--corpus is required");
  return read_corpus(path);
}

inline Checkpoint load_checkpoint_arg(const std::string& path, const ResolvedConfig& cfg, const std::string& kind,
                                      std::ostream& err) {
  auto loaded = load_checkpoint(path, config_hash(cfg));
  for (const auto& w : loaded.warnings) err << "warning: " << path << ": " << w << "\n";
  if (loaded.checkpoint.kind != kind)
    throw FormatError("expected a " + kind + " checkpoint, got " + loaded.checkpoint.kind, 0);
  return std::move(loaded.checkpoint);
}

inline PhoneClassifier classifier_from(const Checkpoint& ckpt, const ResolvedConfig& cfg, std::size_t phones) {
  PhoneClassifier clf;
  clf.topology = cfg.experiment.classifier;
  clf.phones = phones;
  clf.params = ckpt.params;
  return clf;
}

/// Rebuilds a transducer from a checkpoint, checking every parameter the
/// configured topology needs is present with the right shape.
inline TransducerModel transducer_from(const Checkpoint& ckpt, const ResolvedConfig& cfg, std::size_t vocab) {
  std::mt19937_64 rng(0);
  TransducerModel m = make_transducer(cfg.experiment.encoder, cfg.experiment.transducer, vocab, rng);
  for (const auto& e : m.params.entries()) {
    if (!ckpt.params.contains(e.name)) throw FormatError("transducer checkpoint lacks parameter '" + e.name + "'", 0);
    if (ckpt.params.get(e.name).shape() != e.value.shape())
      throw DimensionError("parameter '" + e.name + "' has shape " + shape_str(ckpt.params.get(e.name).shape()) +
                           ", topology expects " + shape_str(e.value.shape()));
  }
  m.params = ckpt.params;
  return m;
}

inline json counts_json(const AlignmentCounts& c) {
  return {{"sub", c.substitutions}, {"ins", c.insertions}, {"del", c.deletions}, {"ref_length", c.ref_length}};
}

inline std::string comparison_csv(const std::vector<RunMetrics>& rows) {
  std::string s = "scheme,seed,wer,werr,sub,ins,del\n";
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    s += "\"" + r.scheme + "\"," + std::to_string(r.seed) + "," + fmt(r.wer) + "," + opt_fmt(r.werr) + "," +
         std::to_string(r.counts.substitutions) + "," + std::to_string(r.counts.insertions) + "," +
         std::to_string(r.counts.deletions) + "\n";
  }
  return s;
}

inline std::string summary_csv(const std::vector<AggregateRow>& rows) {
  std::string s = "scheme,runs,wer_mean,wer_std,werr_mean,werr_std,fisher_mean\n";
  for (const auto& a : rows)
    s += "\"" + a.scheme + "\"," + std::to_string(a.runs) + "," + fmt(a.wer_mean) + "," + fmt(a.wer_std) + "," +
         fmt(a.werr_mean) + "," + fmt(a.werr_std) + "," + (a.has_fisher ? fmt(a.fisher_mean) : "") + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_gen_data(const Common& c, const std::string& corpus_out, std::ostream& out) {
  const ResolvedConfig cfg = resolve(c);
  RunDir run(c.out_dir);
  run.write_config(cfg);
  const Corpus corpus = generate_corpus(cfg.experiment.corpus, derive_seed(cfg.experiment.seed, "corpus"));
  const fs::path path = corpus_out.empty() ? run.root() / "corpus.gcds" : fs::path(corpus_out);
  write_corpus(corpus, path.string());

  const CorpusStats st = corpus_stats(corpus);
  std::string csv = "phone,frames\n";
  for (std::size_t p = 0; p < st.frames_per_phone.size(); ++p)
    csv += std::to_string(p) + "," + std::to_string(st.frames_per_phone[p]) + "\n";
  RunDir::write_text(run.table("phone_frames.csv"), csv);
  csv = "frames,utterances\n";
  for (const auto& [len, n] : st.length_histogram) csv += std::to_string(len) + "," + std::to_string(n) + "\n";
  RunDir::write_text(run.table("lengths.csv"), csv);

  run.append_metric({{"stage", "gen-data"},
                     {"seed", cfg.experiment.seed},
                     {"corpus", path.string()},
                     {"utterances", corpus.utterances.size()},
                     {"total_frames", st.total_frames},
                     {"split_sizes", st.split_sizes}});
  out << "wrote " << corpus.utterances.size() << " utterances (" << st.total_frames << " frames) to " << path.string()
      << "\n";
  return kExitOk;
}

inline int cmd_train_prior(const Common& c, const std::string& corpus_path, std::ostream& out) {
  const ResolvedConfig cfg = resolve(c);
  const Corpus corpus = load_corpus_arg(corpus_path);
  RunDir run(c.out_dir);
  run.write_config(cfg);
  const auto seed = cfg.experiment.seed;
  PriorResult prior = train_prior_classifier(corpus, cfg.experiment, derive_seed(seed, "prior"));
  Checkpoint ckpt;
  ckpt.kind = "prior";
  ckpt.seed = seed;
  ckpt.config_hash = config_hash(cfg);
  ckpt.params = prior.classifier.params;
  save_checkpoint(ckpt, run.checkpoint("prior.ckpt").string());
  run.append_metric({{"stage", "train-prior"},
                     {"seed", seed},
                     {"heldout_frame_accuracy", prior.frame_accuracy},
                     {"loss_curve", curve_json(prior.loss_curve)}});
  out << "prior classifier held-out frame accuracy " << prior.frame_accuracy << "\n";
  return kExitOk;
}

inline int cmd_pretrain(const Common& c, const std::string& corpus_path, const std::string& prior_path,
                        std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(c);
  const Corpus corpus = load_corpus_arg(corpus_path);
  const auto scheme = cfg.experiment.scheme;
  std::optional<PhoneClassifier> clf;
  if (needs_classifier(scheme)) {
    if (prior_path.empty()) throw UsageError(scheme_name(scheme) + " pre-training needs --prior <checkpoint>");
    clf = classifier_from(load_checkpoint_arg(prior_path, cfg, "prior", err), cfg, corpus.inventory.phones());
  }
  RunDir run(c.out_dir);
  run.write_config(cfg);
  const auto seed = cfg.experiment.seed;
  PretrainResult r = pretrain_encoder(corpus, scheme, cfg.experiment, derive_seed(seed, "pretrain"), clf ? &*clf : nullptr);
  r.checkpoint.seed = seed;
  r.checkpoint.config_hash = config_hash(cfg);
  save_checkpoint(r.checkpoint, run.checkpoint("pretrain.ckpt").string());
  run.append_metric({{"stage", "pretrain"},
                     {"scheme", scheme_name(scheme)},
                     {"seed", seed},
                     {"loss_curve", curve_json(r.loss_curve)}});
  out << scheme_name(scheme) << " pre-training done";
  if (!r.loss_curve.empty()) out << ", final loss " << r.loss_curve.back();
  out << "\n";
  return kExitOk;
}

inline int cmd_finetune(const Common& c, const std::string& corpus_path, const std::string& ckpt_path,
                        std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(c);
  const Corpus corpus = load_corpus_arg(corpus_path);
  Checkpoint pre;
  if (!ckpt_path.empty()) pre = load_checkpoint_arg(ckpt_path, cfg, "encoder", err);
  RunDir run(c.out_dir);
  run.write_config(cfg);
  const auto& e = cfg.experiment;
  TransducerModel m = initialize_downstream(pre, e.init, e, corpus.inventory.phones(), derive_seed(e.seed, "downstream"));
  FinetuneResult ft = finetune_transducer(m, corpus, e.finetune_loss, e, derive_seed(e.seed, "finetune"));
  Checkpoint ckpt;
  ckpt.kind = "transducer";
  ckpt.scheme = pre.scheme;
  ckpt.seed = e.seed;
  ckpt.config_hash = config_hash(cfg);
  ckpt.params = m.params;
  save_checkpoint(ckpt, run.checkpoint("transducer.ckpt").string());
  const AlignmentCounts counts = evaluate_transducer(m, corpus, e.train.emission_cap);
  const double wer = word_error_rate(counts);
  run.append_metric({{"stage", "finetune"},
                     {"scheme", cell_label(pre.scheme, e.finetune_loss)},
                     {"seed", e.seed},
                     {"skipped_contrastive", ft.skipped_contrastive},
                     {"loss_curve", curve_json(ft.loss_curve)},
                     {"test_wer", wer},
                     {"counts", counts_json(counts)}});
  out << "fine-tuned " << cell_label(pre.scheme, e.finetune_loss) << ", test WER " << wer << "\n";
  return kExitOk;
}

inline int cmd_evaluate(const Common& c, const std::string& corpus_path, const std::string& ckpt_path,
                        const std::string& baseline_path, std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(c);
  const Corpus corpus = load_corpus_arg(corpus_path);
  if (ckpt_path.empty()) throw UsageError("--checkpoint is required");
  const Checkpoint ckpt = load_checkpoint_arg(ckpt_path, cfg, "transducer", err);
  RunDir run(c.out_dir);
  run.write_config(cfg);
  const std::size_t vocab = corpus.inventory.phones();
  const AlignmentCounts counts = evaluate_transducer(transducer_from(ckpt, cfg, vocab), corpus, cfg.experiment.train.emission_cap);
  std::optional<AlignmentCounts> base;
  if (!baseline_path.empty())
    base = evaluate_transducer(transducer_from(load_checkpoint_arg(baseline_path, cfg, "transducer", err), cfg, vocab),
                               corpus, cfg.experiment.train.emission_cap);
  const WERReport rep = base ? compute_wer_werr(counts, *base) : WERReport{counts, word_error_rate(counts), {}, {}, {}, {}};

  RunDir::write_text(run.table("wer.csv"), "scheme,seed,wer,werr,sub,ins,del\n\"" + scheme_name(ckpt.scheme) + "\"," +
                                                std::to_string(ckpt.seed) + "," + fmt(rep.wer) + "," + opt_fmt(rep.werr) +
                                                "," + std::to_string(counts.substitutions) + "," +
                                                std::to_string(counts.insertions) + "," + std::to_string(counts.deletions) +
                                                "\n");
  run.append_metric({{"stage", "evaluate"},
                     {"checkpoint", ckpt_path},
                     {"wer", rep.wer},
                     {"werr", opt_json(rep.werr)},
                     {"subr", opt_json(rep.subr)},
                     {"insr", opt_json(rep.insr)},
                     {"delr", opt_json(rep.delr)},
                     {"counts", counts_json(counts)}});
  out << "WER " << rep.wer << " (S=" << counts.substitutions << " I=" << counts.insertions << " D=" << counts.deletions
      << " N=" << counts.ref_length << ")";
  if (rep.werr) out << ", WERR " << *rep.werr << "%";
  out << "\n";
  return kExitOk;
}

inline int cmd_analyze(const Common& c, const std::string& corpus_path, const std::string& ckpt_path,
                       std::ostream& out, std::ostream& err) {
  const ResolvedConfig cfg = resolve(c);
  const Corpus corpus = load_corpus_arg(corpus_path);
  if (ckpt_path.empty()) throw UsageError("--checkpoint is required");
  auto loaded = load_checkpoint(ckpt_path, config_hash(cfg));
  for (const auto& w : loaded.warnings) err << "warning: " << ckpt_path << ": " << w << "\n";
  const Checkpoint& ckpt = loaded.checkpoint;
  if (ckpt.kind == "prior") throw FormatError("analyze needs an encoder or transducer checkpoint", 0);
  if (ckpt.params.size() == 0) throw FormatError("checkpoint holds no encoder parameters (Scratch)", 0);
  RunDir run(c.out_dir);
  run.write_config(cfg);

  const EmbeddingMatrix emb = context_embeddings(ckpt.params, cfg.experiment.encoder, corpus, cfg.experiment.train.analysis_frames);
  const PcaResult pca = pca_project(emb.rows, 2);
  const double fisher = separation_score(emb);
  {
    std::ofstream f(run.embedding("context_pca.csv"));
    if (!f) throw Error("cannot write " + run.embedding("context_pca.csv").string());
    write_projection_csv(f, pca.projection, emb.labels);
  }
  RunDir::write_text(run.table("fisher.csv"), "scheme,seed,frames,fisher_ratio,pc1_variance,pc2_variance,total_variance\n\"" +
                                                   scheme_name(ckpt.scheme) + "\"," + std::to_string(ckpt.seed) + "," +
                                                   std::to_string(emb.labels.size()) + "," + fmt(fisher) + "," +
                                                   fmt(pca.explained_variance[0]) + "," + fmt(pca.explained_variance[1]) +
                                                   "," + fmt(pca.total_variance) + "\n");
  run.append_metric({{"stage", "analyze"},
                     {"scheme", scheme_name(ckpt.scheme)},
                     {"seed", ckpt.seed},
                     {"frames", emb.labels.size()},
                     {"fisher_ratio", fisher},
                     {"explained_variance", pca.explained_variance},
                     {"total_variance", pca.total_variance}});
  out << "fisher ratio " << fisher << " over " << emb.labels.size() << " frames\n";
  return kExitOk;
}

inline int cmd_compare(const Common& c, std::optional<std::size_t> n_seeds, const std::string& schemes_arg,
                       const std::string& losses_arg, std::ostream& out) {
  const ResolvedConfig cfg = resolve(c);
  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (n_seeds) {
    if (*n_seeds == 0) throw UsageError("--seeds must be >= 1");
    seeds.clear();
    for (std::size_t i = 0; i < *n_seeds; ++i) seeds.push_back(cfg.experiment.seed + i);
  }
  std::vector<PretrainScheme> schemes;
  for (const auto& s : split_list(schemes_arg)) {
    auto p = parse_scheme(s);
    if (!p) throw UsageError("unknown scheme '" + s + "'");
    schemes.push_back(*p);
  }
  std::vector<FinetuneLoss> losses;
  for (const auto& s : split_list(losses_arg)) {
    auto l = parse_finetune_loss(s);
    if (!l) throw UsageError("unknown fine-tune loss '" + s + "'");
    losses.push_back(*l);
  }
  if (losses.empty()) losses.push_back(cfg.experiment.finetune_loss);

  RunDir run(c.out_dir);
  run.write_config(cfg);
  const ComparisonTable table = run_comparison(cfg.experiment, schemes, losses, seeds, [&](const RunMetrics& r) {
    json rec{{"stage", "compare"},
             {"scheme", r.scheme},
             {"seed", r.seed},
             {"wer", r.wer},
             {"werr", opt_json(r.werr)},
             {"fisher_ratio", opt_json(r.fisher)},
             {"counts", counts_json(r.counts)},
             {"skipped_contrastive", r.skipped_contrastive},
             {"pretrain_curve", curve_json(r.pretrain_curve)},
             {"finetune_curve", curve_json(r.finetune_curve)}};
    if (!r.error.empty()) rec["error"] = r.error;
    run.append_metric(rec);
  });
  RunDir::write_text(run.table("comparison.csv"), comparison_csv(table.rows));
  RunDir::write_text(run.table("summary.csv"), summary_csv(table.aggregates));

  std::size_t failed = 0;
  for (const auto& r : table.rows)
    if (!r.error.empty()) {
      ++failed;
      out << "cell " << r.scheme << " seed " << r.seed << " failed: " << r.error << "\n";
    }
  out << summary_csv(table.aggregates);
  return failed == 0 ? kExitOk : kExitNumeric;
}

}  // namespace cli_detail

/// Runs one subcommand; `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Guided contrastive pre-training experiments on synthetic phone data", "gcpc"};
  app.require_subcommand(1);

  Common common;
  std::string corpus, checkpoint, prior, baseline, schemes = "Scratch,PCE,CPC,GCPC,CPC+GCPC", losses;
  std::optional<std::size_t> n_seeds;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Config file (flat INI); defaults apply when omitted");
    sub->add_option("--out", common.out_dir, "Run directory")->default_str("run");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  add_common(gen);
  gen->add_option("--corpus", corpus, "Output dataset path (default <out>/corpus.gcds)");
  auto* tp = app.add_subcommand("train-prior", "Train the frozen phone classifier");
  add_common(tp);
  tp->add_option("--corpus", corpus, "Dataset file");
  auto* pt = app.add_subcommand("pretrain", "Pre-train the encoder under run.scheme");
  add_common(pt);
  pt->add_option("--corpus", corpus, "Dataset file");
  pt->add_option("--prior", prior, "Phone classifier checkpoint (guided schemes)");
  auto* ft = app.add_subcommand("finetune", "Fine-tune the transducer");
  add_common(ft);
  ft->add_option("--corpus", corpus, "Dataset file");
  ft->add_option("--checkpoint", checkpoint, "Pre-trained encoder checkpoint (omit for Scratch)");
  auto* ev = app.add_subcommand("evaluate", "Greedy-decode the test split and score WER");
  add_common(ev);
  ev->add_option("--corpus", corpus, "Dataset file");
  ev->add_option("--checkpoint", checkpoint, "Transducer checkpoint");
  ev->add_option("--baseline", baseline, "Baseline transducer checkpoint for WERR");
  auto* an = app.add_subcommand("analyze", "PCA projection and Fisher ratio of context embeddings");
  add_common(an);
  an->add_option("--corpus", corpus, "Dataset file");
  an->add_option("--checkpoint", checkpoint, "Encoder or transducer checkpoint");
  auto* cmp = app.add_subcommand("compare", "Run the scheme x fine-tune loss x seed grid");
  add_common(cmp);
  cmp->add_option("--seeds", n_seeds, "Number of seeds, counting up from run.seed (default: run.seeds)");
  cmp->add_option("--schemes", schemes, "Comma-separated pre-training schemes")->default_str(schemes);
  cmp->add_option("--losses", losses, "Comma-separated fine-tune losses (default: run.finetune_loss)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  if (common.out_dir.empty()) common.out_dir = "run";

  try {
    if (gen->parsed()) return cmd_gen_data(common, corpus, out);
    if (tp->parsed()) return cmd_train_prior(common, corpus, out);
    if (pt->parsed()) return cmd_pretrain(common, corpus, prior, out, err);
    if (ft->parsed()) return cmd_finetune(common, corpus, checkpoint, out, err);
    if (ev->parsed()) return cmd_evaluate(common, corpus, checkpoint, baseline, out, err);
    if (an->parsed()) return cmd_analyze(common, corpus, checkpoint, out, err);
    if (cmp->parsed()) return cmd_compare(common, n_seeds, schemes, losses, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DependencyError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace gcpc
