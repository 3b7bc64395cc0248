#pragma once

// Synthetic phone-sequence corpus: one Gaussian emission state per phone,
// geometric durations, tokens = the phone sequence with repeats collapsed.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gcpc/binio.hpp"
#include "gcpc/numcore.hpp"

namespace gcpc {

enum class Split : std::uint8_t { PretrainUnlabeled = 0, TrainLabeled = 1, Test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::PretrainUnlabeled: return "pretrain-unlabeled";
    case Split::TrainLabeled: return "train-labeled";
    case Split::Test: return "test";
  }
  return "?";
}

struct CorpusConfig {
  std::size_t phones = 8;
  std::size_t dim = 16;
  double sigma = 0.5;
  double mean_norm = 2.0;
  double mean_duration = 4.0;  // frames; geometric on {1, 2, ...}
  std::size_t min_phones = 3;
  std::size_t max_phones = 8;
  std::size_t pretrain_utts = 2000;
  std::size_t train_utts = 1000;
  std::size_t test_utts = 200;

  void validate() const {
    if (phones < 2) throw ContractError("corpus: need at least 2 phones");
    if (phones > 65535) throw ContractError("corpus: phone ids must fit in 16 bits");
    if (dim < 2) throw ContractError("corpus: feature dimension must be >= 2");
    if (!(sigma >= 0.0)) throw ContractError("corpus: sigma must be >= 0");
    if (!(mean_norm > 0.0)) throw ContractError("corpus: mean_norm must be > 0");
    if (!(mean_duration >= 1.0)) throw ContractError("corpus: mean_duration must be >= 1");
    if (min_phones < 1 || max_phones < min_phones) throw ContractError("corpus: invalid phone count range");
    if (pretrain_utts + train_utts + test_utts == 0) throw ContractError("corpus: need at least one utterance");
  }

  std::size_t split_size(Split s) const {
    switch (s) {
      case Split::PretrainUnlabeled: return pretrain_utts;
      case Split::TrainLabeled: return train_utts;
      case Split::Test: return test_utts;
    }
    return 0;
  }

  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

struct PhoneInventory {
  Tensor means = Tensor::zeros({1, 1});          // [P × d]
  std::vector<double> duration_success{1.0};  // geometric parameter per phone
  double sigma = 0.0;

  std::size_t phones() const noexcept { return means.rows(); }
  std::size_t dim() const noexcept { return means.cols(); }
  friend bool operator==(const PhoneInventory&, const PhoneInventory&) = default;
};

struct Utterance {
  Split split = Split::PretrainUnlabeled;
  Tensor frames;                            // [T × d]
  std::vector<std::uint16_t> frame_labels;  // length T
  std::vector<std::uint16_t> tokens;        // collapsed phone runs

  std::size_t length() const noexcept { return frame_labels.size(); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Corpus {
  CorpusConfig config;
  std::uint64_t seed = 0;
  PhoneInventory inventory;
  std::vector<Utterance> utterances;

  std::vector<const Utterance*> split(Split s) const {
    std::vector<const Utterance*> out;
    for (const auto& u : utterances)
      if (u.split == s) out.push_back(&u);
    return out;
  }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Collapses runs of equal labels: [a,a,b,b,a] -> [a,b,a].
inline std::vector<std::uint16_t> collapse_runs(const std::vector<std::uint16_t>& labels) {
  std::vector<std::uint16_t> out;
  for (auto l : labels)
    if (out.empty() || out.back() != l) out.push_back(l);
  return out;
}

/// Phone means: Gram-Schmidt on Gaussian draws scaled to `norm` (random unit
/// directions when P > d, where orthogonality is impossible).
inline PhoneInventory make_inventory(const CorpusConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t P = cfg.phones, d = cfg.dim;
  std::vector<std::vector<double>> basis;
  std::vector<double> means;
  means.reserve(P * d);
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<double> v(d);
    double norm = 0.0;
    do {
      for (auto& x : v) x = nd(rng);
      if (p < d)
        for (const auto& b : basis) {
          double dot = 0.0;
          for (std::size_t i = 0; i < d; ++i) dot += v[i] * b[i];
          for (std::size_t i = 0; i < d; ++i) v[i] -= dot * b[i];
        }
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (auto& x : v) x /= norm;
    basis.push_back(v);
    for (double x : v) means.push_back(x * cfg.mean_norm);
  }
  return {Tensor::matrix(P, d, std::move(means)), std::vector<double>(P, 1.0 / cfg.mean_duration), cfg.sigma};
}

inline Utterance generate_utterance(const CorpusConfig& cfg, const PhoneInventory& inv, Split split,
                                    std::mt19937_64& rng) {
  const std::size_t d = inv.dim();
  std::uniform_int_distribution<std::size_t> count(cfg.min_phones, cfg.max_phones);
  std::uniform_int_distribution<std::size_t> phone(0, inv.phones() - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  Utterance u;
  u.split = split;
  const std::size_t n = count(rng);
  std::vector<double> frames;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = phone(rng);
    std::geometric_distribution<std::size_t> extra(inv.duration_success[p]);
    const std::size_t dur = 1 + extra(rng);
    for (std::size_t f = 0; f < dur; ++f) {
      u.frame_labels.push_back(static_cast<std::uint16_t>(p));
      for (std::size_t j = 0; j < d; ++j) {
        double x = inv.means.at(p, j);
        if (inv.sigma > 0.0) x += inv.sigma * noise(rng);
        frames.push_back(x);
      }
    }
  }
  u.frames = Tensor::matrix(u.frame_labels.size(), d, std::move(frames));
  u.tokens = collapse_runs(u.frame_labels);
  return u;
}

/// Deterministic in (cfg, seed). Each utterance draws from its own stream
/// keyed by (seed, split, index), so splits never share randomness.
inline Corpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Corpus c;
  c.config = cfg;
  c.seed = seed;
  {
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xA11u};
    std::mt19937_64 rng(ss);
    c.inventory = make_inventory(cfg, rng);
  }
  for (Split s : {Split::PretrainUnlabeled, Split::TrainLabeled, Split::Test}) {
    for (std::size_t i = 0; i < cfg.split_size(s); ++i) {
      std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(s) + 1u, static_cast<std::uint32_t>(i)};
      std::mt19937_64 rng(ss);
      c.utterances.push_back(generate_utterance(cfg, c.inventory, s, rng));
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Dataset file: "GCDS", u32 version, config block, inventory, utterances.

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<char> encode_corpus(const Corpus& c) {
  binio::Writer w;
  w.bytes("GCDS");
  w.u32(kDatasetVersion);
  const auto& k = c.config;
  w.u32(static_cast<std::uint32_t>(k.phones));
  w.u32(static_cast<std::uint32_t>(k.dim));
  w.f64(k.sigma);
  w.f64(k.mean_norm);
  w.f64(k.mean_duration);
  w.u32(static_cast<std::uint32_t>(k.min_phones));
  w.u32(static_cast<std::uint32_t>(k.max_phones));
  w.u32(static_cast<std::uint32_t>(k.pretrain_utts));
  w.u32(static_cast<std::uint32_t>(k.train_utts));
  w.u32(static_cast<std::uint32_t>(k.test_utts));
  w.u64(c.seed);

  const auto& inv = c.inventory;
  w.u32(static_cast<std::uint32_t>(inv.phones()));
  w.u32(static_cast<std::uint32_t>(inv.dim()));
  for (double v : inv.means.data()) w.f64(v);
  for (double v : inv.duration_success) w.f64(v);
  w.f64(inv.sigma);

  w.u32(static_cast<std::uint32_t>(c.utterances.size()));
  for (const auto& u : c.utterances) {
    w.u8(static_cast<std::uint8_t>(u.split));
    w.u32(static_cast<std::uint32_t>(u.length()));
    for (double v : u.frames.data()) w.f64(v);
    for (auto l : u.frame_labels) w.u16(l);
    w.u32(static_cast<std::uint32_t>(u.tokens.size()));
    for (auto t : u.tokens) w.u16(t);
  }
  return w.buffer();
}

inline Corpus decode_corpus(const std::vector<char>& bytes) {
  binio::Reader r(bytes);
  if (r.bytes(4, "magic") != "GCDS") throw FormatError("bad dataset magic", 0);
  const auto version = r.u32("version");
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version), 4);

  Corpus c;
  auto& k = c.config;
  k.phones = r.u32("config.phones");
  k.dim = r.u32("config.dim");
  k.sigma = r.f64("config.sigma");
  k.mean_norm = r.f64("config.mean_norm");
  k.mean_duration = r.f64("config.mean_duration");
  k.min_phones = r.u32("config.min_phones");
  k.max_phones = r.u32("config.max_phones");
  k.pretrain_utts = r.u32("config.pretrain_utts");
  k.train_utts = r.u32("config.train_utts");
  k.test_utts = r.u32("config.test_utts");
  c.seed = r.u64("seed");

  const std::size_t P = r.u32("inventory.phones");
  const std::size_t d = r.u32("inventory.dim");
  if (P == 0 || d == 0) r.fail("empty phone inventory");
  if (r.remaining() / 8 < P * d) r.fail("truncated input while reading inventory means");
  std::vector<double> means(P * d);
  for (auto& v : means) v = r.f64("inventory.means");
  c.inventory.means = Tensor::matrix(P, d, std::move(means));
  c.inventory.duration_success.resize(P);
  for (auto& v : c.inventory.duration_success) v = r.f64("inventory.durations");
  c.inventory.sigma = r.f64("inventory.sigma");

  const std::size_t n = r.u32("utterance count");
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u;
    const auto split = r.u8("utterance.split");
    if (split > 2) r.fail("invalid split tag " + std::to_string(split));
    u.split = static_cast<Split>(split);
    const std::size_t T = r.u32("utterance.T");
    if (T == 0) r.fail("utterance with zero frames");
    if (r.remaining() / 8 < T * d) r.fail("truncated input while reading frames");
    std::vector<double> frames(T * d);
    for (auto& v : frames) v = r.f64("utterance.frames");
    u.frames = Tensor::matrix(T, d, std::move(frames));
    u.frame_labels.resize(T);
    for (auto& l : u.frame_labels) {
      l = r.u16("utterance.frame_labels");
      if (l >= P) r.fail("frame label out of range");
    }
    const std::size_t U = r.u32("utterance.U");
    if (r.remaining() / 2 < U) r.fail("truncated input while reading tokens");
    u.tokens.resize(U);
    for (auto& t : u.tokens) t = r.u16("utterance.tokens");
    c.utterances.push_back(std::move(u));
  }
  if (!r.at_end()) r.fail("trailing bytes after last utterance");
  return c;
}

inline void write_corpus(const Corpus& c, const std::string& path) { binio::write_file(path, encode_corpus(c)); }
inline Corpus read_corpus(const std::string& path) { return decode_corpus(binio::read_file(path)); }

// ---------------------------------------------------------------------------
// Summary statistics

struct CorpusStats {
  std::vector<std::size_t> frames_per_phone;
  std::size_t total_frames = 0;
  std::map<std::size_t, std::size_t> length_histogram;  // T -> utterance count
  std::array<std::size_t, 3> split_sizes{};
};

inline CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats s;
  s.frames_per_phone.assign(c.inventory.phones(), 0);
  for (const auto& u : c.utterances) {
    for (auto l : u.frame_labels) {
      if (l >= s.frames_per_phone.size()) s.frames_per_phone.resize(l + 1u, 0);
      ++s.frames_per_phone[l];
    }
    s.total_frames += u.length();
    ++s.length_histogram[u.length()];
    ++s.split_sizes[static_cast<std::size_t>(u.split)];
  }
  return s;
}

}  // namespace gcpc
