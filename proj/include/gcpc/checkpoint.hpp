#pragma once

// Checkpoint file: "GCPC", u32 version, scheme name, kind, u64 config hash,
// u64 seed, u32 tensor count, then per tensor: name, u8 trainable, u32 rank,
// u32 dims, f64 values. All integers and floats little-endian.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcpc/binio.hpp"
#include "gcpc/pipeline.hpp"

namespace gcpc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  binio::Writer w;
  w.bytes("GCPC");
  w.u32(kCheckpointVersion);
  w.str(scheme_name(c.scheme));
  w.str(c.kind);
  w.u64(c.config_hash);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& e : c.params.entries()) {
    w.str(e.name);
    w.u8(e.trainable ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) w.f64(v);
  }
  return w.buffer();
}

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::vector<std::string> warnings;
};

/// Decodes a checkpoint. When `expected_config_hash` is given and differs
/// from the stored one, a warning is returned rather than an error.
inline LoadedCheckpoint decode_checkpoint(const std::vector<char>& bytes,
                                          std::optional<std::uint64_t> expected_config_hash = std::nullopt) {
  binio::Reader r(bytes);
  if (r.bytes(4, "magic") != "GCPC") throw FormatError("bad checkpoint magic", 0);
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  LoadedCheckpoint out;
  auto& c = out.checkpoint;
  const auto scheme_offset = r.offset();
  const auto scheme = parse_scheme(r.str("scheme"));
  if (!scheme) throw FormatError("unknown scheme name", scheme_offset);
  c.scheme = *scheme;
  const auto kind_offset = r.offset();
  c.kind = r.str("kind");
  if (c.kind != "encoder" && c.kind != "prior" && c.kind != "transducer")
    throw FormatError("unknown checkpoint kind '" + c.kind + "'", kind_offset);
  c.config_hash = r.u64("config hash");
  c.seed = r.u64("seed");
  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("tensor name");
    const bool trainable = r.u8("trainable flag") != 0;
    const auto rank = r.u32("tensor rank");
    if (rank < 1 || rank > 2) r.fail("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u32("tensor dims");
      if (d == 0) r.fail("tensor '" + name + "' has a zero dimension");
      n *= d;
    }
    if (r.remaining() / 8 < n) r.fail("truncated tensor block for '" + name + "'");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64("tensor data");
    try {
      c.params.add(std::move(name), Tensor(std::move(shape), std::move(data)), trainable);
    } catch (const Error& e) {
      r.fail(e.what());
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  if (expected_config_hash && *expected_config_hash != c.config_hash)
    out.warnings.push_back("checkpoint was written under a different configuration (hash mismatch)");
  return out;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) { binio::write_file(path, encode_checkpoint(c)); }

inline LoadedCheckpoint load_checkpoint(const std::string& path, std::optional<std::uint64_t> expected_config_hash = std::nullopt) {
  return decode_checkpoint(binio::read_file(path), expected_config_hash);
}

}  // namespace gcpc
