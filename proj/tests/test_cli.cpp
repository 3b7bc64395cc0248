#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcpc/cli.hpp"
#include "oracles.hpp"

using namespace gcpc;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(
[corpus]
pretrain_utts = 24
train_utts = 20
test_utts = 6

[train]
batch_size = 4
prior_steps = 20
pretrain_steps = 5
finetune_steps = 5
analysis_frames = 150
)";

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gcpc_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const fs::path p = dir / "tiny.ini";
  std::ofstream(p) << kTinyConfig << extra;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

int run(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST(Config, EmptyGivesDocumentedDefaults) {
  const auto c = load_config_text("");
  EXPECT_EQ(c.experiment.contrastive.K, 4u);
  EXPECT_EQ(c.experiment.kappa_cpc, 0.1);
  EXPECT_EQ(c.experiment.kappa_gcpc, 0.01);
  EXPECT_EQ(c.experiment.contrastive.n_neg, 8u);
  EXPECT_EQ(c.experiment.corpus.phones, 8u);
  EXPECT_EQ(c.experiment.corpus.pretrain_utts, 2000u);
  EXPECT_EQ(c.seeds.size(), 5u);
  const auto echo = echo_config(c);
  EXPECT_NE(echo.find("K = 4"), std::string::npos);
}

TEST(Config, KappaShorthandFollowsScheme) {
  const auto g = load_config_text("[run]\nscheme = GCPC\n[contrastive]\nkappa = 0.01\n");
  EXPECT_EQ(g.experiment.kappa_gcpc, 0.01);
  const auto c = load_config_text("[contrastive]\nkappa = 0.5\n[run]\nscheme = CPC\n");
  EXPECT_EQ(c.experiment.kappa_cpc, 0.5);
  EXPECT_EQ(c.experiment.kappa_gcpc, 0.01);
}

TEST(Config, InvalidValuesNameTheKey) {
  for (const std::string text : {"[contrastive]\nkappa = -1\n", "[contrastive]\nkappa_gcpc = 0\n"}) {
    try {
      load_config_text(text);
      FAIL() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("kappa"), std::string::npos) << e.what();
    }
  }
  EXPECT_THROW(load_config_text("[corpus]\nphonez = 3\n"), ConfigError);
  EXPECT_THROW(load_config_text("[corpus]\nphones = three\n"), ConfigError);
  EXPECT_THROW(load_config_text("[corpus]\nphones = 3\nphones = 4\n"), ConfigError);
  EXPECT_THROW(load_config_text("[run]\nscheme = BERT\n"), ConfigError);
  EXPECT_THROW(load_config_text("[topology]\ngenc_depth = 4\n"), ConfigError);
}

TEST(Config, ResolutionIsIdempotent) {
  const auto a = load_config_text("[optimizer]\nlr = 0.0003\n[run]\ninit = dense+1\nseeds = 3,4\n[corpus]\nsigma = 0.3\n");
  const auto echo = echo_config(a);
  const auto b = load_config_text(echo);
  EXPECT_EQ(echo_config(b), echo);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(load_config_text("")));
}

TEST(CheckpointIo, RoundtripIsBitExact) {
  std::mt19937_64 rng(1);
  Checkpoint c;
  c.kind = "encoder";
  c.scheme = PretrainScheme::CPC_GCPC;
  c.seed = 77;
  c.config_hash = 0x1234abcdULL;
  c.params.add("z.last", oracle::random_matrix(3, 4, rng));
  c.params.add("a.first", oracle::random_vector(5, rng), false);
  c.params.add("tiny", Tensor::vector({-0.0, 5e-324, 1.7976931348623157e308}));
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes, c.config_hash);
  EXPECT_TRUE(back.warnings.empty());
  EXPECT_EQ(back.checkpoint.scheme, c.scheme);
  EXPECT_EQ(back.checkpoint.seed, 77u);
  EXPECT_TRUE(oracle::bit_equal(back.checkpoint.params, c.params));
  EXPECT_EQ(encode_checkpoint(back.checkpoint), bytes);
  EXPECT_EQ(decode_checkpoint(bytes, 1).warnings.size(), 1u);
}

TEST(CheckpointIo, FormatErrorsCarryOffsets) {
  Checkpoint c;
  c.params.add("w", Tensor::vector({1, 2, 3}));
  auto bytes = encode_checkpoint(c);
  auto bad = bytes;
  bad[1] = 'Q';
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto v999 = bytes;
  v999[4] = static_cast<char>(999 & 0xff);
  v999[5] = static_cast<char>(999 >> 8);
  try {
    decode_checkpoint(v999);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  try {
    decode_checkpoint(truncated);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 8u);
  }
}

TEST(Cli, UnknownSubcommandPrintsUsage) {
  std::string err;
  EXPECT_EQ(run({"frobnicate"}, &err), kExitUsage);
  EXPECT_NE(err.find("gen-data"), std::string::npos);
  EXPECT_EQ(run({}, &err), kExitUsage);
}

TEST(Cli, ExitCodesForConfigAndDataErrors) {
  const auto dir = scratch_dir("codes");
  std::ofstream(dir / "bad.ini") << "[contrastive]\nkappa = -1\n";
  std::string err;
  EXPECT_EQ(run({"gen-data", "--config", (dir / "bad.ini").string(), "--out", (dir / "r").string()}, &err), kExitConfig);
  EXPECT_NE(err.find("kappa"), std::string::npos);
  std::ofstream(dir / "junk.gcds") << "not a corpus";
  EXPECT_EQ(run({"train-prior", "--corpus", (dir / "junk.gcds").string(), "--out", (dir / "r").string()}), kExitData);
  EXPECT_EQ(run({"train-prior", "--out", (dir / "r").string()}), kExitUsage);
  fs::remove_all(dir);
}

TEST(Cli, StagedPipelineWritesRunDirectory) {
  const auto dir = scratch_dir("staged");
  const auto cfg = write_config(dir, "[run]\nscheme = GCPC\n").string();
  const auto run_dir = (dir / "run").string();
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", run_dir}), kExitOk);
  const auto corpus = (dir / "run" / "corpus.gcds").string();
  ASSERT_TRUE(fs::exists(corpus));
  EXPECT_EQ(run({"pretrain", "--config", cfg, "--corpus", corpus, "--out", run_dir}), kExitUsage);
  ASSERT_EQ(run({"train-prior", "--config", cfg, "--corpus", corpus, "--out", run_dir}), kExitOk);
  ASSERT_EQ(run({"pretrain", "--config", cfg, "--corpus", corpus, "--prior", run_dir + "/checkpoints/prior.ckpt",
                 "--out", run_dir}),
            kExitOk);
  ASSERT_EQ(run({"finetune", "--config", cfg, "--corpus", corpus, "--checkpoint", run_dir + "/checkpoints/pretrain.ckpt",
                 "--out", run_dir}),
            kExitOk);
  ASSERT_EQ(run({"evaluate", "--config", cfg, "--corpus", corpus, "--checkpoint",
                 run_dir + "/checkpoints/transducer.ckpt", "--out", run_dir}),
            kExitOk);
  ASSERT_EQ(run({"analyze", "--config", cfg, "--corpus", corpus, "--checkpoint", run_dir + "/checkpoints/pretrain.ckpt",
                 "--out", run_dir}),
            kExitOk);
  EXPECT_TRUE(fs::exists(dir / "run" / "config.resolved"));
  EXPECT_EQ(load_config_file((dir / "run" / "config.resolved").string()).experiment.scheme, PretrainScheme::GCPC);
  EXPECT_EQ(line_count(dir / "run" / "metrics.jsonl"), 6u);
  EXPECT_TRUE(fs::exists(dir / "run" / "tables" / "wer.csv"));
  EXPECT_EQ(slurp(dir / "run" / "embeddings" / "context_pca.csv").substr(0, 16), "x,y,phone_label\n");
  std::size_t test_frames = 0;
  for (const Utterance* u : read_corpus(corpus).split(Split::Test)) test_frames += u->length();
  EXPECT_EQ(line_count(dir / "run" / "embeddings" / "context_pca.csv"), 1u + std::min<std::size_t>(150, test_frames));
  EXPECT_NE(slurp(dir / "run" / "tables" / "fisher.csv").find("fisher_ratio"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, SeedEnvironmentOverride) {
  const auto dir = scratch_dir("env");
  const auto cfg = write_config(dir).string();
  ::setenv("GCPC_SEED", "42", 1);
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", (dir / "a").string()}), kExitOk);
  ::unsetenv("GCPC_SEED");
  ASSERT_EQ(run({"gen-data", "--config", cfg, "--out", (dir / "b").string()}), kExitOk);
  EXPECT_NE(slurp(dir / "a" / "corpus.gcds"), slurp(dir / "b" / "corpus.gcds"));
  EXPECT_NE(slurp(dir / "a" / "config.resolved").find("seed = 42"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, CompareEmitsOneRowPerSchemeAndSeed) {
  const auto dir = scratch_dir("compare");
  const auto cfg = write_config(dir).string();
  ASSERT_EQ(run({"compare", "--config", cfg, "--seeds", "2", "--schemes", "CPC,GCPC", "--out", (dir / "r").string()}),
            kExitOk);
  const std::string csv = slurp(dir / "r" / "tables" / "comparison.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scheme,seed,wer,werr,sub,ins,del");
  EXPECT_EQ(line_count(dir / "r" / "tables" / "comparison.csv"), 1u + 2u * 3u);
  EXPECT_NE(csv.find("\"Scratch\",1,"), std::string::npos);
  EXPECT_EQ(line_count(dir / "r" / "metrics.jsonl"), 6u);
  EXPECT_TRUE(fs::exists(dir / "r" / "tables" / "summary.csv"));
  fs::remove_all(dir);
}
