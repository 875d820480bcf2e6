#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "sdlab/harness.hpp"

namespace sdlab {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = 0;
  std::string out, err;
};

// Small enough to train in well under a second.
const std::vector<std::string> kTiny = {
    "--set", "model.vocab_size=16", "--set", "model.hidden=16",     "--set", "model.layers=3",
    "--set", "model.heads=2",       "--set", "model.max_seq_len=64", "--set", "corpus.num_sequences=24",
    "--set", "corpus.seq_len=24",   "--set", "corpus.period=4",      "--set", "corpus.num_patterns=2",
    "--set", "target.steps=20",     "--set", "draft.steps=5",        "--set", "data.prompt_len=6",
    "--set", "data.gen_len=8",      "--set", "decode.depth=3",       "--set", "decode.max_new_tokens=9",
    "--set", "bench.prompts=2",     "--set", "verify.pairs=3",       "--set", "verify.greedy_prompts=2",
    "--set", "experiment.prompts=2"};

CliRun cli(const std::string& command, const fs::path& out_dir, std::vector<std::string> extra = {}) {
  std::vector<std::string> args = {command};
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  args.insert(args.end(), extra.begin(), extra.end());
  args.push_back("--out");
  args.push_back(out_dir.string());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "sdlab_cli_test" / name;
  fs::remove_all(d);
  return d;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

TEST(Cli, UsageErrorsExitOne) {
  std::ostringstream out, err;
  EXPECT_EQ(run_cli({}, out, err), kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}, out, err), kExitUsage);
  EXPECT_EQ(run_cli({"--help"}, out, err), kExitOk);
  const fs::path d = fresh_dir("usage");
  CliRun r = cli("bench", d, {"--set", "decode.dept=3"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("decode.dept"), std::string::npos) << r.err;
  r = cli("bench", d, {"--set", "decode.depth=three"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("decode.depth"), std::string::npos) << r.err;
  r = cli("bench", d, {"--config", (d / "missing.ini").string()});
  EXPECT_EQ(r.code, kExitUsage);
  // bench without a trained target is a usage error, not a crash.
  EXPECT_EQ(cli("bench", d).code, kExitUsage);
}

TEST(Cli, TrainDraftFlagConflicts) {
  const fs::path d = fresh_dir("conflicts");
  ASSERT_EQ(cli("train-target", d).code, kExitOk);
  EXPECT_EQ(cli("train-draft", d, {"--method", "vanilla", "--rounds", "2"}).code, kExitUsage);
  EXPECT_EQ(cli("train-draft", d, {"--method", "vanilla", "--no-ttt"}).code, kExitUsage);
  EXPECT_EQ(cli("train-draft", d, {"--rounds", "2", "--no-ttt"}).code, kExitUsage);
  EXPECT_EQ(cli("train-draft", d, {"--method", "feature", "--top-layer-only"}).code, kExitUsage);
  EXPECT_EQ(cli("train-draft", d, {"--method", "feature", "--rounds", "3"}).code, kExitUsage);
  EXPECT_EQ(cli("train-draft", d, {"--method", "bogus"}).code, kExitUsage);
  EXPECT_FALSE(fs::exists(d / "draft-fused.ckpt"));
}

TEST(Cli, EndToEndArtifactsAreReproducible) {
  const fs::path a = fresh_dir("a"), b = fresh_dir("b");
  for (const fs::path& d : {a, b}) {
    ASSERT_EQ(cli("train-target", d).code, kExitOk);
    ASSERT_EQ(cli("train-draft", d).code, kExitOk);
    ASSERT_EQ(cli("train-draft", d, {"--method", "feature"}).code, kExitOk);
    ASSERT_EQ(cli("train-draft", d, {"--top-layer-only", "--no-ttt"}).code, kExitOk);
    ASSERT_EQ(cli("train-draft", d, {"--method", "vanilla"}).code, kExitOk);
    const CliRun r = cli("bench", d,
                      {"--set", "bench.drafters=identity,adversarial,fused,feature,top-layer-r1,vanilla",
                       "--set", "bench.tasks=heldout,shifted", "--set", "bench.trace=1"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  for (const char* f : {"target.ckpt", "draft-fused.ckpt", "draft-feature.ckpt", "draft-top-layer-r1.ckpt",
                        "vanilla.ckpt", "train-target.csv", "train-draft-fused.csv", "bench.csv",
                        "bench-trace.jsonl"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto records = parse_metrics_csv(slurp(a / "bench.csv"));
  ASSERT_EQ(records.size(), 2u * 6u * 2u);  // tasks x drafters x prompts
  for (const auto& r : records) {
    if (r.drafter == "identity") {
      EXPECT_DOUBLE_EQ(r.tau, 4.0);
      for (double x : r.n_alpha) EXPECT_DOUBLE_EQ(x, 1.0);
    }
    if (r.drafter == "adversarial") EXPECT_DOUBLE_EQ(r.tau, 1.0);
  }
  EXPECT_EQ(records.front().task, "heldout/0");
  EXPECT_EQ(records.back().task, "shifted/1");

  // JSONL: meta line, config line, one payload line per record.
  EXPECT_EQ(lines(slurp(a / "bench.jsonl")), 2u + records.size());

  // A drafter bound to another target is rejected.
  fs::copy_file(b / "draft-fused.ckpt", a / "draft-fused.ckpt", fs::copy_options::overwrite_existing);
  ASSERT_EQ(cli("train-target", a, {"--set", "target.seed=2"}).code, kExitOk);
  const CliRun bad = cli("bench", a, {"--set", "bench.drafters=fused"});
  EXPECT_EQ(bad.code, kExitUsage);
  EXPECT_NE(bad.err.find("trained against"), std::string::npos) << bad.err;
}

TEST(Cli, VerifyLosslessPassesAndViolationsExitTwo) {
  const fs::path d = fresh_dir("verify");
  const CliRun ok = cli("verify-lossless", d);
  EXPECT_EQ(ok.code, kExitOk) << ok.err;
  const std::string csv = slurp(d / "verify-lossless.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "suite,case,mode,depth,value");
  // A zero tolerance cannot be met (TV >= 0), so the run reports a violation.
  const CliRun v = cli("verify-lossless", d, {"--set", "verify.tolerance=0"});
  EXPECT_EQ(v.code, kExitViolation);
  EXPECT_NE(v.err.find("violation"), std::string::npos);
}

TEST(Cli, ExperimentsWriteTables) {
  const fs::path d = fresh_dir("experiments");
  ASSERT_EQ(cli("train-target", d).code, kExitOk);
  const std::vector<std::string> small = {"--set", "experiment.seeds=1,2", "--set",
                                          "experiment.scaling_seeds=1", "--set",
                                          "experiment.fractions=0.5,1"};
  ASSERT_EQ(cli("ablation", d, small).code, kExitOk);
  EXPECT_EQ(lines(slurp(d / "ablation.csv")), 4u);
  EXPECT_EQ(parse_metrics_csv(slurp(d / "ablation-runs.csv")).size(), 6u);
  const CliRun s = cli("scaling", d, small);
  ASSERT_EQ(s.code, kExitOk) << s.err;
  EXPECT_EQ(lines(slurp(d / "scaling.csv")), 1u + 2u * 2u);
  EXPECT_NE(s.out.find("spearman"), std::string::npos);
  EXPECT_EQ(cli("scaling", d, {"--set", "experiment.fractions=1"}).code, kExitUsage);
}

}  // namespace
}  // namespace sdlab
