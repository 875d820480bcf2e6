#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "sdlab/run_config.hpp"

namespace sdlab {
namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(RunConfig, DefaultsDescribeTheToyBenchmark) {
  const RunConfig c;
  const ModelConfig m = c.target_model();
  EXPECT_EQ(m.vocab_size, 64u);
  EXPECT_EQ(m.hidden, 32u);
  EXPECT_EQ(m.layers, 4u);
  EXPECT_EQ(m.taps, ModelConfig::default_taps(4));
  EXPECT_EQ(c.corpus().w_interleave, 1.0);
  EXPECT_EQ(c.draft().kind, DraftKind::kFused);
  EXPECT_EQ(c.draft().rounds, 3u);
  EXPECT_EQ(c.draft_train().steps, 600u);
  EXPECT_EQ(c.get_u64s("experiment.seeds").size(), 5u);
  EXPECT_EQ(c.get_doubles("experiment.fractions"), (std::vector<double>{0.125, 0.25, 0.5, 1.0}));
  EXPECT_EQ(c.vanilla_model().layers, 1u);
}

TEST(RunConfig, UnknownKeysAndBadValuesNameTheKey) {
  RunConfig c;
  EXPECT_EQ(error_of([&] { c.set("model.hiden", "8"); }), "config: unknown key 'model.hiden'");
  EXPECT_EQ(error_of([&] { c.set("model.hidden", "eight"); }),
            "config: bad value 'eight' for key 'model.hidden'");
  EXPECT_NE(error_of([&] { c.set("model.hidden", "-3"); }), "");
  EXPECT_NE(error_of([&] { c.set("draft.soft_targets", "yes"); }), "");
  EXPECT_NE(error_of([&] { c.set("experiment.fractions", "0.5,x"); }), "");
  EXPECT_NE(error_of([&] { c.set_assignment("novalue"); }), "");
  EXPECT_EQ(c.get("model.hidden"), "32");  // failed sets leave the value untouched
}

TEST(RunConfig, AssignmentsAndIniText) {
  RunConfig c;
  c.set_assignment("decode.depth=6");
  EXPECT_EQ(c.decode().depth, 6u);
  c.load_text(
      "# comment\n"
      "; another\n"
      "model.hidden = 16\n"
      "[draft]\n"
      "method = feature\n"
      "rounds = 1\n"
      "[tree]\n"
      "depth=3\n");
  EXPECT_EQ(c.target_model().hidden, 16u);
  EXPECT_EQ(c.draft().kind, DraftKind::kFeature);
  EXPECT_EQ(c.decode().tree.depth, 3u);
  EXPECT_NE(error_of([&] { c.load_text("[draft\n"); }), "");
  EXPECT_NE(error_of([&] { c.load_text("just words\n"); }), "");
  EXPECT_EQ(error_of([&] { c.load_text("[draft]\nbogus = 1\n"); }),
            "config: unknown key 'draft.bogus'");
}

TEST(RunConfig, LoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "sdlab_run_config_test.ini";
  {
    std::ofstream out(path);
    out << "[target]\nsteps = 5\n";
  }
  RunConfig c;
  c.load_file(path.string());
  EXPECT_EQ(c.target_train().steps, 5u);
  EXPECT_NE(error_of([&] { c.load_file("/nonexistent/config.ini"); }), "");
}

TEST(RunConfig, SemanticValidationBecomesConfigError) {
  RunConfig c;
  c.set("model.heads", "5");  // does not divide hidden
  EXPECT_NE(error_of([&] { c.target_model(); }), "");
  RunConfig d;
  d.set("draft.method", "vanilla");
  EXPECT_NE(error_of([&] { d.draft(); }), "");
  d.set("draft.method", "other");
  EXPECT_EQ(error_of([&] { d.draft(); }), "config: unknown draft.method 'other'");
  RunConfig e;
  e.set("target.steps", "0");
  EXPECT_NE(error_of([&] { e.target_train(); }), "");
  RunConfig f;
  f.set("corpus.noise", "1.5");
  EXPECT_NE(error_of([&] { f.corpus(); }), "");
}

TEST(RunConfig, ExplicitTapsOverrideDerivedOnes) {
  RunConfig c;
  c.set("model.tap_low", "2");
  c.set("model.tap_mid", "3");
  EXPECT_EQ(c.target_model().taps, (std::array<std::size_t, 3>{2, 3, 4}));
  c.set("model.tap_low", "3");  // must stay below mid
  EXPECT_NE(error_of([&] { c.target_model(); }), "");
}

TEST(RunConfig, EveryKeyHasAParseableDefault) {
  RunConfig c;
  for (const std::string& k : RunConfig::keys()) EXPECT_NO_THROW(c.set(k, c.get(k))) << k;
}

}  // namespace
}  // namespace sdlab
