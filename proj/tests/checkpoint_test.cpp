#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdlab/checkpoint.hpp"
#include "test_util.hpp"

namespace sdlab {
namespace {

using testing::random_tokens;
using testing::tiny_target;

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "sdlab_checkpoint_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(hash_hex(fnv1a64("")), "cbf29ce484222325");
  EXPECT_EQ(hash_hex(fnv1a64("a")), "af63dc4c8601ec8c");
}

TEST(Checkpoint, TargetRoundTripIsBitIdentical) {
  auto target = tiny_target(5);
  const std::string path = temp_path("target.ckpt");
  save_target(path, *target);
  auto loaded = load_target(path);
  const Sequence toks = random_tokens(9, 8, 1);
  KvCache a = target->make_cache(), b = loaded->make_cache();
  const auto oa = target->forward(toks, a);
  const auto ob = loaded->forward(toks, b);
  EXPECT_EQ(oa.logits.data, ob.logits.data);
  EXPECT_EQ(oa.taps.low.data, ob.taps.low.data);
  // Saving the loaded model reproduces the file byte for byte.
  const std::string again = temp_path("target2.ckpt");
  save_target(again, *loaded);
  EXPECT_EQ(slurp(path), slurp(again));
  EXPECT_EQ(file_hash(path), fnv1a64(slurp(path)));
}

TEST(Checkpoint, DraftBindsToTargetHash) {
  auto target = tiny_target(5);
  const std::string tpath = temp_path("t.ckpt");
  save_target(tpath, *target);
  const std::uint64_t h = file_hash(tpath);
  FeatureDraftModel draft(target, DraftConfig{}, 3);
  const std::string dpath = temp_path("d.ckpt");
  save_feature_draft(dpath, draft, h);
  auto loaded = load_feature_draft(dpath, target, h);
  EXPECT_EQ(loaded->config().to_kv(), draft.config().to_kv());
  for (std::size_t i = 0; i < draft.params().size(); ++i) {
    EXPECT_EQ(loaded->params()[i].value.data, draft.params()[i].value.data);
  }
  EXPECT_THROW(load_feature_draft(dpath, target, h ^ 1), std::invalid_argument);
}

TEST(Checkpoint, MalformedFilesThrow) {
  const std::string path = temp_path("bad.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint\n";
  }
  EXPECT_THROW(read_checkpoint(path), std::runtime_error);
  EXPECT_THROW(read_checkpoint(temp_path("missing.ckpt")), std::runtime_error);

  auto target = tiny_target(5);
  const std::string good = temp_path("trunc.ckpt");
  save_target(good, *target);
  const std::string bytes = slurp(good);
  {
    std::ofstream out(good, std::ios::binary | std::ios::trunc);
    out << bytes.substr(0, bytes.size() - 10);
  }
  EXPECT_THROW(read_checkpoint(good), std::runtime_error);
}

TEST(Checkpoint, LoadParamsChecksNamesAndShapes) {
  auto a = tiny_target(1);
  const std::string path = temp_path("shape.ckpt");
  save_target(path, *a);
  Checkpoint ck = read_checkpoint(path);
  TargetModel wide(testing::tiny_config(8, 32), 1);
  EXPECT_THROW(load_params(wide.params(), ck), std::runtime_error);
  ck.tensors.pop_back();
  TargetModel same(testing::tiny_config(), 2);
  EXPECT_THROW(load_params(same.params(), ck), std::runtime_error);
}

}  // namespace
}  // namespace sdlab
