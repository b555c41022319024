#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mattforge/checkpoint.hpp"
#include "mattforge/error.hpp"

using namespace mattforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mattforge_ckpt_" + name);
  fs::remove_all(dir);
  return dir;
}

ModelConfig small() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.head_dim = 8;
  c.vocab_size = 300;
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = scratch("roundtrip");
  const auto p = init_params(small(), 42);
  MatrixF extra(3, 2);
  extra << 1, 2, 3, 4, 5, 6;
  save_checkpoint(dir, p, {.seed = 42, .step = 7, .kind = "teacher", .extra_json = R"({"note":"x"})"},
                  {{"adam_m", extra}});
  const auto loaded = load_checkpoint(dir);
  EXPECT_EQ(loaded.params.config, p.config);
  EXPECT_EQ(parameter_fingerprint(loaded.params), parameter_fingerprint(p));
  EXPECT_EQ(loaded.params.embedding, p.embedding);
  EXPECT_EQ(loaded.params.layers[1].w_down, p.layers[1].w_down);
  EXPECT_EQ(loaded.info.seed, 42u);
  EXPECT_EQ(loaded.info.step, 7);
  EXPECT_EQ(loaded.info.kind, "teacher");
  EXPECT_NE(loaded.info.extra_json.find("note"), std::string::npos);
  ASSERT_EQ(loaded.extra_tensors.count("adam_m"), 1u);
  EXPECT_EQ(loaded.extra_tensors.at("adam_m"), extra);
  fs::remove_all(dir);
}

TEST(Checkpoint, WeightsAreLittleEndianFloat32) {
  const auto dir = scratch("layout");
  auto p = init_params(small(), 1);
  p.embedding(0, 0) = 1.0f;  // 0x3f800000
  save_checkpoint(dir, p, {});
  std::ifstream in(dir / "weights.bin", std::ios::binary);
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  EXPECT_EQ(b[0], 0x00);
  EXPECT_EQ(b[1], 0x00);
  EXPECT_EQ(b[2], 0x80);
  EXPECT_EQ(b[3], 0x3f);
  std::size_t expected = 0;
  for (const auto& r : tensor_refs(p)) expected += static_cast<std::size_t>(r.size()) * 4;
  EXPECT_EQ(fs::file_size(dir / "weights.bin"), expected);
  fs::remove_all(dir);
}

TEST(Checkpoint, DetectsDamage) {
  const auto dir = scratch("damage");
  save_checkpoint(dir, init_params(small(), 1), {});
  fs::resize_file(dir / "weights.bin", fs::file_size(dir / "weights.bin") - 4);
  EXPECT_THROW(load_checkpoint(dir), Error);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(load_checkpoint(dir), Error);
  EXPECT_THROW(load_checkpoint(scratch("missing")), Error);
  fs::remove_all(dir);
}

TEST(Checkpoint, FingerprintSeesSingleBitChanges) {
  auto p = init_params(small(), 3);
  const auto before = parameter_fingerprint(p);
  p.layers[0].attn_norm(3) = std::nextafter(p.layers[0].attn_norm(3), 2.0f);
  EXPECT_NE(parameter_fingerprint(p), before);
}

TEST(ModelConfigJson, RoundTrip) {
  auto c = small();
  c.ffn_mult = 2.5;
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
  EXPECT_THROW(model_config_from_json("[]"), Error);
}
