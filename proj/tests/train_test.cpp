#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "csm/checkpoint.hpp"
#include "csm/error.hpp"
#include "csm/train.hpp"
#include "fixtures.hpp"

namespace csm {
namespace {

TEST(Train, AlignModes) {
  EXPECT_EQ(parse_align_mode("rigid"), AlignMode::kRigid);
  EXPECT_EQ(parse_align_mode("similarity"), AlignMode::kSimilarity);
  EXPECT_EQ(parse_align_mode("none"), AlignMode::kNone);
  EXPECT_THROW(parse_align_mode("affine"), Error);
}

TEST(Train, LoadSplitAlignsOntoTemplate) {
  GroundTruthScm scm = testing::tiny_scm();
  auto dir = testing::scratch_dir("load_split");
  auto manifest = sample_cohort(scm, {12, 2, 4}, 2, dir);
  Dataset d = load_split(manifest, "test", scm.template_mesh(), AlignMode::kRigid);
  EXPECT_EQ(d.size(), 4);
  EXPECT_EQ(d.ids.front(), 14u);
  EXPECT_EQ(d.meshes.cols(), 126);
}

TEST(Train, ElboImprovesAndStaysFinite) {
  GroundTruthScm scm = testing::tiny_scm();
  Dataset train = testing::synthetic_dataset(scm, 64, 1);
  CausalShapeModel model = testing::tiny_model(scm, train);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.lr_mesh = 1e-3;
  Trainer trainer(model, cfg);
  auto logs = trainer.fit(train);
  ASSERT_EQ(logs.size(), 6u);
  for (const auto& l : logs) EXPECT_TRUE(std::isfinite(l.elbo));
  EXPECT_GT(logs.back().elbo, logs.front().elbo);
  EXPECT_EQ(trainer.epoch(), 6);
}

TEST(Checkpoint, RoundTripReproducesElbo) {
  GroundTruthScm scm = testing::tiny_scm();
  Dataset train = testing::synthetic_dataset(scm, 32, 1);
  CausalShapeModel model = testing::tiny_model(scm, train);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  Trainer trainer(model, cfg);
  trainer.fit(train);
  auto dir = testing::scratch_dir("checkpoint");
  save_checkpoint(dir / "c.json", model, TrainState{trainer.epoch(), trainer.optimizer().state()}, "{\"k\":1}");
  auto loaded = load_checkpoint(dir / "c.json", model.mesh_model().topology().get());
  const double e0 = evaluate_elbo(model, train, 5).elbo;
  const double e1 = evaluate_elbo(*loaded.model, train, 5).elbo;
  EXPECT_NEAR(e0, e1, 1e-6);
  ASSERT_TRUE(loaded.train_state.has_value());
  EXPECT_EQ(loaded.train_state->epoch, 2);
  EXPECT_EQ(loaded.run_config, "{\"k\":1}");

  SurfaceMesh other = make_icosphere(2);
  try {
    load_checkpoint(dir / "c.json", &other.topology());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTopologyMismatch);
  }
}

TEST(Checkpoint, DetectsTampering) {
  GroundTruthScm scm = testing::tiny_scm();
  Dataset train = testing::synthetic_dataset(scm, 8, 1);
  CausalShapeModel model = testing::tiny_model(scm, train);
  auto dir = testing::scratch_dir("checkpoint_tamper");
  save_checkpoint(dir / "c.json", model);
  std::ifstream in(dir / "c.json");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = text.find("\"data\":[");
  ASSERT_NE(pos, std::string::npos);
  const auto digit = text.find_first_of("123456789", pos + 8);
  text[digit] = text[digit] == '9' ? '8' : static_cast<char>(text[digit] + 1);
  std::ofstream(dir / "c.json") << text;
  try {
    load_checkpoint(dir / "c.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChecksum);
  }
  std::ofstream(dir / "bad.json") << "{\"format\": 3}";
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), Error);
}

}  // namespace
}  // namespace csm
