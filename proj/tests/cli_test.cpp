#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "commands.hpp"
#include "config.hpp"
#include "csm/error.hpp"
#include "csm/mesh_io.hpp"
#include "fixtures.hpp"

namespace csm::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "csm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

TEST(Config, RejectsUnknownKeysAndTypes) {
  Json doc = default_config();
  doc["train"]["epoch"] = 3;
  EXPECT_THROW(validate_config(doc), Error);
  doc = default_config();
  doc["train"]["epochs"] = "many";
  EXPECT_THROW(validate_config(doc), Error);
  doc = default_config();
  EXPECT_THROW(apply_override(doc, "model.nope=1"), Error);
  apply_override(doc, "model.encoder_channels=[8,8,8]");
  EXPECT_EQ(doc["model"]["encoder_channels"], Json::parse("[8,8,8]"));
  apply_override(doc, "output_dir=/tmp/x");
  EXPECT_EQ(doc["output_dir"], "/tmp/x");
  RunConfig cfg = config_from_json(default_config());
  EXPECT_EQ(cfg.train.batch_size, 256);
  EXPECT_EQ(cfg.eval.projection_samples, 5000);
  EXPECT_EQ(cfg.align, AlignMode::kRigid);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"bogus"}).code, 1);
  auto r = invoke({"train", "--set", "train.epoch=3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error[E_CONFIG]"), std::string::npos);
  auto dir = testing::scratch_dir("cli_missing");
  r = invoke({"evaluate", "--checkpoint", (dir / "none.json").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error[E_IO]"), std::string::npos);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(testing::scratch_dir("cli_pipeline"));
    const fs::path& d = *root_;
    common_ = new std::vector<std::string>{
        "--set", "seed=3",
        "--set", "output_dir=" + (d / "run").string(),
        "--set", "data.manifest=" + (d / "cohort" / "manifest.csv").string(),
        "--set", "data.generate.out_dir=" + (d / "cohort").string(),
        "--set", "data.generate.train=24",
        "--set", "data.generate.val=2",
        "--set", "data.generate.test=6",
        "--set", "data.generate.subdivisions=1",
        "--set", "model.latent_dim=4",
        "--set", "model.cheb_order=3",
        "--set", "model.levels=2",
        "--set", "model.encoder_channels=[4,6]",
        "--set", "model.decoder_channels=[6,4]",
        "--set", "model.output_order=2",
        "--set", "train.batch_size=8",
        "--set", "train.checkpoint_every=1",
        "--set", "eval.pca_modes=[2,4]",
        "--set", "eval.interpolation_dims=[0,1]",
        "--set", "eval.projection_samples=20",
        "--set", "eval.specificity_samples=2",
        "--set", "eval.trait_subjects=3"};
  }
  static void TearDownTestSuite() {
    delete common_;
    delete root_;
  }
  static Result call(std::vector<std::string> args) {
    args.insert(args.end(), common_->begin(), common_->end());
    return invoke(args);
  }
  static fs::path* root_;
  static std::vector<std::string>* common_;
};

fs::path* CliPipeline::root_ = nullptr;
std::vector<std::string>* CliPipeline::common_ = nullptr;

TEST_F(CliPipeline, EndToEnd) {
  const fs::path& d = *root_;
  auto r = call({"generate-data"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(d / "cohort" / "manifest.csv"), 33);

  r = call({"train", "--set", "train.epochs=2"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = call({"train", "--set", "train.epochs=3", "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string log = slurp(d / "run" / "train_log.csv");
  EXPECT_EQ(count_lines(d / "run" / "train_log.csv"), 4);
  EXPECT_NE(log.find("\n3,"), std::string::npos);

  r = call({"counterfact", "--subject", "30", "--out", (d / "null").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(d / "null" / "trajectory.csv"), 2);
  SurfaceMesh observed = read_mesh(d / "cohort" / "meshes" / "subject_000030.ply");
  SurfaceMesh cf = read_mesh(d / "null" / "subject_30_step1.ply", observed.topology_ptr());
  EXPECT_LT(ved(cf, observed), 1e-5);

  r = call({"counterfact", "--subject", "30", "--do", "a=80", "--out", (d / "a80").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(d / "a80" / "trajectory.csv"), 2);
  EXPECT_TRUE(fs::exists(d / "a80" / "subject_30_step1.ply"));
  EXPECT_FALSE(fs::exists(d / "a80" / "subject_30_step2.ply"));

  r = call({"counterfact", "--subject", "30", "--do", "q=1", "--out", (d / "bad").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("E_UNKNOWN_NODE"), std::string::npos);

  r = call({"intervene", "--do", "a=70 s=1", "--n", "2", "--out", (d / "iv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(d / "iv" / "samples.csv"), 3);

  r = call({"evaluate", "--out", (d / "eval1").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = call({"evaluate", "--out", (d / "eval2").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"report.json", "reconstruction.csv", "specificity.csv", "trait_preservation.csv",
                        "trajectories.csv", "interpolation.csv", "shape_projection.csv", "curves.csv"}) {
    ASSERT_TRUE(fs::exists(d / "eval1" / f)) << f;
    EXPECT_EQ(slurp(d / "eval1" / f), slurp(d / "eval2" / f)) << f;
  }
  EXPECT_NE(slurp(d / "eval1" / "trajectories" / "mesh_000.ply").find("signed_disp_mm"), std::string::npos);

  r = call({"reconstruct", "--out", (d / "rec").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "rec" / "reconstruction.csv"));

  r = call({"export-mesh", "--what", "mean", "--out", (d / "mean.obj").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_mesh(d / "mean.obj").vertex_count(), 42);
}

}  // namespace
}  // namespace csm::cli
