#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "csm/cohort.hpp"
#include "csm/mesh_io.hpp"
#include "fixtures.hpp"

namespace csm {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(Icosphere, Counts) {
  EXPECT_EQ(make_icosphere(0).vertex_count(), 12);
  EXPECT_EQ(make_icosphere(3).vertex_count(), 642);
  for (int n = 0; n < 4; ++n) {
    SurfaceMesh m = make_icosphere(n);
    EXPECT_EQ(m.vertex_count(), 10 * (1 << (2 * n)) + 2);
    EXPECT_LT((m.vertices().rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-9);
    EXPECT_GT(enclosed_volume(m), 0.0);
  }
}

TEST(GroundTruth, PopulationStatistics) {
  GroundTruthScm scm;
  const int n = 5000;
  double male = 0, mb = 0, mv = 0, bb = 0, vv = 0, bv = 0;
  for (int i = 0; i < n; ++i) {
    auto r = scm.covariates(scm.sample_noise(13, i));
    male += r.s;
    mb += r.b;
    mv += r.v;
    bb += r.b * r.b;
    vv += r.v * r.v;
    bv += r.b * r.v;
    ASSERT_GT(r.a, 40.0);
  }
  const double p = male / n;
  EXPECT_NEAR(p, 0.48, 3.0 * std::sqrt(0.48 * 0.52 / n));
  mb /= n;
  mv /= n;
  const double cov = bv / n - mb * mv;
  EXPECT_GT(cov / std::sqrt((bb / n - mb * mb) * (vv / n - mv * mv)), 0.0);
}

TEST(GroundTruth, OracleCounterfactuals) {
  GroundTruthScm scm = testing::tiny_scm();
  for (int i = 0; i < 10; ++i) {
    SubjectNoise e = scm.sample_noise(3, i);
    CovariateRecord r = scm.covariates(e);
    SurfaceMesh x = scm.mesh(r, e);
    auto [r0, x0] = oracle_counterfactual(scm, e, Intervention());
    EXPECT_EQ(x0.vertices(), x.vertices());
    for (Node n : kCovariateNodes) EXPECT_EQ(r0.get(n), r.get(n));
    auto [rv, xv] = oracle_counterfactual(scm, e, Intervention().set(Node::V, r.v));
    EXPECT_EQ(xv.vertices(), x.vertices());
    auto [ra, xa] = oracle_counterfactual(scm, e, Intervention().shift(Node::A, 10.0));
    EXPECT_EQ(ra.a, r.a + 10.0);
    EXPECT_NEAR(ra.b, r.b + 10.0 * scm.b_age, 1e-9);
    EXPECT_NEAR(ra.v, scm.g_v(ra.a, ra.b) + scm.v_noise * e.eps_v, 1e-12);
    EXPECT_NEAR(ra.v, r.v + 10.0 * scm.v_age + scm.v_b * (ra.b - r.b), 1e-9);
  }
}

TEST(Cohort, DeterministicFiles) {
  GroundTruthScm scm = testing::tiny_scm();
  auto d1 = testing::scratch_dir("cohort_a"), d2 = testing::scratch_dir("cohort_b");
  std::filesystem::remove_all(d2);
  sample_cohort(scm, {60, 10, 30}, 7, d1);
  auto m = sample_cohort(scm, {60, 10, 30}, 7, d2);
  EXPECT_EQ(m.rows.size(), 100u);
  for (const char* f : {"manifest.csv", "noise.csv", "scm.json", "template.ply", "meshes/subject_000042.ply"})
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  EXPECT_EQ(m.split("train").size(), 60u);
  EXPECT_EQ(m.split("val").size(), 10u);
  EXPECT_EQ(m.split("test").size(), 30u);
  auto back = read_manifest(d1 / "manifest.csv");
  ASSERT_EQ(back.rows.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(back.rows[i].id, m.rows[i].id);
    EXPECT_EQ(back.rows[i].record.b, m.rows[i].record.b);
    EXPECT_EQ(back.rows[i].split, m.rows[i].split);
  }
  auto noise = read_noise(d1 / "noise.csv");
  ASSERT_EQ(noise.size(), 100u);
  auto r = scm.covariates(noise[17]);
  EXPECT_EQ(r.v, m.rows[17].record.v);
  EXPECT_LT(ved(read_mesh(back.resolve(back.rows[17])), scm.mesh(r, noise[17])), 1e-6);
  GroundTruthScm s2 = read_scm(d1 / "scm.json");
  EXPECT_EQ(s2.subdivisions, 1);
  EXPECT_EQ(s2.b_age, scm.b_age);
}

TEST(Cohort, EmptyCohortHasHeader) {
  auto d = testing::scratch_dir("cohort_empty") / "nested";
  auto m = sample_cohort(testing::tiny_scm(), {0, 0, 0}, 1, d);
  EXPECT_TRUE(m.rows.empty());
  EXPECT_EQ(slurp(d / "manifest.csv"), "id,age,sex,brain_volume,structure_volume,mesh_path,split\n");
}

}  // namespace
}  // namespace csm
