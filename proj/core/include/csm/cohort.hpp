#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "csm/mesh.hpp"
#include "csm/scm.hpp"

namespace csm {

/// Unit icosphere with 10 * 4^n + 2 vertices and outward winding.
SurfaceMesh make_icosphere(int subdivisions);

/// Per-subject exogenous noise of the ground-truth generator.
struct SubjectNoise {
  std::uint64_t id = 0;
  double age_gamma = 0.0;  // Gamma(shape, scale) draw before the offset
  double sex = 0.0;        // the sex value itself
  double eps_b = 0.0;      // standard normal
  double eps_v = 0.0;      // standard normal
  Eigen::Vector2d w = Eigen::Vector2d::Zero();
  /// Seed of the per-vertex jitter stream.
  std::uint64_t jitter_seed = 0;
};

/// Closed-form generator for covariates and meshes.
///
///   a = age_offset + Gamma(age_shape, age_scale)
///   s ~ Bernoulli(male_fraction)
///   b = b0 + b_sex s + b_age (a - age_ref) + b_noise eps_b
///   v = v0 + v_b (b - b0) + v_age (a - age_ref) + v_noise eps_v
///
/// Meshes are an ellipsoidal template scaled radially by
/// (v / v0)^(1/3) (1 + kb zb Y20 + kw (w1 Y21 + w2 Y22)) with zb the
/// standardised brain volume, plus isotropic per-vertex jitter.
struct GroundTruthScm {
  double age_offset = 40.0;
  double age_shape = 6.0;
  double age_scale = 3.5;
  double male_fraction = 0.48;
  double b0 = 1150.0;
  double b_sex = 110.0;
  double b_age = -4.5;
  double age_ref = 60.0;
  double b_noise = 55.0;
  double b_spread = 100.0;
  double v0 = 22.0;
  double v_b = 0.012;
  double v_age = -0.02;
  double v_noise = 1.2;
  int subdivisions = 2;
  double radius = 12.0;
  Eigen::Vector3d axes{1.0, 0.85, 1.4};
  double kappa_b = 0.04;
  double kappa_w = 0.05;
  double jitter = 0.02;

  double g_b(double a, double s) const { return b0 + b_sex * s + b_age * (a - age_ref); }
  double g_v(double a, double b) const { return v0 + v_b * (b - b0) + v_age * (a - age_ref); }

  SubjectNoise sample_noise(std::uint64_t seed, std::uint64_t id) const;
  CovariateRecord covariates(const SubjectNoise& noise) const;
  SurfaceMesh mesh(const CovariateRecord& r, const SubjectNoise& noise) const;
  /// Population template: reference volumes, zero shape latent, no jitter.
  SurfaceMesh template_mesh() const;
  TopologyPtr topology() const;

  /// Re-evaluates the generator with fixed noise under an intervention.
  std::pair<CovariateRecord, SurfaceMesh> counterfactual(const SubjectNoise& noise, const Intervention& iv) const;
};

struct ManifestRow {
  std::uint64_t id = 0;
  CovariateRecord record;
  std::string mesh_path;  // relative to the manifest directory
  std::string split;      // train, val or test
};

struct CohortManifest {
  std::filesystem::path directory;
  std::vector<ManifestRow> rows;

  std::vector<const ManifestRow*> split(const std::string& name) const;
  std::filesystem::path resolve(const ManifestRow& row) const { return directory / row.mesh_path; }
};

struct CohortSizes {
  int train = 2000;
  int val = 250;
  int test = 500;
  int total() const { return train + val + test; }
};

/// Writes manifest.csv, noise.csv, scm.json, template.ply and one PLY per
/// subject under out_dir. Deterministic given seed.
CohortManifest sample_cohort(const GroundTruthScm& scm, const CohortSizes& sizes, std::uint64_t seed,
                             const std::filesystem::path& out_dir);

void write_manifest(const CohortManifest& manifest, const std::filesystem::path& path);
CohortManifest read_manifest(const std::filesystem::path& path);

void write_noise(const std::vector<SubjectNoise>& noise, const std::filesystem::path& path);
std::vector<SubjectNoise> read_noise(const std::filesystem::path& path);

void write_scm(const GroundTruthScm& scm, std::uint64_t seed, const std::filesystem::path& path);
GroundTruthScm read_scm(const std::filesystem::path& path);

/// Exact counterfactual under the ground-truth generator.
std::pair<CovariateRecord, SurfaceMesh> oracle_counterfactual(const GroundTruthScm& scm, const SubjectNoise& noise,
                                                              const Intervention& iv);

}  // namespace csm
