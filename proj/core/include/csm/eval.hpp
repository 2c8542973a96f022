#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "csm/report.hpp"
#include "csm/scm.hpp"
#include "csm/train.hpp"

namespace csm {

/// Principal components of flattened meshes (one sample per row).
struct PcaModel {
  Eigen::VectorXd mean;
  /// k x P, orthonormal rows.
  Eigen::MatrixXd components;
  /// Non-increasing.
  Eigen::VectorXd explained_variance;
  /// Number of components with non-negligible variance.
  int rank = 0;

  Eigen::VectorXd project(const Eigen::VectorXd& x, int k) const;
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& x, int k) const;
  /// lambda_j / sum(lambda) for the first k components.
  std::vector<double> explained_variance_ratio(int k) const;
};

/// Full-basis PCA via eigendecomposition of the sample covariance.
PcaModel fit_pca(const Eigen::MatrixXd& data);

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
};
Summary summarise(std::vector<double> values);

/// Table "reconstruction": model, latent_dim, mean_ved, std_ved,
/// median_ved, chamfer. Rows: PCA for each k, f_X with u sampled, f_X with
/// u inferred.
EvalReport reconstruction_table(const CausalShapeModel& model, const Dataset& test, const PcaModel& pca,
                                const std::vector<int>& pca_modes, std::uint64_t seed);

struct CompactnessCurves {
  std::vector<double> original;
  std::vector<double> other;
};
CompactnessCurves pca_compactness(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int k);

/// A family of intervention settings reported as one specificity row.
struct InterventionFamily {
  std::string label;
  std::vector<Intervention> settings;
};

/// Default do(a, s) and do(b, v) grids from the quantiles of `reference`.
std::vector<InterventionFamily> default_specificity_families(const Dataset& reference);

/// Table "specificity": do, mean, std, median over e^k, the mean VED of each
/// generated mesh to the whole test set.
EvalReport specificity(const CausalShapeModel& model, const Eigen::VectorXd& z,
                       const std::vector<InterventionFamily>& families, int n_per_setting, const Dataset& test,
                       std::uint64_t seed);

struct InterpolationMesh {
  int dim = -1;  // -1 for the mean shape
  double offset = 0.0;
  SurfaceMesh mesh;
  /// Displacement from the mean shape along the mean-shape normals (mm).
  Eigen::VectorXd signed_displacement;
};

/// Mean shape at z = 0 followed by one mesh per (dim, offset).
std::vector<InterpolationMesh> latent_interpolation(const CausalShapeModel& model, const std::vector<int>& dims,
                                                    const std::vector<double>& offsets, double v_mean, double b_mean);

struct TraitBucket {
  std::string label;
  Intervention iv;
  /// Restrict to subjects with this sex (-1 for all).
  int sex = -1;
  /// Age shift, for trend tests; 0 when the bucket is not an age shift.
  double age_shift = 0.0;
};

std::vector<TraitBucket> default_trait_buckets();

/// Table "trait_preservation": bucket, n, median_ved, mean_ved. Each subject
/// is pushed through a counterfactual under the bucket's intervention and
/// back under do(b := b, v := v).
EvalReport trait_preservation(const CausalShapeModel& model, const Dataset& test,
                              const std::vector<TraitBucket>& buckets, int max_subjects = -1);

/// Table "trajectories": family, step, a, s, b, v, ved_to_observed.
EvalReport counterfactual_trajectories(const CausalShapeModel& model, const CovariateRecord& record,
                                       const SurfaceMesh& mesh, const std::vector<InterventionFamily>& families,
                                       std::vector<SurfaceMesh>* meshes = nullptr);

/// Age shifts {-20..20 by 5}, sex {0, .2, .4, .6, 1}, and b / v grids
/// around the observation.
std::vector<InterventionFamily> default_trajectory_families(const CovariateRecord& observed);

/// Table "shape_projection": x_embed, y_embed, a, s, b, v. Samples n
/// post-interventional meshes for fixed z and embeds them with 2D PCA.
EvalReport shape_projection(const CausalShapeModel& model, const Eigen::VectorXd& z, int n, std::uint64_t seed);

/// Spearman rank correlation.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace csm
