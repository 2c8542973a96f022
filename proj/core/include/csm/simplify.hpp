#pragma once

#include <vector>

#include <Eigen/Core>

#include "csm/mesh.hpp"

namespace csm {

using Quadric = Eigen::Matrix4d;

/// One edge contraction (v_a, v_b) -> target. v_a < v_b are vertex ids of
/// the fine level; v_a's slot survives and moves to `target`.
struct Contraction {
  double error = 0.0;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
  int v_a = -1;
  int v_b = -1;
};

/// One pooling step between a fine and a coarse topology.
struct SimplificationLevel {
  TopologyPtr fine;
  TopologyPtr coarse;
  double factor = 2.0;
  std::vector<Contraction> contractions;
  /// Fine vertex -> coarse vertex it was merged into.
  std::vector<int> parent;
  /// Coarse vertex -> surviving fine vertex that carries its identity.
  std::vector<int> representative;
};

struct SimplifyResult {
  SurfaceMesh mesh;
  SimplificationLevel level;
};

/// Sum of the plane quadrics of each vertex's incident faces (unregularised).
std::vector<Quadric> vertex_quadrics(const SurfaceMesh& mesh);

/// v^T Q v in homogeneous coordinates.
double quadric_error(const Quadric& q, const Eigen::Vector3d& v);

/// Greedy quadric-error edge collapse down to ceil(|V| / factor) vertices.
///
/// Candidates are mesh edges; each is scored with the best of
/// {v_a, v_b, (v_a + v_b)/2} under Q_a + Q_b + 1e-9 I. Ties break on
/// (error, v_a, v_b). Collapses that would break the link condition are
/// skipped.
SimplifyResult quadric_simplify(const SurfaceMesh& mesh, double factor);

/// Applies a recorded contraction log to the fine mesh.
SurfaceMesh replay_contractions(const SurfaceMesh& fine, const SimplificationLevel& level);

/// Fine -> coarse feature transfer: each coarse vertex takes its
/// representative's row.
Eigen::MatrixXd simplify_transfer(const Eigen::MatrixXd& fine_features,
                                  const SimplificationLevel& level);

/// Coarse -> fine transfer reversing the contractions: each fine vertex
/// takes the row of the coarse vertex it was contracted into.
Eigen::MatrixXd unsimplify(const Eigen::MatrixXd& coarse_features, const SimplificationLevel& level);

/// Chain of simplifications with the given factors.
struct SimplificationHierarchy {
  std::vector<SimplificationLevel> levels;
  std::vector<int> vertex_counts() const;
};

SimplificationHierarchy build_hierarchy(const SurfaceMesh& mesh, const std::vector<double>& factors);

}  // namespace csm

namespace csm {

/// Adjoint of simplify_transfer (scatter into representatives).
Eigen::MatrixXd simplify_transfer_adjoint(const Eigen::MatrixXd& grad_coarse,
                                          const SimplificationLevel& level);

/// Adjoint of unsimplify (sum over each contraction group).
Eigen::MatrixXd unsimplify_adjoint(const Eigen::MatrixXd& grad_fine, const SimplificationLevel& level);

}  // namespace csm
