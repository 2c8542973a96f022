#include "csm/align.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include "csm/error.hpp"

namespace csm {

VertexArray SimilarityTransform::apply(const VertexArray& v) const {
  VertexArray out = (scale * (v * rotation.transpose())).rowwise() + translation.transpose();
  return out;
}

SimilarityTransform estimate_similarity(const VertexArray& source, const VertexArray& target,
                                        bool with_scale) {
  if (source.rows() != target.rows()) fail(ErrorCode::kTopologyMismatch, "alignment needs vertex correspondence");
  const double n = static_cast<double>(source.rows());
  const Eigen::RowVector3d mu_s = source.colwise().mean();
  const Eigen::RowVector3d mu_t = target.colwise().mean();
  const VertexArray s = source.rowwise() - mu_s;
  const VertexArray t = target.rowwise() - mu_t;
  const double var_s = s.squaredNorm() / n;
  const double var_t = t.squaredNorm() / n;
  if (!(var_s > 0.0) || !(var_t > 0.0)) {
    fail(ErrorCode::kDegenerateAlignment, "cannot align meshes whose vertices all coincide");
  }

  const Eigen::Matrix3d cov = (t.transpose() * s) / n;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d[2] = -1.0;

  SimilarityTransform xf;
  xf.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  xf.scale = with_scale ? svd.singularValues().dot(d) / var_s : 1.0;
  xf.translation = mu_t.transpose() - xf.scale * xf.rotation * mu_s.transpose();
  return xf;
}

SurfaceMesh kabsch_umeyama_align(const SurfaceMesh& mesh, const SurfaceMesh& templ, bool with_scale) {
  if (!(mesh.topology() == templ.topology())) {
    fail(ErrorCode::kTopologyMismatch, "alignment requires the template topology");
  }
  const SimilarityTransform xf = estimate_similarity(mesh.vertices(), templ.vertices(), with_scale);
  return SurfaceMesh(mesh.topology_ptr(), xf.apply(mesh.vertices()));
}

}  // namespace csm
