#pragma once

#include <Eigen/Core>

#include "csm/mesh.hpp"

namespace csm {

struct SimilarityTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  VertexArray apply(const VertexArray& v) const;
};

/// Least-squares transform mapping `source` onto `target` vertex-wise
/// (Kabsch-Umeyama). The rotation is always proper (det +1). With
/// `with_scale` false the scale is fixed to 1.
SimilarityTransform estimate_similarity(const VertexArray& source, const VertexArray& target,
                                        bool with_scale = true);

/// `mesh` registered onto `templ` by the optimal similarity transform.
SurfaceMesh kabsch_umeyama_align(const SurfaceMesh& mesh, const SurfaceMesh& templ,
                                 bool with_scale = true);

}  // namespace csm
