#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace csm {

using Face = std::array<int, 3>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
/// Vertex coordinates, one row per vertex.
using VertexArray = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Immutable connectivity shared by every mesh of a population.
///
/// Construction validates the faces and caches the normalised graph
/// Laplacian L = I - D^{-1/2} A D^{-1/2} together with its largest
/// eigenvalue. Isolated vertices get a zero Laplacian row.
class MeshTopology {
 public:
  MeshTopology(std::vector<Face> faces, int vertex_count);

  const std::vector<Face>& faces() const { return faces_; }
  int vertex_count() const { return vertex_count_; }
  const SparseMatrix& adjacency() const { return adjacency_; }
  const SparseMatrix& laplacian() const { return laplacian_; }
  double lambda_max() const { return lambda_max_; }
  const std::vector<std::vector<int>>& neighbours() const { return neighbours_; }

  /// 64-bit FNV-1a over vertex count and face list.
  std::uint64_t hash() const { return hash_; }

  bool operator==(const MeshTopology& other) const {
    return vertex_count_ == other.vertex_count_ && faces_ == other.faces_;
  }

 private:
  std::vector<Face> faces_;
  int vertex_count_;
  SparseMatrix adjacency_;
  SparseMatrix laplacian_;
  std::vector<std::vector<int>> neighbours_;
  double lambda_max_ = 0.0;
  std::uint64_t hash_ = 0;
};

using TopologyPtr = std::shared_ptr<const MeshTopology>;

TopologyPtr build_topology(std::vector<Face> faces, int vertex_count);

/// Vertex positions (millimetres) on a shared triangulation.
class SurfaceMesh {
 public:
  SurfaceMesh(TopologyPtr topology, VertexArray vertices);

  const MeshTopology& topology() const { return *topology_; }
  const TopologyPtr& topology_ptr() const { return topology_; }
  const VertexArray& vertices() const { return vertices_; }
  int vertex_count() const { return topology_->vertex_count(); }

  /// Vertices flattened row-major: (x0, y0, z0, x1, ...).
  Eigen::VectorXd flattened() const;
  static SurfaceMesh from_flat(TopologyPtr topology, const Eigen::VectorXd& flat);

 private:
  TopologyPtr topology_;
  VertexArray vertices_;
};

/// Mean per-vertex Euclidean distance (mm).
double ved(const SurfaceMesh& x, const SurfaceMesh& y);
double ved(const VertexArray& x, const VertexArray& y);

/// Symmetric Chamfer distance: average of the two directed mean
/// nearest-neighbour distances between vertex sets.
double chamfer_distance(const VertexArray& x, const VertexArray& y);

/// Mean distance of vertices from their centroid.
double mean_radius(const VertexArray& v);

/// Area-weighted unit vertex normals.
VertexArray vertex_normals(const SurfaceMesh& mesh);

/// Enclosed volume via the divergence theorem (positive for outward winding).
double enclosed_volume(const SurfaceMesh& mesh);

}  // namespace csm
