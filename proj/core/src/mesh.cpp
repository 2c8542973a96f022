#include "csm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Geometry>

#include "csm/error.hpp"
#include "csm/spectral.hpp"

namespace csm {
namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

MeshTopology::MeshTopology(std::vector<Face> faces, int vertex_count)
    : faces_(std::move(faces)), vertex_count_(vertex_count) {
  if (vertex_count_ <= 0) fail(ErrorCode::kInvalidArgument, "vertex count must be positive");
  if (faces_.empty()) fail(ErrorCode::kInvalidArgument, "topology needs at least one face");
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const Face& face = faces_[f];
    for (int idx : face) {
      if (idx < 0 || idx >= vertex_count_) {
        fail(ErrorCode::kIndexOutOfRange, "face " + std::to_string(f) + " references vertex " +
                                              std::to_string(idx) + " outside [0, " +
                                              std::to_string(vertex_count_) + ")");
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      fail(ErrorCode::kDegenerateFace, "face " + std::to_string(f) + " repeats a vertex index");
    }
  }

  neighbours_.assign(vertex_count_, {});
  for (const Face& face : faces_) {
    for (int i = 0; i < 3; ++i) {
      const int a = face[i];
      const int b = face[(i + 1) % 3];
      neighbours_[a].push_back(b);
      neighbours_[b].push_back(a);
    }
  }
  for (auto& n : neighbours_) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }

  std::vector<Eigen::Triplet<double>> adj;
  std::vector<Eigen::Triplet<double>> lap;
  for (int i = 0; i < vertex_count_; ++i) {
    const double di = static_cast<double>(neighbours_[i].size());
    if (di > 0) lap.emplace_back(i, i, 1.0);
    for (int j : neighbours_[i]) {
      const double dj = static_cast<double>(neighbours_[j].size());
      adj.emplace_back(i, j, 1.0);
      lap.emplace_back(i, j, -1.0 / std::sqrt(di * dj));
    }
  }
  adjacency_.resize(vertex_count_, vertex_count_);
  adjacency_.setFromTriplets(adj.begin(), adj.end());
  laplacian_.resize(vertex_count_, vertex_count_);
  laplacian_.setFromTriplets(lap.begin(), lap.end());
  laplacian_.makeCompressed();

  lambda_max_ = largest_eigenvalue(laplacian_);

  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, static_cast<std::uint64_t>(vertex_count_));
  for (const Face& face : faces_) {
    for (int idx : face) h = fnv1a(h, static_cast<std::uint64_t>(idx));
  }
  hash_ = h;
}

TopologyPtr build_topology(std::vector<Face> faces, int vertex_count) {
  return std::make_shared<const MeshTopology>(std::move(faces), vertex_count);
}

SurfaceMesh::SurfaceMesh(TopologyPtr topology, VertexArray vertices)
    : topology_(std::move(topology)), vertices_(std::move(vertices)) {
  if (!topology_) fail(ErrorCode::kInvalidArgument, "mesh without topology");
  if (vertices_.rows() != topology_->vertex_count()) {
    fail(ErrorCode::kDimensionMismatch,
         "vertex array has " + std::to_string(vertices_.rows()) + " rows, topology expects " +
             std::to_string(topology_->vertex_count()));
  }
  if (!vertices_.allFinite()) fail(ErrorCode::kNonFinite, "mesh has non-finite coordinates");
}

Eigen::VectorXd SurfaceMesh::flattened() const {
  return Eigen::Map<const Eigen::VectorXd>(vertices_.data(), vertices_.size());
}

SurfaceMesh SurfaceMesh::from_flat(TopologyPtr topology, const Eigen::VectorXd& flat) {
  const Eigen::Index n = topology->vertex_count();
  if (flat.size() != 3 * n) fail(ErrorCode::kDimensionMismatch, "flat vector size != 3|V|");
  VertexArray v = Eigen::Map<const VertexArray>(flat.data(), n, 3);
  return SurfaceMesh(std::move(topology), std::move(v));
}

double ved(const VertexArray& x, const VertexArray& y) {
  if (x.rows() != y.rows()) fail(ErrorCode::kTopologyMismatch, "VED between meshes of different size");
  if (x.rows() == 0) return 0.0;
  return (x - y).rowwise().norm().mean();
}

double ved(const SurfaceMesh& x, const SurfaceMesh& y) {
  if (!(x.topology() == y.topology())) fail(ErrorCode::kTopologyMismatch, "VED needs a shared topology");
  return ved(x.vertices(), y.vertices());
}

double chamfer_distance(const VertexArray& x, const VertexArray& y) {
  auto directed = [](const VertexArray& from, const VertexArray& to) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < to.rows(); ++j) {
        best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
      }
      total += std::sqrt(best);
    }
    return total / static_cast<double>(from.rows());
  };
  if (x.rows() == 0 || y.rows() == 0) fail(ErrorCode::kInvalidArgument, "Chamfer distance of empty set");
  return 0.5 * (directed(x, y) + directed(y, x));
}

double mean_radius(const VertexArray& v) {
  const Eigen::RowVector3d c = v.colwise().mean();
  return (v.rowwise() - c).rowwise().norm().mean();
}

VertexArray vertex_normals(const SurfaceMesh& mesh) {
  const VertexArray& v = mesh.vertices();
  VertexArray n = VertexArray::Zero(v.rows(), 3);
  for (const Face& f : mesh.topology().faces()) {
    const Eigen::RowVector3d e1 = v.row(f[1]) - v.row(f[0]);
    const Eigen::RowVector3d e2 = v.row(f[2]) - v.row(f[0]);
    const Eigen::RowVector3d fn = e1.cross(e2);
    for (int idx : f) n.row(idx) += fn;
  }
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    const double len = n.row(i).norm();
    if (len > 0) n.row(i) /= len;
  }
  return n;
}

double enclosed_volume(const SurfaceMesh& mesh) {
  const VertexArray& v = mesh.vertices();
  double vol = 0.0;
  for (const Face& f : mesh.topology().faces()) {
    const Eigen::Vector3d a = v.row(f[0]).transpose();
    const Eigen::Vector3d b = v.row(f[1]).transpose();
    const Eigen::Vector3d c = v.row(f[2]).transpose();
    vol += a.dot(b.cross(c));
  }
  return vol / 6.0;
}

}  // namespace csm
