#include "csm/simplify.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <string>
#include <tuple>

#include <Eigen/Geometry>

#include "csm/error.hpp"

namespace csm {
namespace {

constexpr double kQuadricRegulariser = 1e-9;

struct Candidate {
  double error;
  int a;
  int b;
  int version_a;
  int version_b;
  Eigen::Vector3d target;

  bool operator>(const Candidate& o) const {
    return std::tie(error, a, b) > std::tie(o.error, o.a, o.b);
  }
};

// Mutable working copy of a triangle mesh supporting edge collapses.
class Collapser {
 public:
  explicit Collapser(const SurfaceMesh& mesh) {
    const int n = mesh.vertex_count();
    positions_.resize(n);
    for (int i = 0; i < n; ++i) positions_[i] = mesh.vertices().row(i).transpose();
    faces_ = mesh.topology().faces();
    face_alive_.assign(faces_.size(), true);
    incident_.assign(n, {});
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      for (int v : faces_[f]) incident_[v].push_back(static_cast<int>(f));
    }
    alive_.assign(n, true);
    version_.assign(n, 0);
    merged_into_.assign(n, -1);
    quadrics_ = vertex_quadrics(mesh);
    alive_count_ = n;
  }

  int alive_count() const { return alive_count_; }

  std::vector<int> neighbours(int v) const {
    std::vector<int> out;
    for (int f : incident_[v]) {
      for (int u : faces_[f]) {
        if (u != v) out.push_back(u);
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  int shared_faces(int a, int b) const {
    int count = 0;
    for (int f : incident_[a]) {
      const Face& face = faces_[f];
      if (face[0] == b || face[1] == b || face[2] == b) ++count;
    }
    return count;
  }

  bool on_boundary(int v) const {
    for (int u : neighbours(v)) {
      if (shared_faces(v, u) == 1) return true;
    }
    return false;
  }

  bool can_collapse(int a, int b) const {
    const std::vector<int> na = neighbours(a);
    const std::vector<int> nb = neighbours(b);
    std::vector<int> common;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
    const int shared = shared_faces(a, b);
    if (shared == 0 || static_cast<int>(common.size()) != shared) return false;
    if (shared == 2 && on_boundary(a) && on_boundary(b)) return false;
    return true;
  }

  Candidate score(int a, int b) const {
    if (a > b) std::swap(a, b);
    Quadric q = quadrics_[a] + quadrics_[b];
    q += kQuadricRegulariser * Quadric::Identity();
    const Eigen::Vector3d options[3] = {positions_[a], positions_[b],
                                        0.5 * (positions_[a] + positions_[b])};
    int best = 0;
    double best_error = quadric_error(q, options[0]);
    for (int i = 1; i < 3; ++i) {
      const double e = quadric_error(q, options[i]);
      if (e < best_error) {
        best_error = e;
        best = i;
      }
    }
    return Candidate{best_error, a, b, version_[a], version_[b], options[best]};
  }

  bool is_current(const Candidate& c) const {
    return alive_[c.a] && alive_[c.b] && version_[c.a] == c.version_a &&
           version_[c.b] == c.version_b;
  }

  // Merges b into a, placing a at `target`.
  void collapse(int a, int b, const Eigen::Vector3d& target) {
    std::vector<int> keep;
    for (int f : incident_[a]) {
      const Face& face = faces_[f];
      if (face[0] == b || face[1] == b || face[2] == b) {
        face_alive_[f] = false;
        for (int v : face) {
          if (v == a) continue;
          auto& inc = incident_[v];
          inc.erase(std::remove(inc.begin(), inc.end(), f), inc.end());
        }
      } else {
        keep.push_back(f);
      }
    }
    for (int f : incident_[b]) {
      if (!face_alive_[f]) continue;
      for (int& v : faces_[f]) {
        if (v == b) v = a;
      }
      keep.push_back(f);
    }
    std::sort(keep.begin(), keep.end());
    incident_[a] = std::move(keep);
    incident_[b].clear();
    quadrics_[a] += quadrics_[b];
    positions_[a] = target;
    alive_[b] = false;
    merged_into_[b] = a;
    ++version_[a];
    ++version_[b];
    --alive_count_;
  }

  void push_edges_of(int v, std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>>& heap) const {
    for (int u : neighbours(v)) heap.push(score(v, u));
  }

  void push_all_edges(std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>>& heap) const {
    for (int v = 0; v < static_cast<int>(alive_.size()); ++v) {
      if (!alive_[v]) continue;
      for (int u : neighbours(v)) {
        if (v < u) heap.push(score(v, u));
      }
    }
  }

  SimplifyResult finish(const SurfaceMesh& fine, double factor, std::vector<Contraction> log) const {
    const int n = static_cast<int>(alive_.size());
    std::vector<int> coarse_index(n, -1);
    std::vector<int> representative;
    for (int v = 0; v < n; ++v) {
      if (alive_[v]) {
        coarse_index[v] = static_cast<int>(representative.size());
        representative.push_back(v);
      }
    }
    std::vector<int> parent(n);
    for (int v = 0; v < n; ++v) {
      int root = v;
      while (!alive_[root]) root = merged_into_[root];
      parent[v] = coarse_index[root];
    }
    std::vector<Face> faces;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!face_alive_[f]) continue;
      const Face& face = faces_[f];
      faces.push_back({coarse_index[face[0]], coarse_index[face[1]], coarse_index[face[2]]});
    }
    const int m = static_cast<int>(representative.size());
    VertexArray verts(m, 3);
    for (int c = 0; c < m; ++c) verts.row(c) = positions_[representative[c]].transpose();
    TopologyPtr coarse = build_topology(std::move(faces), m);

    SimplificationLevel level;
    level.fine = fine.topology_ptr();
    level.coarse = coarse;
    level.factor = factor;
    level.contractions = std::move(log);
    level.parent = std::move(parent);
    level.representative = std::move(representative);
    return SimplifyResult{SurfaceMesh(coarse, std::move(verts)), std::move(level)};
  }

 private:
  std::vector<Eigen::Vector3d> positions_;
  std::vector<Face> faces_;
  std::vector<bool> face_alive_;
  std::vector<std::vector<int>> incident_;
  std::vector<bool> alive_;
  std::vector<int> version_;
  std::vector<int> merged_into_;
  std::vector<Quadric> quadrics_;
  int alive_count_ = 0;
};

int target_count(int n, double factor) {
  return static_cast<int>(std::ceil(static_cast<double>(n) / factor));
}

void check_rows(const Eigen::MatrixXd& features, int n, const char* what) {
  if (features.rows() == 0 || features.rows() % n != 0) {
    fail(ErrorCode::kDimensionMismatch, std::string(what) + ": feature rows (" +
                                            std::to_string(features.rows()) +
                                            ") do not match level size " + std::to_string(n));
  }
}

}  // namespace

std::vector<Quadric> vertex_quadrics(const SurfaceMesh& mesh) {
  const VertexArray& v = mesh.vertices();
  std::vector<Quadric> q(mesh.vertex_count(), Quadric::Zero());
  for (const Face& f : mesh.topology().faces()) {
    const Eigen::Vector3d p0 = v.row(f[0]).transpose();
    const Eigen::Vector3d p1 = v.row(f[1]).transpose();
    const Eigen::Vector3d p2 = v.row(f[2]).transpose();
    Eigen::Vector3d normal = (p1 - p0).cross(p2 - p0);
    const double len = normal.norm();
    if (len == 0.0) continue;
    normal /= len;
    Eigen::Vector4d plane;
    plane << normal, -normal.dot(p0);
    const Quadric kp = plane * plane.transpose();
    for (int idx : f) q[idx] += kp;
  }
  return q;
}

double quadric_error(const Quadric& q, const Eigen::Vector3d& v) {
  Eigen::Vector4d h;
  h << v, 1.0;
  return h.dot(q * h);
}

SimplifyResult quadric_simplify(const SurfaceMesh& mesh, double factor) {
  if (!(factor > 1.0)) fail(ErrorCode::kInvalidArgument, "simplification factor must exceed 1");
  const int n = mesh.vertex_count();
  const int target = target_count(n, factor);
  if (target < 4) {
    fail(ErrorCode::kTopologyCollapse, "simplifying " + std::to_string(n) + " vertices by " +
                                           std::to_string(factor) + " leaves fewer than 4");
  }

  Collapser work(mesh);
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap;
  work.push_all_edges(heap);
  std::vector<Contraction> log;
  bool progressed_since_rebuild = true;

  while (work.alive_count() > target) {
    if (heap.empty()) {
      if (!progressed_since_rebuild) {
        fail(ErrorCode::kTopologyCollapse, "no valid edge collapse left at " +
                                               std::to_string(work.alive_count()) + " vertices");
      }
      work.push_all_edges(heap);
      progressed_since_rebuild = false;
      continue;
    }
    const Candidate c = heap.top();
    heap.pop();
    if (!work.is_current(c) || !work.can_collapse(c.a, c.b)) continue;
    work.collapse(c.a, c.b, c.target);
    log.push_back(Contraction{c.error, c.target, c.a, c.b});
    progressed_since_rebuild = true;
    work.push_edges_of(c.a, heap);
  }
  return work.finish(mesh, factor, std::move(log));
}

SurfaceMesh replay_contractions(const SurfaceMesh& fine, const SimplificationLevel& level) {
  if (!(fine.topology() == *level.fine)) fail(ErrorCode::kTopologyMismatch, "replay on a different fine topology");
  Collapser work(fine);
  for (const Contraction& c : level.contractions) work.collapse(c.v_a, c.v_b, c.target);
  return work.finish(fine, level.factor, level.contractions).mesh;
}

Eigen::MatrixXd simplify_transfer(const Eigen::MatrixXd& fine_features, const SimplificationLevel& level) {
  const int n = level.fine->vertex_count();
  const int m = level.coarse->vertex_count();
  check_rows(fine_features, n, "simplify_transfer");
  const Eigen::Index batch = fine_features.rows() / n;
  Eigen::MatrixXd out(batch * m, fine_features.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int c = 0; c < m; ++c) out.row(b * m + c) = fine_features.row(b * n + level.representative[c]);
  }
  return out;
}

Eigen::MatrixXd unsimplify(const Eigen::MatrixXd& coarse_features, const SimplificationLevel& level) {
  const int n = level.fine->vertex_count();
  const int m = level.coarse->vertex_count();
  check_rows(coarse_features, m, "unsimplify");
  const Eigen::Index batch = coarse_features.rows() / m;
  Eigen::MatrixXd out(batch * n, coarse_features.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int v = 0; v < n; ++v) out.row(b * n + v) = coarse_features.row(b * m + level.parent[v]);
  }
  return out;
}

std::vector<int> SimplificationHierarchy::vertex_counts() const {
  std::vector<int> counts;
  if (levels.empty()) return counts;
  counts.push_back(levels.front().fine->vertex_count());
  for (const auto& l : levels) counts.push_back(l.coarse->vertex_count());
  return counts;
}

SimplificationHierarchy build_hierarchy(const SurfaceMesh& mesh, const std::vector<double>& factors) {
  SimplificationHierarchy h;
  SurfaceMesh current = mesh;
  for (double f : factors) {
    SimplifyResult r = quadric_simplify(current, f);
    current = r.mesh;
    h.levels.push_back(std::move(r.level));
  }
  return h;
}

}  // namespace csm

namespace csm {

Eigen::MatrixXd simplify_transfer_adjoint(const Eigen::MatrixXd& grad_coarse,
                                          const SimplificationLevel& level) {
  const int n = level.fine->vertex_count();
  const int m = level.coarse->vertex_count();
  check_rows(grad_coarse, m, "simplify_transfer_adjoint");
  const Eigen::Index batch = grad_coarse.rows() / m;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(batch * n, grad_coarse.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int c = 0; c < m; ++c) out.row(b * n + level.representative[c]) = grad_coarse.row(b * m + c);
  }
  return out;
}

Eigen::MatrixXd unsimplify_adjoint(const Eigen::MatrixXd& grad_fine, const SimplificationLevel& level) {
  const int n = level.fine->vertex_count();
  const int m = level.coarse->vertex_count();
  check_rows(grad_fine, n, "unsimplify_adjoint");
  const Eigen::Index batch = grad_fine.rows() / n;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(batch * m, grad_fine.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int v = 0; v < n; ++v) out.row(b * m + level.parent[v]) += grad_fine.row(b * n + v);
  }
  return out;
}

}  // namespace csm
