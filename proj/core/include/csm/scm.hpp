#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "csm/cvae.hpp"
#include "csm/flows.hpp"
#include "csm/mesh.hpp"

namespace csm {

enum class Node : int { A = 0, S = 1, B = 2, V = 3, X = 4 };

inline constexpr std::array<Node, 4> kCovariateNodes{Node::A, Node::S, Node::B, Node::V};

std::string_view node_name(Node n);
/// Accepts a/s/b/v/x (case-insensitive) and the long names age, sex,
/// brain_volume, structure_volume, mesh.
Node parse_node(std::string_view name);

/// DAG over {A, S, B, V, X}. Defaults to A, S roots; B <- {A, S};
/// V <- {A, B}; X <- {V, B}.
class CausalGraph {
 public:
  CausalGraph();

  /// Replaces the parent sets of B and/or V. A and S must stay roots and X
  /// keeps {V, B}; the result must be acyclic.
  static CausalGraph with_overrides(const std::map<Node, std::vector<Node>>& parents);

  const std::vector<Node>& parents(Node n) const { return parents_[static_cast<int>(n)]; }
  std::vector<Node> topological_order() const;
  /// Whether `node` is reachable from `ancestor` along directed edges.
  bool is_descendant(Node node, Node ancestor) const;

  bool operator==(const CausalGraph& other) const { return parents_ == other.parents_; }

 private:
  std::array<std::vector<Node>, 5> parents_;
};

struct CovariateRecord {
  double a = 0.0;
  double s = 0.0;
  double b = 0.0;
  double v = 0.0;

  double get(Node n) const;
  void set(Node n, double value);
  /// Throws kDomain unless a, b, v > 0 and finite and s is finite.
  void validate() const;
};

struct ExogenousState {
  double eps_a = 0.0;
  double eps_s = 0.0;
  double eps_b = 0.0;
  double eps_v = 0.0;
  Eigen::VectorXd z;
  Eigen::VectorXd u;
};

/// Partial assignment node -> value. Relative assignments (a+=10) are
/// resolved against the observed record.
class Intervention {
 public:
  struct Assignment {
    double value = 0.0;
    bool relative = false;
  };

  Intervention() = default;

  /// Parses whitespace or comma separated `key=value`, `key+=d`, `key-=d`
  /// items, optionally prefixed by `do`.
  static Intervention parse(std::string_view text);

  Intervention& set(Node n, double value);
  Intervention& shift(Node n, double delta);

  bool empty() const { return items_.empty(); }
  bool contains(Node n) const { return items_.count(n) > 0; }
  const std::map<Node, Assignment>& items() const { return items_; }
  /// Absolute value for node n given the observed record.
  std::optional<double> value_for(Node n, const CovariateRecord& observed) const;
  std::string to_string() const;

 private:
  std::map<Node, Assignment> items_;
};

/// Intermediates a-hat, b-hat, v-hat of a record.
struct Intermediates {
  double a = 0.0;
  double b = 0.0;
  double v = 0.0;
};

struct AbductionOptions {
  /// 0 uses the posterior mean for z_X; k >= 1 averages k posterior draws.
  int z_samples = 0;
  std::uint64_t seed = 0;
};

struct CounterfactualResult {
  CovariateRecord record;
  SurfaceMesh mesh;
  ExogenousState noise;
};

struct ObservationalSample {
  CovariateRecord record;
  SurfaceMesh mesh;
  ExogenousState noise;
};

/// Full causal shape model: covariate mechanisms plus the mesh CVAE.
class CausalShapeModel {
 public:
  CausalShapeModel(const SurfaceMesh& templ, const MeshCvaeConfig& config, CausalGraph graph, std::uint64_t seed);

  const CausalGraph& graph() const { return graph_; }
  BernoulliMechanism& sex() { return sex_; }
  const BernoulliMechanism& sex() const { return sex_; }
  CovariateMechanism& mechanism(Node n);
  const CovariateMechanism& mechanism(Node n) const;
  MeshCvae& mesh_model() { return cvae_; }
  const MeshCvae& mesh_model() const { return cvae_; }
  std::uint64_t seed() const { return seed_; }

  Intermediates intermediates(const CovariateRecord& r) const;
  /// Conditioning context of node n: parent intermediates, with s entering raw.
  std::vector<double> context(Node n, const CovariateRecord& r) const;

  /// log p(a) + log p(s) + log p(b | pa_B) + log p(v | pa_V).
  double covariate_log_evidence(const CovariateRecord& r) const;

  /// Ancestral sampling; deterministic given seed.
  std::vector<ObservationalSample> sample_observational(int n, std::uint64_t seed) const;

  /// Pushes exogenous noise through the covariate mechanisms.
  CovariateRecord covariates_from_noise(const ExogenousState& e) const;
  SurfaceMesh mesh_from_noise(const ExogenousState& e, const CovariateRecord& r) const;

  ExogenousState abduct(const CovariateRecord& r, const SurfaceMesh& x, const AbductionOptions& opt = {}) const;

  /// Abduction, action, prediction. Covariates that do not descend from an
  /// intervened node keep their observed values; X is always re-predicted.
  CounterfactualResult counterfactual(const CovariateRecord& r, const SurfaceMesh& x, const Intervention& iv,
                                      const AbductionOptions& opt = {}) const;
  /// Action and prediction from an already abducted state.
  CounterfactualResult counterfactual_from(const CovariateRecord& r, const ExogenousState& e,
                                           const Intervention& iv) const;

  /// Samples n meshes for a fixed z_X, drawing all other noise afresh.
  std::vector<ObservationalSample> intervene_population(const Intervention& iv, const Eigen::VectorXd& z, int n,
                                                        std::uint64_t seed) const;

  void collect(nn::ParamList& out);

 private:
  double propagate(Node n, double eps, const CovariateRecord& r) const;
  SurfaceMesh predict_mesh(const ExogenousState& e, const CovariateRecord& r) const;

  CausalGraph graph_;
  std::uint64_t seed_;
  BernoulliMechanism sex_;
  CovariateMechanism age_;
  CovariateMechanism brain_;
  CovariateMechanism structure_;
  MeshCvae cvae_;
};

}  // namespace csm
