#include "csm/scm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "csm/error.hpp"
#include "csm/rng.hpp"

namespace csm {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

int idx(Node n) { return static_cast<int>(n); }

bool reaches(const std::array<std::vector<Node>, 5>& parents, Node node, Node ancestor) {
  for (Node p : parents[idx(node)]) {
    if (p == ancestor || reaches(parents, p, ancestor)) return true;
  }
  return false;
}

double parse_number(const std::string& text, const std::string& item) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    if (!std::isfinite(v)) fail(ErrorCode::kDomain, "intervention value must be finite: " + item);
    return v;
  } catch (const std::logic_error&) {
    fail(ErrorCode::kParse, "malformed intervention value in '" + item + "'");
  }
}

}  // namespace

std::string_view node_name(Node n) {
  switch (n) {
    case Node::A: return "a";
    case Node::S: return "s";
    case Node::B: return "b";
    case Node::V: return "v";
    case Node::X: return "x";
  }
  return "?";
}

Node parse_node(std::string_view name) {
  const std::string n = lower(name);
  if (n == "a" || n == "age") return Node::A;
  if (n == "s" || n == "sex") return Node::S;
  if (n == "b" || n == "brain_volume") return Node::B;
  if (n == "v" || n == "structure_volume") return Node::V;
  if (n == "x" || n == "mesh") return Node::X;
  fail(ErrorCode::kUnknownNode, "unknown node '" + std::string(name) + "' (expected one of a, s, b, v, x)");
}

CausalGraph::CausalGraph() {
  parents_[idx(Node::B)] = {Node::A, Node::S};
  parents_[idx(Node::V)] = {Node::A, Node::B};
  parents_[idx(Node::X)] = {Node::V, Node::B};
}

CausalGraph CausalGraph::with_overrides(const std::map<Node, std::vector<Node>>& parents) {
  CausalGraph g;
  for (const auto& [node, ps] : parents) {
    if (node != Node::B && node != Node::V)
      fail(ErrorCode::kConfig, "only the parents of b and v may be overridden, not " + std::string(node_name(node)));
    std::vector<Node> sorted = ps;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      fail(ErrorCode::kConfig, "duplicate parent for " + std::string(node_name(node)));
    for (Node p : ps)
      if (p == Node::X || p == node)
        fail(ErrorCode::kConfig, "invalid parent " + std::string(node_name(p)) + " for " + std::string(node_name(node)));
    g.parents_[idx(node)] = ps;
  }
  for (Node n : kCovariateNodes)
    if (reaches(g.parents_, n, n)) fail(ErrorCode::kConfig, "graph override introduces a cycle through " + std::string(node_name(n)));
  return g;
}

std::vector<Node> CausalGraph::topological_order() const {
  std::vector<Node> order;
  std::array<bool, 5> done{};
  while (order.size() < 5) {
    for (int i = 0; i < 5; ++i) {
      if (done[i]) continue;
      bool ready = std::all_of(parents_[i].begin(), parents_[i].end(), [&](Node p) { return done[idx(p)]; });
      if (ready) {
        done[i] = true;
        order.push_back(static_cast<Node>(i));
        break;
      }
    }
  }
  return order;
}

bool CausalGraph::is_descendant(Node node, Node ancestor) const { return reaches(parents_, node, ancestor); }

double CovariateRecord::get(Node n) const {
  switch (n) {
    case Node::A: return a;
    case Node::S: return s;
    case Node::B: return b;
    case Node::V: return v;
    case Node::X: break;
  }
  fail(ErrorCode::kInvalidArgument, "x is not a covariate");
}

void CovariateRecord::set(Node n, double value) {
  switch (n) {
    case Node::A: a = value; return;
    case Node::S: s = value; return;
    case Node::B: b = value; return;
    case Node::V: v = value; return;
    case Node::X: break;
  }
  fail(ErrorCode::kInvalidArgument, "x is not a covariate");
}

void CovariateRecord::validate() const {
  auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
  if (!positive(a) || !positive(b) || !positive(v) || !std::isfinite(s))
    fail(ErrorCode::kDomain, "invalid covariates: a, b, v must be positive and finite");
}

Intervention Intervention::parse(std::string_view text) {
  std::string buf(text);
  std::replace(buf.begin(), buf.end(), ',', ' ');
  std::istringstream in(buf);
  Intervention iv;
  std::string item;
  bool first = true;
  while (in >> item) {
    if (first && lower(item) == "do") {
      first = false;
      continue;
    }
    first = false;
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorCode::kParse, "expected key=value in '" + item + "'");
    std::string key = item.substr(0, eq);
    bool relative = false;
    double sign = 1.0;
    if (key.back() == '+' || key.back() == '-') {
      relative = true;
      sign = key.back() == '-' ? -1.0 : 1.0;
      key.pop_back();
    }
    Node n = parse_node(key);
    if (n == Node::X) fail(ErrorCode::kInvalidArgument, "the mesh node cannot be intervened on");
    if (iv.contains(n)) fail(ErrorCode::kInvalidArgument, "node " + std::string(node_name(n)) + " intervened twice");
    double value = parse_number(item.substr(eq + 1), item);
    if (relative)
      iv.shift(n, sign * value);
    else
      iv.set(n, value);
  }
  return iv;
}

Intervention& Intervention::set(Node n, double value) {
  if (n == Node::X) fail(ErrorCode::kInvalidArgument, "the mesh node cannot be intervened on");
  if (!std::isfinite(value)) fail(ErrorCode::kDomain, "intervention value must be finite");
  items_[n] = {value, false};
  return *this;
}

Intervention& Intervention::shift(Node n, double delta) {
  if (n == Node::X) fail(ErrorCode::kInvalidArgument, "the mesh node cannot be intervened on");
  if (!std::isfinite(delta)) fail(ErrorCode::kDomain, "intervention value must be finite");
  items_[n] = {delta, true};
  return *this;
}

std::optional<double> Intervention::value_for(Node n, const CovariateRecord& observed) const {
  auto it = items_.find(n);
  if (it == items_.end()) return std::nullopt;
  return it->second.relative ? observed.get(n) + it->second.value : it->second.value;
}

std::string Intervention::to_string() const {
  std::ostringstream out;
  out.precision(17);
  bool first = true;
  for (const auto& [n, a] : items_) {
    if (!first) out << ' ';
    first = false;
    out << node_name(n);
    if (a.relative)
      out << (a.value < 0 ? "-=" : "+=") << std::fabs(a.value);
    else
      out << '=' << a.value;
  }
  return out.str();
}

namespace {

CovariateMechanism make_mechanism(const std::string& name, const std::vector<Node>& parents, Rng& rng) {
  if (parents.empty()) return CovariateMechanism::unconditional(name);
  return CovariateMechanism::conditional(name, static_cast<int>(parents.size()), rng);
}

}  // namespace

CausalShapeModel::CausalShapeModel(const SurfaceMesh& templ, const MeshCvaeConfig& config, CausalGraph graph,
                                   std::uint64_t seed)
    : graph_(std::move(graph)),
      seed_(seed),
      age_(CovariateMechanism::unconditional("age")),
      brain_(CovariateMechanism::unconditional("brain_volume")),
      structure_(CovariateMechanism::unconditional("structure_volume")),
      cvae_(templ, config, seed) {
  Rng rng(derive_seed(seed, 0x666c6f77));
  brain_ = make_mechanism("brain_volume", graph_.parents(Node::B), rng);
  structure_ = make_mechanism("structure_volume", graph_.parents(Node::V), rng);
}

CovariateMechanism& CausalShapeModel::mechanism(Node n) {
  return const_cast<CovariateMechanism&>(std::as_const(*this).mechanism(n));
}

const CovariateMechanism& CausalShapeModel::mechanism(Node n) const {
  switch (n) {
    case Node::A: return age_;
    case Node::B: return brain_;
    case Node::V: return structure_;
    default: break;
  }
  fail(ErrorCode::kInvalidArgument, "node " + std::string(node_name(n)) + " has no continuous mechanism");
}

Intermediates CausalShapeModel::intermediates(const CovariateRecord& r) const {
  return {age_.intermediate_of(r.a), brain_.intermediate_of(r.b), structure_.intermediate_of(r.v)};
}

std::vector<double> CausalShapeModel::context(Node n, const CovariateRecord& r) const {
  std::vector<double> ctx;
  for (Node p : graph_.parents(n)) {
    if (p == Node::S)
      ctx.push_back(r.s);
    else
      ctx.push_back(mechanism(p).intermediate_of(r.get(p)));
  }
  return ctx;
}

double CausalShapeModel::covariate_log_evidence(const CovariateRecord& r) const {
  r.validate();
  return age_.log_prob(r.a, context(Node::A, r)) + sex_.log_prob(r.s) + brain_.log_prob(r.b, context(Node::B, r)) +
         structure_.log_prob(r.v, context(Node::V, r));
}

double CausalShapeModel::propagate(Node n, double eps, const CovariateRecord& r) const {
  return mechanism(n).forward(eps, context(n, r)).value;
}

SurfaceMesh CausalShapeModel::predict_mesh(const ExogenousState& e, const CovariateRecord& r) const {
  Intermediates h = intermediates(r);
  return cvae_.reparam_forward(e.u, cvae_.decode(e.z, h.v, h.b));
}

CovariateRecord CausalShapeModel::covariates_from_noise(const ExogenousState& e) const {
  CovariateRecord r;
  for (Node n : graph_.topological_order()) {
    if (n == Node::X) continue;
    if (n == Node::S)
      r.s = sex_.forward(e.eps_s);
    else
      r.set(n, propagate(n, n == Node::A ? e.eps_a : n == Node::B ? e.eps_b : e.eps_v, r));
  }
  return r;
}

SurfaceMesh CausalShapeModel::mesh_from_noise(const ExogenousState& e, const CovariateRecord& r) const {
  return predict_mesh(e, r);
}

std::vector<ObservationalSample> CausalShapeModel::sample_observational(int n, std::uint64_t seed) const {
  if (n < 0) fail(ErrorCode::kInvalidArgument, "sample count must be non-negative");
  std::vector<ObservationalSample> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    ExogenousState e;
    e.eps_a = rng.normal();
    e.eps_s = sex_.sample(rng);
    e.eps_b = rng.normal();
    e.eps_v = rng.normal();
    e.z = rng.normal_vector(cvae_.latent_dim());
    e.u = rng.normal_vector(3 * cvae_.vertex_count());
    CovariateRecord r = covariates_from_noise(e);
    SurfaceMesh x = predict_mesh(e, r);
    out.push_back({r, std::move(x), std::move(e)});
  }
  return out;
}

ExogenousState CausalShapeModel::abduct(const CovariateRecord& r, const SurfaceMesh& x,
                                        const AbductionOptions& opt) const {
  r.validate();
  if (opt.z_samples < 0) fail(ErrorCode::kInvalidArgument, "z_samples must be non-negative");
  ExogenousState e;
  e.eps_a = age_.inverse(r.a, context(Node::A, r)).eps;
  e.eps_s = r.s;
  e.eps_b = brain_.inverse(r.b, context(Node::B, r)).eps;
  e.eps_v = structure_.inverse(r.v, context(Node::V, r)).eps;
  Intermediates h = intermediates(r);
  EncoderOutput q = cvae_.encode(x, h.v, h.b);
  if (opt.z_samples == 0) {
    e.z = q.mu_z;
  } else {
    Rng rng(derive_seed(opt.seed, 0x7a));
    Eigen::VectorXd sd = (0.5 * q.log_var_z.array()).exp().matrix();
    e.z = Eigen::VectorXd::Zero(q.mu_z.size());
    for (int k = 0; k < opt.z_samples; ++k) e.z += q.mu_z + sd.cwiseProduct(rng.normal_vector(q.mu_z.size()));
    e.z /= static_cast<double>(opt.z_samples);
  }
  e.u = cvae_.reparam_inverse(x, cvae_.decode(e.z, h.v, h.b));
  if (!e.u.allFinite() || !e.z.allFinite()) fail(ErrorCode::kNonFinite, "abduction produced non-finite noise");
  return e;
}

CounterfactualResult CausalShapeModel::counterfactual_from(const CovariateRecord& r, const ExogenousState& e,
                                                           const Intervention& iv) const {
  CovariateRecord cf = r;
  for (Node n : graph_.topological_order()) {
    if (n == Node::X) continue;
    if (auto value = iv.value_for(n, r)) {
      cf.set(n, *value);
      continue;
    }
    bool affected = std::any_of(iv.items().begin(), iv.items().end(),
                                [&](const auto& item) { return graph_.is_descendant(n, item.first); });
    if (!affected || n == Node::S) continue;
    cf.set(n, propagate(n, n == Node::A ? e.eps_a : n == Node::B ? e.eps_b : e.eps_v, cf));
  }
  cf.validate();
  SurfaceMesh x = predict_mesh(e, cf);
  return {cf, std::move(x), e};
}

CounterfactualResult CausalShapeModel::counterfactual(const CovariateRecord& r, const SurfaceMesh& x,
                                                      const Intervention& iv, const AbductionOptions& opt) const {
  return counterfactual_from(r, abduct(r, x, opt), iv);
}

std::vector<ObservationalSample> CausalShapeModel::intervene_population(const Intervention& iv,
                                                                        const Eigen::VectorXd& z, int n,
                                                                        std::uint64_t seed) const {
  if (n < 0) fail(ErrorCode::kInvalidArgument, "sample count must be non-negative");
  if (z.size() != cvae_.latent_dim()) fail(ErrorCode::kDimensionMismatch, "z has wrong dimension");
  std::vector<ObservationalSample> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    ExogenousState e;
    e.eps_a = rng.normal();
    e.eps_s = sex_.sample(rng);
    e.eps_b = rng.normal();
    e.eps_v = rng.normal();
    e.z = z;
    e.u = rng.normal_vector(3 * cvae_.vertex_count());
    CovariateRecord r;
    for (Node node : graph_.topological_order()) {
      if (node == Node::X) continue;
      double natural = node == Node::S ? e.eps_s
                                       : propagate(node, node == Node::A ? e.eps_a : node == Node::B ? e.eps_b : e.eps_v, r);
      r.set(node, natural);
      if (auto value = iv.value_for(node, r)) r.set(node, *value);
    }
    r.validate();
    SurfaceMesh x = predict_mesh(e, r);
    out.push_back({r, std::move(x), std::move(e)});
  }
  return out;
}

void CausalShapeModel::collect(nn::ParamList& out) {
  age_.collect(out);
  brain_.collect(out);
  structure_.collect(out);
  cvae_.collect(out);
}

}  // namespace csm
