#include "csm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "csm/error.hpp"
#include "csm/rng.hpp"

namespace csm {
namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void require_nonempty(const Dataset& d, const char* what) {
  if (d.size() == 0) fail(ErrorCode::kInvalidArgument, std::string(what) + ": empty test set");
}

}  // namespace

Eigen::VectorXd PcaModel::project(const Eigen::VectorXd& x, int k) const {
  k = std::clamp(k, 0, static_cast<int>(components.rows()));
  return components.topRows(k) * (x - mean);
}

Eigen::VectorXd PcaModel::reconstruct(const Eigen::VectorXd& x, int k) const {
  k = std::clamp(k, 0, static_cast<int>(components.rows()));
  return mean + components.topRows(k).transpose() * project(x, k);
}

std::vector<double> PcaModel::explained_variance_ratio(int k) const {
  const double total = explained_variance.sum();
  k = std::clamp(k, 0, static_cast<int>(explained_variance.size()));
  std::vector<double> out(k, 0.0);
  if (total > 0.0)
    for (int i = 0; i < k; ++i) out[i] = explained_variance[i] / total;
  return out;
}

PcaModel fit_pca(const Eigen::MatrixXd& data) {
  if (data.rows() < 2) fail(ErrorCode::kInvalidArgument, "PCA needs at least two samples");
  PcaModel p;
  p.mean = data.colwise().mean().transpose();
  Eigen::MatrixXd centred = data.rowwise() - p.mean.transpose();
  Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(data.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::Index n = cov.rows();
  p.components.resize(n, n);
  p.explained_variance.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.components.row(i) = es.eigenvectors().col(n - 1 - i).transpose();
    p.explained_variance[i] = std::max(0.0, es.eigenvalues()[n - 1 - i]);
  }
  const double top = p.explained_variance.size() ? p.explained_variance[0] : 0.0;
  p.rank = static_cast<int>((p.explained_variance.array() > 1e-12 * top).count());
  return p;
}

Summary summarise(std::vector<double> values) {
  Summary s;
  if (values.empty()) return {NAN, NAN, NAN};
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  s.median = quantile(std::move(values), 0.5);
  return s;
}

EvalReport reconstruction_table(const CausalShapeModel& model, const Dataset& test, const PcaModel& pca,
                                const std::vector<int>& pca_modes, std::uint64_t seed) {
  require_nonempty(test, "reconstruction_table");
  const auto& topo = model.mesh_model().topology();
  Table t{"reconstruction", {"model", "latent_dim", "mean_ved", "std_ved", "median_ved", "chamfer"}, {}};
  auto add = [&](const std::string& name, const std::string& dim, const std::vector<double>& ved,
                 const std::vector<double>& chamfer) {
    Summary s = summarise(ved);
    Summary c = summarise(chamfer);
    t.add_row({name, dim, s.mean, s.std, s.median, c.mean});
  };
  for (int k : pca_modes) {
    if (k < 1 || k > pca.components.rows()) continue;
    std::vector<double> ved_v, ch;
    for (int i = 0; i < test.size(); ++i) {
      Eigen::VectorXd x = test.meshes.row(i).transpose();
      SurfaceMesh rec = SurfaceMesh::from_flat(topo, pca.reconstruct(x, k));
      SurfaceMesh obs = SurfaceMesh::from_flat(topo, x);
      ved_v.push_back(ved(rec, obs));
      ch.push_back(chamfer_distance(rec.vertices(), obs.vertices()));
    }
    add("pca", std::to_string(k), ved_v, ch);
  }
  const auto& cvae = model.mesh_model();
  std::vector<double> sv, sc, iv, ic;
  for (int i = 0; i < test.size(); ++i) {
    SurfaceMesh obs = test.mesh(i, topo);
    ExogenousState e = model.abduct(test.records[i], obs);
    Intermediates h = model.intermediates(test.records[i]);
    LikelihoodParams p = cvae.decode(e.z, h.v, h.b);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    SurfaceMesh sampled = cvae.reparam_forward(rng.normal_vector(3 * cvae.vertex_count()), p);
    SurfaceMesh inferred = cvae.reparam_forward(e.u, p);
    sv.push_back(ved(sampled, obs));
    sc.push_back(chamfer_distance(sampled.vertices(), obs.vertices()));
    iv.push_back(ved(inferred, obs));
    ic.push_back(chamfer_distance(inferred.vertices(), obs.vertices()));
  }
  const std::string d = std::to_string(cvae.latent_dim());
  add("f_X(z_i,u)", d, sv, sc);
  add("f_X(z_i,u_i)", d, iv, ic);
  EvalReport r;
  r.tables.push_back(std::move(t));
  return r;
}

CompactnessCurves pca_compactness(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int k) {
  if (a.cols() != b.cols()) fail(ErrorCode::kTopologyMismatch, "compactness inputs differ in vertex count");
  return {fit_pca(a).explained_variance_ratio(k), fit_pca(b).explained_variance_ratio(k)};
}

std::vector<InterventionFamily> default_specificity_families(const Dataset& reference) {
  if (reference.size() == 0) fail(ErrorCode::kInvalidArgument, "specificity grid needs reference subjects");
  std::vector<double> a, b, v;
  for (const auto& r : reference.records) {
    a.push_back(r.a);
    b.push_back(r.b);
    v.push_back(r.v);
  }
  const double qs[] = {0.1, 0.5, 0.9};
  InterventionFamily as{"do(a,s)", {}};
  InterventionFamily bv{"do(b,v)", {}};
  for (double q : qs)
    for (double s : {0.0, 1.0}) as.settings.push_back(Intervention().set(Node::A, quantile(a, q)).set(Node::S, s));
  for (double qb : qs)
    for (double qv : qs)
      bv.settings.push_back(Intervention().set(Node::B, quantile(b, qb)).set(Node::V, quantile(v, qv)));
  return {as, bv};
}

EvalReport specificity(const CausalShapeModel& model, const Eigen::VectorXd& z,
                       const std::vector<InterventionFamily>& families, int n_per_setting, const Dataset& test,
                       std::uint64_t seed) {
  require_nonempty(test, "specificity");
  const auto& topo = model.mesh_model().topology();
  std::vector<SurfaceMesh> test_meshes;
  for (int i = 0; i < test.size(); ++i) test_meshes.push_back(test.mesh(i, topo));
  Table t{"specificity", {"do", "mean", "std", "median", "n"}, {}};
  for (std::size_t f = 0; f < families.size(); ++f) {
    std::vector<double> errors;
    for (std::size_t s = 0; s < families[f].settings.size(); ++s) {
      auto samples = model.intervene_population(families[f].settings[s], z, n_per_setting,
                                                derive_seed(seed, (f << 20) + s));
      for (const auto& sample : samples) {
        double e = 0.0;
        for (const auto& x : test_meshes) e += ved(sample.mesh, x);
        errors.push_back(e / static_cast<double>(test_meshes.size()));
      }
    }
    Summary sm = summarise(errors);
    t.add_row({families[f].label, sm.mean, sm.std, sm.median, static_cast<double>(errors.size())});
  }
  EvalReport r;
  r.tables.push_back(std::move(t));
  return r;
}

std::vector<InterpolationMesh> latent_interpolation(const CausalShapeModel& model, const std::vector<int>& dims,
                                                    const std::vector<double>& offsets, double v_mean, double b_mean) {
  const auto& cvae = model.mesh_model();
  const int d = cvae.latent_dim();
  for (int k : dims)
    if (k < 0 || k >= d)
      fail(ErrorCode::kInvalidArgument, "latent dimension " + std::to_string(k) + " out of range [0, " + std::to_string(d) + ")");
  const double vh = model.mechanism(Node::V).intermediate_of(v_mean);
  const double bh = model.mechanism(Node::B).intermediate_of(b_mean);
  auto mesh_at = [&](const Eigen::VectorXd& z) {
    return SurfaceMesh::from_flat(cvae.topology(), cvae.decode(z, vh, bh).mu);
  };
  std::vector<InterpolationMesh> out;
  SurfaceMesh mean = mesh_at(Eigen::VectorXd::Zero(d));
  VertexArray normals = vertex_normals(mean);
  out.push_back({-1, 0.0, mean, Eigen::VectorXd::Zero(mean.vertex_count())});
  for (int k : dims)
    for (double off : offsets) {
      Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
      z[k] = off;
      SurfaceMesh m = mesh_at(z);
      Eigen::VectorXd disp = (m.vertices() - mean.vertices()).cwiseProduct(normals).rowwise().sum();
      out.push_back({k, off, std::move(m), std::move(disp)});
    }
  return out;
}

std::vector<TraitBucket> default_trait_buckets() {
  std::vector<TraitBucket> b;
  b.push_back({"identity", Intervention(), -1, 0.0});
  for (double d : {-20.0, -15.0, -10.0, -5.0, 5.0, 10.0, 15.0, 20.0}) {
    b.push_back({"do(a" + std::string(d > 0 ? "+" : "") + fmt(d) + ")", Intervention().shift(Node::A, d), -1, d});
  }
  b.push_back({"do(s=1) female", Intervention().set(Node::S, 1.0), 0, 0.0});
  b.push_back({"do(s=0) male", Intervention().set(Node::S, 0.0), 1, 0.0});
  return b;
}

EvalReport trait_preservation(const CausalShapeModel& model, const Dataset& test,
                              const std::vector<TraitBucket>& buckets, int max_subjects) {
  require_nonempty(test, "trait_preservation");
  const auto& topo = model.mesh_model().topology();
  const int n = max_subjects < 0 ? test.size() : std::min(max_subjects, test.size());
  std::vector<std::vector<double>> veds(buckets.size());
  for (int i = 0; i < n; ++i) {
    const CovariateRecord& r = test.records[i];
    SurfaceMesh x = test.mesh(i, topo);
    ExogenousState e = model.abduct(r, x);
    for (std::size_t k = 0; k < buckets.size(); ++k) {
      if (buckets[k].sex >= 0 && r.s != static_cast<double>(buckets[k].sex)) continue;
      CounterfactualResult cf = model.counterfactual_from(r, e, buckets[k].iv);
      CounterfactualResult back =
          model.counterfactual(cf.record, cf.mesh, Intervention().set(Node::B, r.b).set(Node::V, r.v));
      veds[k].push_back(ved(back.mesh, x));
    }
  }
  Table t{"trait_preservation", {"bucket", "n", "median_ved", "mean_ved"}, {}};
  for (std::size_t k = 0; k < buckets.size(); ++k) {
    Summary s = summarise(veds[k]);
    t.add_row({buckets[k].label, static_cast<double>(veds[k].size()), s.median, s.mean});
  }
  EvalReport rep;
  rep.tables.push_back(std::move(t));
  return rep;
}

std::vector<InterventionFamily> default_trajectory_families(const CovariateRecord& o) {
  InterventionFamily age{"do(a+T)", {}}, sex{"do(s=S)", {}}, brain{"do(b)", {}}, stem{"do(v)", {}};
  for (double t : {-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0}) age.settings.push_back(Intervention().shift(Node::A, t));
  for (double s : {0.0, 0.2, 0.4, 0.6, 1.0}) sex.settings.push_back(Intervention().set(Node::S, s));
  for (double f : {0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15}) {
    brain.settings.push_back(Intervention().set(Node::B, o.b * f));
    stem.settings.push_back(Intervention().set(Node::V, o.v * f));
  }
  return {age, sex, brain, stem};
}

EvalReport counterfactual_trajectories(const CausalShapeModel& model, const CovariateRecord& record,
                                       const SurfaceMesh& mesh, const std::vector<InterventionFamily>& families,
                                       std::vector<SurfaceMesh>* meshes) {
  ExogenousState e = model.abduct(record, mesh);
  Table t{"trajectories", {"family", "step", "a", "s", "b", "v", "ved_to_observed"}, {}};
  for (const auto& f : families)
    for (std::size_t s = 0; s < f.settings.size(); ++s) {
      CounterfactualResult cf = model.counterfactual_from(record, e, f.settings[s]);
      t.add_row({f.label, static_cast<double>(s), cf.record.a, cf.record.s, cf.record.b, cf.record.v,
                 ved(cf.mesh, mesh)});
      if (meshes) meshes->push_back(cf.mesh);
    }
  EvalReport r;
  r.tables.push_back(std::move(t));
  return r;
}

EvalReport shape_projection(const CausalShapeModel& model, const Eigen::VectorXd& z, int n, std::uint64_t seed) {
  auto samples = model.intervene_population(Intervention(), z, n, seed);
  Table t{"shape_projection", {"x_embed", "y_embed", "a", "s", "b", "v"}, {}};
  if (n >= 2) {
    Eigen::MatrixXd data(n, 3 * model.mesh_model().vertex_count());
    for (int i = 0; i < n; ++i) data.row(i) = samples[i].mesh.flattened().transpose();
    PcaModel pca = fit_pca(data);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd c = pca.project(data.row(i).transpose(), 2);
      const auto& r = samples[i].record;
      t.add_row({c[0], c.size() > 1 ? c[1] : 0.0, r.a, r.s, r.b, r.v});
    }
  } else {
    for (const auto& s : samples) t.add_row({0.0, 0.0, s.record.a, s.record.s, s.record.b, s.record.v});
  }
  EvalReport r;
  r.tables.push_back(std::move(t));
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::kInvalidArgument, "spearman needs paired samples");
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace csm
