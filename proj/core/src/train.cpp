#include "csm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "csm/align.hpp"
#include "csm/error.hpp"
#include "csm/mesh_io.hpp"
#include "csm/rng.hpp"

namespace csm {
namespace {

Eigen::MatrixXd covariate_contexts(const CausalShapeModel& model, Node n, const std::vector<CovariateRecord>& rs,
                                   const std::vector<int>& index) {
  const int dim = model.mechanism(n).context_dim();
  Eigen::MatrixXd ctx(static_cast<Eigen::Index>(index.size()), dim);
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto c = model.context(n, rs[index[i]]);
    for (int k = 0; k < dim; ++k) ctx(static_cast<Eigen::Index>(i), k) = c[k];
  }
  return ctx;
}

struct BatchTerms {
  Eigen::VectorXd alpha;
  Eigen::VectorXd log_likelihood;
  Eigen::VectorXd kl;
  double ved_sum = 0.0;
};

// ELBO terms for the subjects in `index`; accumulates gradients of
// -grad_weight * sum(ELBO) when grad_weight != 0.
BatchTerms batch_terms(CausalShapeModel& model, const Dataset& data, const std::vector<int>& index,
                       const Eigen::MatrixXd& xi, double grad_weight) {
  const auto b = static_cast<Eigen::Index>(index.size());
  BatchTerms t;
  t.alpha = Eigen::VectorXd::Zero(b);
  for (Node n : {Node::A, Node::B, Node::V}) {
    Eigen::VectorXd values(b);
    for (Eigen::Index i = 0; i < b; ++i) values[i] = data.records[index[i]].get(n);
    t.alpha += model.mechanism(n).log_prob_batch(values, covariate_contexts(model, n, data.records, index), grad_weight);
  }
  Eigen::MatrixXd x(b, data.meshes.cols());
  Eigen::MatrixXd cond(b, 2);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& r = data.records[index[i]];
    t.alpha[i] += model.sex().log_prob(r.s);
    x.row(i) = data.meshes.row(index[i]);
    Intermediates h = model.intermediates(r);
    cond(i, 0) = h.v;
    cond(i, 1) = h.b;
  }
  auto e = model.mesh_model().elbo_terms(x, cond, xi, grad_weight);
  t.log_likelihood = std::move(e.log_likelihood);
  t.kl = std::move(e.kl);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index v = 0; v < x.cols() / 3; ++v) t.ved_sum += (x.row(i).segment<3>(3 * v) - e.mu.row(i).segment<3>(3 * v)).norm();
  }
  t.ved_sum /= static_cast<double>(x.cols() / 3);
  return t;
}

void check_finite(const BatchTerms& t, int epoch) {
  auto bad = [](const Eigen::VectorXd& v) { return !v.allFinite(); };
  const char* term = bad(t.alpha) ? "covariate log-evidence" : bad(t.log_likelihood) ? "mesh log-likelihood"
                                                             : bad(t.kl)             ? "KL divergence"
                                                                                     : nullptr;
  if (term) fail(ErrorCode::kDivergence, "non-finite " + std::string(term) + " at epoch " + std::to_string(epoch));
}

}  // namespace

AlignMode parse_align_mode(const std::string& name) {
  if (name == "none") return AlignMode::kNone;
  if (name == "rigid") return AlignMode::kRigid;
  if (name == "similarity") return AlignMode::kSimilarity;
  fail(ErrorCode::kConfig, "unknown alignment mode '" + name + "' (expected none, rigid or similarity)");
}

std::string align_mode_name(AlignMode mode) {
  switch (mode) {
    case AlignMode::kNone: return "none";
    case AlignMode::kRigid: return "rigid";
    case AlignMode::kSimilarity: return "similarity";
  }
  return "none";
}

SurfaceMesh Dataset::mesh(int i, const TopologyPtr& topology) const {
  return SurfaceMesh::from_flat(topology, meshes.row(i).transpose());
}

Dataset load_split(const CohortManifest& manifest, const std::string& split, const SurfaceMesh& templ,
                   AlignMode align) {
  auto rows = manifest.split(split);
  Dataset d;
  d.meshes.resize(static_cast<Eigen::Index>(rows.size()), 3 * templ.vertex_count());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i]->record.validate();
    SurfaceMesh m = read_mesh(manifest.resolve(*rows[i]), templ.topology_ptr());
    if (align != AlignMode::kNone) m = kabsch_umeyama_align(m, templ, align == AlignMode::kSimilarity);
    d.ids.push_back(rows[i]->id);
    d.records.push_back(rows[i]->record);
    d.meshes.row(static_cast<Eigen::Index>(i)) = m.flattened().transpose();
  }
  return d;
}

void fit_statistics(CausalShapeModel& model, const Dataset& train) {
  if (train.size() < 2) fail(ErrorCode::kInvalidArgument, "need at least two training subjects");
  for (Node n : {Node::A, Node::B, Node::V}) {
    std::vector<double> values;
    for (const auto& r : train.records) values.push_back(r.get(n));
    model.mechanism(n).fit_normalisation(values);
  }
  std::vector<double> sexes;
  for (const auto& r : train.records) sexes.push_back(r.s);
  model.sex().fit(sexes);
  Eigen::VectorXd mean = train.meshes.colwise().mean().transpose();
  double scale = std::sqrt((train.meshes.rowwise() - mean.transpose()).squaredNorm() /
                           static_cast<double>(train.meshes.size()));
  if (!(scale > 0.0)) fail(ErrorCode::kZeroVariance, "training meshes are identical");
  model.mesh_model().set_shape_normalisation(mean, scale);
}

ElboSummary evaluate_elbo(const CausalShapeModel& model, const Dataset& data, std::uint64_t seed, int batch_size) {
  if (data.size() == 0) fail(ErrorCode::kInvalidArgument, "cannot evaluate the ELBO on an empty dataset");
  auto& m = const_cast<CausalShapeModel&>(model);
  const int dim = model.mesh_model().latent_dim();
  ElboSummary s;
  for (int start = 0; start < data.size(); start += batch_size) {
    const int stop = std::min(data.size(), start + batch_size);
    std::vector<int> index(stop - start);
    std::iota(index.begin(), index.end(), start);
    Eigen::MatrixXd xi(stop - start, dim);
    for (int i = start; i < stop; ++i) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
      xi.row(i - start) = rng.normal_vector(dim).transpose();
    }
    BatchTerms t = batch_terms(m, data, index, xi, 0.0);
    s.covariate_evidence += t.alpha.sum();
    s.log_likelihood += t.log_likelihood.sum();
    s.kl += t.kl.sum();
    s.recon_ved += t.ved_sum;
  }
  const double n = data.size();
  s.covariate_evidence /= n;
  s.log_likelihood /= n;
  s.kl /= n;
  s.recon_ved /= n;
  s.elbo = s.covariate_evidence + s.log_likelihood - s.kl;
  return s;
}

Trainer::Trainer(CausalShapeModel& model, const TrainConfig& config) : model_(model), config_(config) {
  if (config_.batch_size < 1) fail(ErrorCode::kConfig, "batch_size must be >= 1");
  if (config_.epochs < 0) fail(ErrorCode::kConfig, "epochs must be >= 0");
  if (!(config_.lr_covariate > 0.0) || !(config_.lr_mesh > 0.0)) fail(ErrorCode::kConfig, "learning rates must be positive");
  model_.collect(params_);
  adam_ = nn::Adam(params_, config_.lr_covariate, config_.lr_mesh);
}

EpochLog Trainer::run_epoch(const Dataset& train) {
  if (train.size() == 0) fail(ErrorCode::kInvalidArgument, "empty training set");
  const auto start = std::chrono::steady_clock::now();
  const int epoch = epoch_ + 1;
  const std::uint64_t epoch_seed = derive_seed(config_.seed, static_cast<std::uint64_t>(epoch));
  Rng rng(epoch_seed);
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<Eigen::MatrixXd> snapshot;
  for (auto* p : params_) snapshot.push_back(p->value);
  const nn::Adam::State adam_snapshot = adam_.state();

  EpochLog log;
  log.epoch = epoch;
  const int dim = model_.mesh_model().latent_dim();
  try {
    for (int s = 0; s < train.size(); s += config_.batch_size) {
      std::vector<int> index(order.begin() + s, order.begin() + std::min(train.size(), s + config_.batch_size));
      const double weight = 1.0 / static_cast<double>(index.size());
      Eigen::MatrixXd xi(static_cast<Eigen::Index>(index.size()), dim);
      for (Eigen::Index i = 0; i < xi.rows(); ++i) xi.row(i) = rng.normal_vector(dim).transpose();
      nn::zero_grad(params_);
      BatchTerms t = batch_terms(model_, train, index, xi, weight);
      check_finite(t, epoch);
      adam_.step();
      log.covariate_evidence += t.alpha.sum();
      log.log_likelihood += t.log_likelihood.sum();
      log.kl += t.kl.sum();
      log.recon_ved += t.ved_sum;
    }
  } catch (const Error&) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = snapshot[i];
    adam_.restore(adam_snapshot);
    throw;
  }
  const double n = train.size();
  log.covariate_evidence /= n;
  log.log_likelihood /= n;
  log.kl /= n;
  log.recon_ved /= n;
  log.elbo = log.covariate_evidence + log.log_likelihood - log.kl;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  epoch_ = epoch;
  return log;
}

std::vector<EpochLog> Trainer::fit(const Dataset& train, const std::function<void(const EpochLog&)>& on_epoch) {
  std::vector<EpochLog> logs;
  while (epoch_ < config_.epochs) {
    logs.push_back(run_epoch(train));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

}  // namespace csm
