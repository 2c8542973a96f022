#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "csm/cohort.hpp"
#include "csm/nn.hpp"
#include "csm/scm.hpp"

namespace csm {

enum class AlignMode { kNone, kRigid, kSimilarity };
AlignMode parse_align_mode(const std::string& name);
std::string align_mode_name(AlignMode mode);

/// Subjects with meshes flattened one per row (N x 3|V|).
struct Dataset {
  std::vector<std::uint64_t> ids;
  std::vector<CovariateRecord> records;
  Eigen::MatrixXd meshes;

  int size() const { return static_cast<int>(records.size()); }
  SurfaceMesh mesh(int i, const TopologyPtr& topology) const;
};

/// Reads one split of a manifest, checks topology against `templ` and
/// registers every mesh onto it.
Dataset load_split(const CohortManifest& manifest, const std::string& split, const SurfaceMesh& templ,
                   AlignMode align = AlignMode::kRigid);

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 256;
  double lr_covariate = 1e-3;
  double lr_mesh = 1e-4;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double elbo = 0.0;            // per subject
  double covariate_evidence = 0.0;
  double log_likelihood = 0.0;
  double kl = 0.0;
  double recon_ved = 0.0;       // VED between the decoded location and the input
  double seconds = 0.0;
};

/// ELBO summary over a dataset with per-subject particle noise fixed by a seed.
struct ElboSummary {
  double elbo = 0.0;
  double covariate_evidence = 0.0;
  double log_likelihood = 0.0;
  double kl = 0.0;
  double recon_ved = 0.0;
};

/// Frozen normalisation statistics and the closed-form sex MLE from the
/// training split; also sets the CVAE shape normalisation.
void fit_statistics(CausalShapeModel& model, const Dataset& train);

ElboSummary evaluate_elbo(const CausalShapeModel& model, const Dataset& data, std::uint64_t seed,
                          int batch_size = 256);

/// Joint stochastic maximisation of the ELBO over all mechanisms.
class Trainer {
 public:
  Trainer(CausalShapeModel& model, const TrainConfig& config);

  /// One pass over `train` in shuffled mini-batches. On a non-finite loss
  /// the parameters are rolled back to the start of the epoch and a
  /// kDivergence error naming the offending term is thrown.
  EpochLog run_epoch(const Dataset& train);

  /// Runs until `config.epochs` epochs have completed in total.
  std::vector<EpochLog> fit(const Dataset& train, const std::function<void(const EpochLog&)>& on_epoch = {});

  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }
  nn::Adam& optimizer() { return adam_; }
  const nn::Adam& optimizer() const { return adam_; }
  const TrainConfig& config() const { return config_; }

 private:
  CausalShapeModel& model_;
  TrainConfig config_;
  nn::ParamList params_;
  nn::Adam adam_;
  int epoch_ = 0;
};

}  // namespace csm
