#pragma once

#include <span>
#include <string>
#include <variant>

#include <Eigen/Core>

#include "csm/nn.hpp"
#include "csm/rng.hpp"

namespace csm {

/// Frozen whitening in log-space: y = location + scale * x.
struct AffineNormalisation {
  double location = 0.0;
  double scale = 1.0;

  double forward(double x) const { return location + scale * x; }
  double inverse(double y) const { return (y - location) / scale; }
};

/// Mean and (population) standard deviation of log(samples).
AffineNormalisation fit_normalisation(std::span<const double> positive_samples);

/// Monotone linear rational spline on [-bound, bound] with identity tails.
///
/// Parameters (4K - 1 raw values): K bin widths and K heights through a
/// softmax, K - 1 interior knot derivatives through exp, K split points
/// through a sigmoid. Derivatives at +-bound are fixed to 1 so the map is
/// C1 across the tails. Zero raw parameters give the identity.
class LinearSplineTransform {
 public:
  explicit LinearSplineTransform(int bins = 8, double bound = 3.0, const std::string& name = "spline");

  double forward(double x, double* log_det = nullptr) const;
  /// Inverse map; `log_det` receives log|d forward/dx| at the returned point.
  double inverse(double y, double* log_det = nullptr) const;

  /// log density of y when x ~ N(0, 1) is pushed through the spline, plus
  /// its gradient with respect to the raw parameters when `grad` is set.
  double log_density(double y, Eigen::VectorXd* grad = nullptr) const;

  int bins() const { return bins_; }
  double bound() const { return bound_; }
  nn::Param& raw() { return raw_; }
  const nn::Param& raw() const { return raw_; }

 private:
  int bins_;
  double bound_;
  nn::Param raw_;
};

/// x-hat = loc(context) + exp(log_scale(context)) * eps, where loc and
/// log_scale are separate MLPs (context -> 8 -> 16 -> 1, LeakyReLU(0.1)).
/// The log-scale is clamped to [-7, 7].
class ConditionalAffineTransform {
 public:
  static constexpr double kLogScaleMin = -7.0;
  static constexpr double kLogScaleMax = 7.0;

  ConditionalAffineTransform(int context_dim, const std::string& name, Rng& rng);

  struct LocScale {
    double loc;
    double log_scale;
  };
  LocScale evaluate(std::span<const double> context) const;

  double forward(double eps, std::span<const double> context, double* log_det = nullptr) const;
  double inverse(double y, std::span<const double> context, double* log_det = nullptr) const;

  /// Batched log density of y (standard normal base). When `nll_weight` is
  /// non-zero, accumulates d(-nll_weight * sum log p)/dparams.
  Eigen::VectorXd log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& contexts,
                              double nll_weight = 0.0);

  int context_dim() const { return context_dim_; }
  void collect(nn::ParamList& out);

 private:
  int context_dim_;
  nn::Dense loc_[3];
  nn::Dense scale_[3];
};

/// Invertible-explicit mechanism x = (exp . AffineNormalisation . inner)(eps).
/// The value below the exp . normalisation head is the intermediate
/// (a-hat, b-hat, v-hat) used for conditioning downstream.
class CovariateMechanism {
 public:
  static CovariateMechanism unconditional(const std::string& name);
  static CovariateMechanism conditional(const std::string& name, int context_dim, Rng& rng);

  struct Forward {
    double value;
    double intermediate;
  };
  struct Inverse {
    double eps;
    double intermediate;
  };

  Forward forward(double eps, std::span<const double> context = {}) const;
  Inverse inverse(double value, std::span<const double> context = {}) const;
  double log_prob(double value, std::span<const double> context = {}) const;
  /// log |d value / d eps|.
  double log_abs_det_jacobian(double eps, std::span<const double> context = {}) const;

  /// Intermediate of an externally fixed value: normalisation^{-1}(log value).
  double intermediate_of(double value) const;
  double value_of(double intermediate) const;

  /// Batched log-probability; accumulates d(-nll_weight * sum)/dparams.
  Eigen::VectorXd log_prob_batch(const Eigen::VectorXd& values, const Eigen::MatrixXd& contexts,
                                 double nll_weight = 0.0);

  void fit_normalisation(std::span<const double> samples) { norm_ = csm::fit_normalisation(samples); }
  const AffineNormalisation& normalisation() const { return norm_; }
  void set_normalisation(const AffineNormalisation& n) { norm_ = n; }

  const std::string& name() const { return name_; }
  int context_dim() const;
  bool is_conditional() const { return std::holds_alternative<ConditionalAffineTransform>(inner_); }
  void collect(nn::ParamList& out);

  const LinearSplineTransform* spline() const { return std::get_if<LinearSplineTransform>(&inner_); }

 private:
  CovariateMechanism(std::string name, std::variant<LinearSplineTransform, ConditionalAffineTransform> inner)
      : name_(std::move(name)), inner_(std::move(inner)) {}

  double inner_forward(double eps, std::span<const double> ctx, double* log_det) const;
  double inner_inverse(double y, std::span<const double> ctx, double* log_det) const;
  void check_context(std::span<const double> ctx) const;

  std::string name_;
  AffineNormalisation norm_;
  std::variant<LinearSplineTransform, ConditionalAffineTransform> inner_;
};

/// Discrete root s := eps_S with eps_S ~ Bernoulli(theta).
class BernoulliMechanism {
 public:
  explicit BernoulliMechanism(double theta = 0.5) : theta_(theta) {}

  double forward(double eps) const { return eps; }
  double sample(Rng& rng) const { return rng.bernoulli(theta_) ? 1.0 : 0.0; }
  /// Only defined for s in {0, 1}.
  double log_prob(double s) const;
  /// Closed-form maximum likelihood (the sample mean).
  void fit(std::span<const double> samples);

  double theta() const { return theta_; }
  void set_theta(double t) { theta_ = t; }

 private:
  double theta_;
};

}  // namespace csm
