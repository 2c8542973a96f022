#include "csm/flows.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <unsupported/Eigen/AutoDiff>

#include "csm/error.hpp"

namespace csm {
namespace {

constexpr double kMinBinFraction = 1e-3;
constexpr double kMinDerivative = 1e-3;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

using std::exp;
using std::log;
using std::sqrt;

template <class T>
struct Knots {
  std::vector<T> x, y, d, lambda;
};

template <class T>
std::vector<T> softmax_segment(const Eigen::Matrix<T, Eigen::Dynamic, 1>& raw, int offset, int k) {
  T mx = raw[offset];
  for (int i = 1; i < k; ++i)
    if (raw[offset + i] > mx) mx = raw[offset + i];
  std::vector<T> out(k);
  T total = T(0.0);
  for (int i = 0; i < k; ++i) {
    out[i] = exp(raw[offset + i] - mx);
    total += out[i];
  }
  for (int i = 0; i < k; ++i) out[i] = kMinBinFraction + (1.0 - kMinBinFraction * k) * out[i] / total;
  return out;
}

template <class T>
Knots<T> make_knots(const Eigen::Matrix<T, Eigen::Dynamic, 1>& raw, int k, double bound) {
  Knots<T> kn;
  auto w = softmax_segment(raw, 0, k);
  auto h = softmax_segment(raw, k, k);
  kn.x.resize(k + 1);
  kn.y.resize(k + 1);
  kn.x[0] = T(-bound);
  kn.y[0] = T(-bound);
  for (int i = 0; i < k; ++i) {
    kn.x[i + 1] = kn.x[i] + 2.0 * bound * w[i];
    kn.y[i + 1] = kn.y[i] + 2.0 * bound * h[i];
  }
  kn.x[k] = T(bound);
  kn.y[k] = T(bound);
  kn.d.resize(k + 1);
  kn.d[0] = T(1.0);
  kn.d[k] = T(1.0);
  for (int i = 1; i < k; ++i) kn.d[i] = kMinDerivative + (1.0 - kMinDerivative) * exp(raw[2 * k + i - 1]);
  kn.lambda.resize(k);
  for (int i = 0; i < k; ++i) kn.lambda[i] = 0.025 + 0.95 / (1.0 + exp(-raw[3 * k - 1 + i]));
  return kn;
}

template <class T>
struct Bin {
  T x0, w, ya, yb, yc, wb, wc, lambda;
};

template <class T>
Bin<T> make_bin(const Knots<T>& kn, int i) {
  Bin<T> b;
  b.x0 = kn.x[i];
  b.w = kn.x[i + 1] - kn.x[i];
  b.ya = kn.y[i];
  b.yb = kn.y[i + 1];
  T s = (b.yb - b.ya) / b.w;
  b.lambda = kn.lambda[i];
  b.wb = sqrt(kn.d[i] / kn.d[i + 1]);
  b.wc = (b.lambda * kn.d[i] + (1.0 - b.lambda) * b.wb * kn.d[i + 1]) / s;
  b.yc = ((1.0 - b.lambda) * b.ya + b.lambda * b.wb * b.yb) / ((1.0 - b.lambda) + b.lambda * b.wb);
  return b;
}

// y and log dy/dx at bin-relative position theta.
template <class T>
void bin_eval(const Bin<T>& b, const T& theta, T& y, T& log_det) {
  if (theta <= b.lambda) {
    T den = (b.lambda - theta) + b.wc * theta;
    y = (b.ya * (b.lambda - theta) + b.wc * b.yc * theta) / den;
    log_det = log(b.wc * b.lambda * (b.yc - b.ya) / b.w) - 2.0 * log(den);
  } else {
    T den = b.wc * (1.0 - theta) + b.wb * (theta - b.lambda);
    y = (b.wc * b.yc * (1.0 - theta) + b.wb * b.yb * (theta - b.lambda)) / den;
    log_det = log(b.wb * b.wc * (1.0 - b.lambda) * (b.yb - b.yc) / b.w) - 2.0 * log(den);
  }
}

template <class T>
int find_bin(const std::vector<T>& knots, const T& v) {
  int k = static_cast<int>(knots.size()) - 1;
  int i = 0;
  while (i < k - 1 && !(v < knots[i + 1])) ++i;
  return i;
}

template <class T>
T spline_forward(const Knots<T>& kn, double bound, const T& x, T& log_det) {
  if (!(x > -bound && x < bound)) {
    log_det = T(0.0);
    return x;
  }
  int i = find_bin(kn.x, x);
  Bin<T> b = make_bin(kn, i);
  T theta = (x - b.x0) / b.w;
  T y;
  bin_eval(b, theta, y, log_det);
  return y;
}

template <class T>
T spline_inverse(const Knots<T>& kn, double bound, const T& y, T& log_det) {
  if (!(y > -bound && y < bound)) {
    log_det = T(0.0);
    return y;
  }
  int i = find_bin(kn.y, y);
  Bin<T> b = make_bin(kn, i);
  T theta;
  if (y <= b.yc) {
    theta = b.lambda * (b.ya - y) / ((b.wc - 1.0) * y + b.ya - b.wc * b.yc);
  } else {
    theta = (b.wc * (b.yc - y) - b.lambda * b.wb * (b.yb - y)) / (b.wc * (b.yc - y) - b.wb * (b.yb - y));
  }
  if (theta < 0.0) theta = T(0.0);
  if (theta > 1.0) theta = T(1.0);
  T y_check;
  bin_eval(b, theta, y_check, log_det);
  return b.x0 + theta * b.w;
}

}  // namespace

AffineNormalisation fit_normalisation(std::span<const double> samples) {
  if (samples.empty()) fail(ErrorCode::kInvalidArgument, "cannot fit normalisation on an empty sample");
  double sum = 0.0;
  for (double s : samples) {
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::kDomain, "normalisation samples must be positive and finite");
    sum += std::log(s);
  }
  double mean = sum / static_cast<double>(samples.size());
  double ss = 0.0;
  for (double s : samples) ss += (std::log(s) - mean) * (std::log(s) - mean);
  double sd = std::sqrt(ss / static_cast<double>(samples.size()));
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (*lo == *hi || !(sd > 0.0)) fail(ErrorCode::kZeroVariance, "normalisation samples have zero variance");
  return AffineNormalisation{mean, sd};
}

LinearSplineTransform::LinearSplineTransform(int bins, double bound, const std::string& name)
    : bins_(bins), bound_(bound) {
  if (bins < 1 || !(bound > 0.0)) fail(ErrorCode::kInvalidArgument, "spline needs bins >= 1 and bound > 0");
  raw_ = nn::Param(name, Eigen::MatrixXd::Zero(4 * bins - 1, 1), nn::ParamGroup::kCovariate);
}

double LinearSplineTransform::forward(double x, double* log_det) const {
  Eigen::VectorXd raw = raw_.value.col(0);
  auto kn = make_knots<double>(raw, bins_, bound_);
  double ld = 0.0;
  double y = spline_forward(kn, bound_, x, ld);
  if (log_det) *log_det = ld;
  return y;
}

double LinearSplineTransform::inverse(double y, double* log_det) const {
  Eigen::VectorXd raw = raw_.value.col(0);
  auto kn = make_knots<double>(raw, bins_, bound_);
  double ld = 0.0;
  double x = spline_inverse(kn, bound_, y, ld);
  if (log_det) *log_det = ld;
  return x;
}

double LinearSplineTransform::log_density(double y, Eigen::VectorXd* grad) const {
  if (!grad) {
    double ld = 0.0;
    double x = inverse(y, &ld);
    return -0.5 * x * x - kHalfLog2Pi - ld;
  }
  using AD = Eigen::AutoDiffScalar<Eigen::VectorXd>;
  const int n = static_cast<int>(raw_.value.rows());
  Eigen::Matrix<AD, Eigen::Dynamic, 1> raw(n);
  for (int i = 0; i < n; ++i) raw[i] = AD(raw_.value(i, 0), n, i);
  auto kn = make_knots<AD>(raw, bins_, bound_);
  AD ld;
  AD yy(y, Eigen::VectorXd::Zero(n));
  AD x = spline_inverse(kn, bound_, yy, ld);
  AD out = -0.5 * x * x - kHalfLog2Pi - ld;
  *grad = out.derivatives().size() == n ? out.derivatives() : Eigen::VectorXd::Zero(n);
  return out.value();
}

ConditionalAffineTransform::ConditionalAffineTransform(int context_dim, const std::string& name, Rng& rng)
    : context_dim_(context_dim) {
  if (context_dim < 1) fail(ErrorCode::kInvalidArgument, "conditional transform needs a context");
  const int widths[4] = {context_dim, 8, 16, 1};
  for (int i = 0; i < 3; ++i) {
    loc_[i] = nn::Dense(widths[i], widths[i + 1], name + ".loc" + std::to_string(i), nn::ParamGroup::kCovariate, rng);
    scale_[i] = nn::Dense(widths[i], widths[i + 1], name + ".scale" + std::to_string(i), nn::ParamGroup::kCovariate, rng);
  }
}

namespace {

constexpr double kLeak = 0.1;

struct MlpTrace {
  Eigen::MatrixXd in[3];
  Eigen::MatrixXd pre[2];
};

Eigen::MatrixXd mlp_forward(const nn::Dense (&layers)[3], const Eigen::MatrixXd& x, MlpTrace* tr) {
  Eigen::MatrixXd h = x;
  for (int i = 0; i < 3; ++i) {
    if (tr) tr->in[i] = h;
    Eigen::MatrixXd z = layers[i].forward(h);
    if (i < 2) {
      if (tr) tr->pre[i] = z;
      h = nn::leaky_relu(z, kLeak);
    } else {
      h = z;
    }
  }
  return h;
}

void mlp_backward(nn::Dense (&layers)[3], const MlpTrace& tr, Eigen::MatrixXd g) {
  for (int i = 2; i >= 0; --i) {
    g = layers[i].backward(tr.in[i], g);
    if (i > 0) g = nn::leaky_relu_backward(tr.pre[i - 1], g, kLeak);
  }
}

}  // namespace

ConditionalAffineTransform::LocScale ConditionalAffineTransform::evaluate(std::span<const double> context) const {
  if (static_cast<int>(context.size()) != context_dim_)
    fail(ErrorCode::kDimensionMismatch, "context has wrong dimension");
  Eigen::MatrixXd c(1, context_dim_);
  for (int i = 0; i < context_dim_; ++i) c(0, i) = context[i];
  double loc = mlp_forward(loc_, c, nullptr)(0, 0);
  double ls = std::clamp(mlp_forward(scale_, c, nullptr)(0, 0), kLogScaleMin, kLogScaleMax);
  return {loc, ls};
}

double ConditionalAffineTransform::forward(double eps, std::span<const double> context, double* log_det) const {
  auto p = evaluate(context);
  if (log_det) *log_det = p.log_scale;
  return p.loc + std::exp(p.log_scale) * eps;
}

double ConditionalAffineTransform::inverse(double y, std::span<const double> context, double* log_det) const {
  auto p = evaluate(context);
  if (log_det) *log_det = p.log_scale;
  return (y - p.loc) * std::exp(-p.log_scale);
}

Eigen::VectorXd ConditionalAffineTransform::log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& contexts,
                                                        double nll_weight) {
  if (contexts.cols() != context_dim_ || contexts.rows() != y.size())
    fail(ErrorCode::kDimensionMismatch, "context batch has wrong shape");
  MlpTrace tl, ts;
  Eigen::VectorXd loc = mlp_forward(loc_, contexts, nll_weight != 0.0 ? &tl : nullptr).col(0);
  Eigen::VectorXd ls_raw = mlp_forward(scale_, contexts, nll_weight != 0.0 ? &ts : nullptr).col(0);
  const Eigen::Index n = y.size();
  Eigen::VectorXd out(n);
  Eigen::MatrixXd g_loc(n, 1), g_ls(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    double ls = std::clamp(ls_raw[i], kLogScaleMin, kLogScaleMax);
    double eps = (y[i] - loc[i]) * std::exp(-ls);
    out[i] = -0.5 * eps * eps - kHalfLog2Pi - ls;
    g_loc(i, 0) = -nll_weight * eps * std::exp(-ls);
    bool clamped = ls_raw[i] < kLogScaleMin || ls_raw[i] > kLogScaleMax;
    g_ls(i, 0) = clamped ? 0.0 : -nll_weight * (eps * eps - 1.0);
  }
  if (nll_weight != 0.0) {
    mlp_backward(loc_, tl, g_loc);
    mlp_backward(scale_, ts, g_ls);
  }
  return out;
}

void ConditionalAffineTransform::collect(nn::ParamList& out) {
  for (auto& l : loc_) l.collect(out);
  for (auto& l : scale_) l.collect(out);
}

CovariateMechanism CovariateMechanism::unconditional(const std::string& name) {
  return CovariateMechanism(name, LinearSplineTransform(8, 3.0, name + ".spline"));
}

CovariateMechanism CovariateMechanism::conditional(const std::string& name, int context_dim, Rng& rng) {
  return CovariateMechanism(name, ConditionalAffineTransform(context_dim, name + ".affine", rng));
}

int CovariateMechanism::context_dim() const {
  if (auto* c = std::get_if<ConditionalAffineTransform>(&inner_)) return c->context_dim();
  return 0;
}

void CovariateMechanism::check_context(std::span<const double> ctx) const {
  if (static_cast<int>(ctx.size()) != context_dim())
    fail(ErrorCode::kDimensionMismatch, "mechanism '" + name_ + "' expects " + std::to_string(context_dim()) +
                                            " context values, got " + std::to_string(ctx.size()));
}

double CovariateMechanism::inner_forward(double eps, std::span<const double> ctx, double* log_det) const {
  if (auto* s = std::get_if<LinearSplineTransform>(&inner_)) return s->forward(eps, log_det);
  return std::get<ConditionalAffineTransform>(inner_).forward(eps, ctx, log_det);
}

double CovariateMechanism::inner_inverse(double y, std::span<const double> ctx, double* log_det) const {
  if (auto* s = std::get_if<LinearSplineTransform>(&inner_)) return s->inverse(y, log_det);
  return std::get<ConditionalAffineTransform>(inner_).inverse(y, ctx, log_det);
}

CovariateMechanism::Forward CovariateMechanism::forward(double eps, std::span<const double> context) const {
  check_context(context);
  double hat = inner_forward(eps, context, nullptr);
  double value = value_of(hat);
  if (!std::isfinite(value) || !std::isfinite(hat))
    fail(ErrorCode::kNonFinite, "mechanism '" + name_ + "' produced a non-finite value");
  return {value, hat};
}

CovariateMechanism::Inverse CovariateMechanism::inverse(double value, std::span<const double> context) const {
  check_context(context);
  double hat = intermediate_of(value);
  double eps = inner_inverse(hat, context, nullptr);
  if (!std::isfinite(eps)) fail(ErrorCode::kNonFinite, "mechanism '" + name_ + "' abducted a non-finite noise");
  return {eps, hat};
}

double CovariateMechanism::intermediate_of(double value) const {
  if (!(value > 0.0) || !std::isfinite(value))
    fail(ErrorCode::kDomain, "mechanism '" + name_ + "' requires a positive finite value, got " + std::to_string(value));
  return norm_.inverse(std::log(value));
}

double CovariateMechanism::value_of(double intermediate) const { return std::exp(norm_.forward(intermediate)); }

double CovariateMechanism::log_prob(double value, std::span<const double> context) const {
  check_context(context);
  double hat = intermediate_of(value);
  double ld = 0.0;
  double eps = inner_inverse(hat, context, &ld);
  return -0.5 * eps * eps - kHalfLog2Pi - ld - std::log(norm_.scale) - std::log(value);
}

double CovariateMechanism::log_abs_det_jacobian(double eps, std::span<const double> context) const {
  check_context(context);
  double ld = 0.0;
  double hat = inner_forward(eps, context, &ld);
  return norm_.forward(hat) + std::log(norm_.scale) + ld;
}

Eigen::VectorXd CovariateMechanism::log_prob_batch(const Eigen::VectorXd& values, const Eigen::MatrixXd& contexts,
                                                   double nll_weight) {
  const Eigen::Index n = values.size();
  Eigen::VectorXd hats(n), jac(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hats[i] = intermediate_of(values[i]);
    jac[i] = -std::log(norm_.scale) - std::log(values[i]);
  }
  if (auto* s = std::get_if<LinearSplineTransform>(&inner_)) {
    Eigen::VectorXd out(n);
    Eigen::VectorXd g;
    Eigen::VectorXd total = Eigen::VectorXd::Zero(s->raw().value.rows());
    for (Eigen::Index i = 0; i < n; ++i) {
      out[i] = s->log_density(hats[i], nll_weight != 0.0 ? &g : nullptr) + jac[i];
      if (nll_weight != 0.0) total += g;
    }
    if (nll_weight != 0.0) s->raw().grad.col(0) -= nll_weight * total;
    return out;
  }
  auto& c = std::get<ConditionalAffineTransform>(inner_);
  return c.log_density(hats, contexts, nll_weight) + jac;
}

void CovariateMechanism::collect(nn::ParamList& out) {
  if (auto* s = std::get_if<LinearSplineTransform>(&inner_)) {
    out.push_back(&s->raw());
    return;
  }
  std::get<ConditionalAffineTransform>(inner_).collect(out);
}

double BernoulliMechanism::log_prob(double s) const {
  if (s == 1.0) return std::log(theta_);
  if (s == 0.0) return std::log1p(-theta_);
  fail(ErrorCode::kDomain, "binary node takes values in {0, 1}, got " + std::to_string(s));
}

void BernoulliMechanism::fit(std::span<const double> samples) {
  if (samples.empty()) fail(ErrorCode::kInvalidArgument, "cannot fit a Bernoulli on an empty sample");
  double sum = 0.0;
  for (double s : samples) {
    if (s != 0.0 && s != 1.0) fail(ErrorCode::kDomain, "binary node takes values in {0, 1}");
    sum += s;
  }
  theta_ = sum / static_cast<double>(samples.size());
}

}  // namespace csm
