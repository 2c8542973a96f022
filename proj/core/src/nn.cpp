#include "csm/nn.hpp"

#include <cmath>

#include "csm/error.hpp"
#include "csm/spectral.hpp"

namespace csm::nn {
namespace {

Eigen::MatrixXd uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  }
  return m;
}

}  // namespace

Dense::Dense(int in, int out, const std::string& name, ParamGroup group, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Param(name + ".weight", uniform_init(in, out, bound, rng), group);
  bias_ = Param(name + ".bias", uniform_init(1, out, bound, rng), group);
}

Eigen::MatrixXd Dense::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != weight_.value.rows()) {
    fail(ErrorCode::kDimensionMismatch, weight_.name + ": input width " + std::to_string(x.cols()) +
                                            " != " + std::to_string(weight_.value.rows()));
  }
  Eigen::MatrixXd y = x * weight_.value;
  y.rowwise() += bias_.value.row(0);
  return y;
}

Eigen::MatrixXd Dense::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad_y) {
  weight_.grad.noalias() += x.transpose() * grad_y;
  bias_.grad += grad_y.colwise().sum();
  return grad_y * weight_.value.transpose();
}

ChebConv::ChebConv(std::shared_ptr<const SparseMatrix> scaled_laplacian, int in, int out, int order,
                   const std::string& name, ParamGroup group, Rng& rng)
    : laplacian_(std::move(scaled_laplacian)), order_(order) {
  if (order < 1) fail(ErrorCode::kInvalidArgument, "Chebyshev order must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * order));
  weight_ = Param(name + ".weight", uniform_init(static_cast<Eigen::Index>(in) * order, out, bound, rng), group);
  bias_ = Param(name + ".bias", uniform_init(1, out, bound, rng), group);
}

Eigen::MatrixXd ChebConv::forward(const Eigen::MatrixXd& x, Trace* trace) const {
  if (x.cols() * order_ != weight_.value.rows()) {
    fail(ErrorCode::kDimensionMismatch, weight_.name + ": feature width mismatch");
  }
  Eigen::MatrixXd basis = chebyshev_basis(*laplacian_, x, order_);
  Eigen::MatrixXd y = basis * weight_.value;
  y.rowwise() += bias_.value.row(0);
  if (trace) trace->basis = std::move(basis);
  return y;
}

Eigen::MatrixXd ChebConv::backward(const Trace& trace, const Eigen::MatrixXd& grad_y, bool need_input_grad) {
  weight_.grad.noalias() += trace.basis.transpose() * grad_y;
  bias_.grad += grad_y.colwise().sum();
  if (!need_input_grad) return {};
  const Eigen::MatrixXd grad_basis = grad_y * weight_.value.transpose();
  return chebyshev_basis_adjoint(*laplacian_, grad_basis, order_);
}

Eigen::MatrixXd elu(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}

Eigen::MatrixXd elu_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& grad_y) {
  return grad_y.binaryExpr(y, [](double g, double out) { return out > 0.0 ? g : g * (out + 1.0); });
}

Eigen::MatrixXd leaky_relu(const Eigen::MatrixXd& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Eigen::MatrixXd leaky_relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad_y, double slope) {
  return grad_y.binaryExpr(x, [slope](double g, double in) { return in > 0.0 ? g : slope * g; });
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void zero_grad(const ParamList& params) {
  for (Param* p : params) p->grad.setZero();
}

Adam::Adam(ParamList params, double lr_covariate, double lr_mesh, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  lr_[0] = lr_covariate;
  lr_[1] = lr_mesh;
  for (const Param* p : params_) {
    m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    const double lr = lr_[static_cast<int>(p.group)];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void Adam::restore(const State& s) {
  if (s.m.size() != params_.size() || s.v.size() != params_.size()) {
    fail(ErrorCode::kDimensionMismatch, "optimiser state does not match parameter list");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (s.m[i].rows() != params_[i]->value.rows() || s.m[i].cols() != params_[i]->value.cols()) {
      fail(ErrorCode::kDimensionMismatch, "optimiser state shape mismatch for " + params_[i]->name);
    }
  }
  t_ = s.t;
  m_ = s.m;
  v_ = s.v;
}

}  // namespace csm::nn
