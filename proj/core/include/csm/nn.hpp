#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "csm/mesh.hpp"
#include "csm/rng.hpp"

namespace csm::nn {

/// Optimiser parameter groups (separate learning rates).
enum class ParamGroup : int { kCovariate = 0, kMesh = 1 };

struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  ParamGroup group = ParamGroup::kMesh;

  Param() = default;
  Param(std::string n, Eigen::MatrixXd v, ParamGroup g)
      : name(std::move(n)), value(std::move(v)), grad(Eigen::MatrixXd::Zero(value.rows(), value.cols())), group(g) {}
};

using ParamList = std::vector<Param*>;

/// Fully connected layer, y = x W + b, with x laid out one sample per row.
class Dense {
 public:
  Dense() = default;
  Dense(int in, int out, const std::string& name, ParamGroup group, Rng& rng);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad_y);

  int in_features() const { return static_cast<int>(weight_.value.rows()); }
  int out_features() const { return static_cast<int>(weight_.value.cols()); }
  void collect(ParamList& out) { out.push_back(&weight_); out.push_back(&bias_); }

 private:
  Param weight_;
  Param bias_;
};

/// Chebyshev graph convolution on a fixed graph, operating on sample-major
/// batches of (B|V|) x F_in features.
class ChebConv {
 public:
  ChebConv() = default;
  ChebConv(std::shared_ptr<const SparseMatrix> scaled_laplacian, int in, int out, int order,
           const std::string& name, ParamGroup group, Rng& rng);

  struct Trace {
    Eigen::MatrixXd basis;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Trace* trace = nullptr) const;
  /// Accumulates parameter gradients; returns dL/dx when `need_input_grad`.
  Eigen::MatrixXd backward(const Trace& trace, const Eigen::MatrixXd& grad_y, bool need_input_grad = true);

  int order() const { return order_; }
  int out_features() const { return static_cast<int>(weight_.value.cols()); }
  void collect(ParamList& out) { out.push_back(&weight_); out.push_back(&bias_); }

 private:
  std::shared_ptr<const SparseMatrix> laplacian_;
  int order_ = 1;
  Param weight_;  // (K F_in) x F_out, k-major blocks
  Param bias_;
};

Eigen::MatrixXd elu(const Eigen::MatrixXd& x);
/// Gradient through ELU given its output.
Eigen::MatrixXd elu_backward(const Eigen::MatrixXd& y, const Eigen::MatrixXd& grad_y);

Eigen::MatrixXd leaky_relu(const Eigen::MatrixXd& x, double slope);
Eigen::MatrixXd leaky_relu_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad_y, double slope);

double softplus(double x);
double sigmoid(double x);

void zero_grad(const ParamList& params);

/// Adam with one learning rate per parameter group.
class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, double lr_covariate, double lr_mesh, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  /// Ascent/descent direction is the caller's: this minimises.
  void step();
  long steps() const { return t_; }

  struct State {
    long t = 0;
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
  };
  State state() const { return State{t_, m_, v_}; }
  void restore(const State& s);

 private:
  ParamList params_;
  double lr_[2] = {1e-3, 1e-4};
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
};

}  // namespace csm::nn
