#include "csm/spectral.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "csm/error.hpp"

namespace csm {
namespace {

Eigen::MatrixXd stack_coefficients(const ChebCoefficients& theta) {
  const Eigen::Index f_in = theta.front().rows();
  const Eigen::Index f_out = theta.front().cols();
  Eigen::MatrixXd stacked(theta.size() * f_in, f_out);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (theta[k].rows() != f_in || theta[k].cols() != f_out) {
      fail(ErrorCode::kDimensionMismatch, "Chebyshev coefficient blocks differ in shape");
    }
    stacked.middleRows(k * f_in, f_in) = theta[k];
  }
  return stacked;
}

void check_filter_inputs(const MeshTopology& topology, const Eigen::MatrixXd& x,
                         const ChebCoefficients& theta) {
  if (theta.empty()) fail(ErrorCode::kInvalidArgument, "Chebyshev order K must be >= 1");
  if (x.rows() != topology.vertex_count()) {
    fail(ErrorCode::kDimensionMismatch, "signal has " + std::to_string(x.rows()) +
                                            " rows, graph has " +
                                            std::to_string(topology.vertex_count()) + " vertices");
  }
  if (theta.front().rows() != x.cols()) {
    fail(ErrorCode::kDimensionMismatch, "coefficient input width " +
                                            std::to_string(theta.front().rows()) +
                                            " != feature count " + std::to_string(x.cols()));
  }
}

}  // namespace

double largest_eigenvalue(const SparseMatrix& a, double rel_tol) {
  const Eigen::Index n = a.rows();
  if (n == 0) return 0.0;

  // Fixed, irregular start vector so that no symmetric eigenvector is missed
  // on regular graphs (where the all-ones vector is itself an eigenvector).
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) q[i] = 1.0 + 0.5 * std::sin(1.0 + 1.618033988749895 * i);
  q.normalize();

  Eigen::MatrixXd basis(n, std::min<Eigen::Index>(n, 16));
  std::vector<double> alpha;
  std::vector<double> beta;
  double ritz = 0.0;
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(n);
  double prev_beta = 0.0;

  for (Eigen::Index j = 0; j < n; ++j) {
    if (j >= basis.cols()) basis.conservativeResize(n, std::min<Eigen::Index>(n, 2 * basis.cols()));
    basis.col(j) = q;
    Eigen::VectorXd w = a * q - prev_beta * prev;
    const double aj = q.dot(w);
    w -= aj * q;
    for (int pass = 0; pass < 2; ++pass) {
      const auto active = basis.leftCols(j + 1);
      w -= active * (active.transpose() * w);
    }
    alpha.push_back(aj);
    const double bj = w.norm();

    const Eigen::Index m = j + 1;
    Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), m);
    Eigen::VectorXd sub = Eigen::VectorXd::Zero(std::max<Eigen::Index>(m - 1, 0));
    for (Eigen::Index i = 0; i + 1 < m; ++i) sub[i] = beta[i];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    ritz = tri.eigenvalues()[m - 1];
    const double residual = bj * std::abs(tri.eigenvectors()(m - 1, m - 1));

    if (residual <= rel_tol * std::max(std::abs(ritz), 1e-300) || bj <= 1e-14 * std::max(std::abs(ritz), 1.0)) {
      break;
    }
    beta.push_back(bj);
    prev = q;
    prev_beta = bj;
    q = w / bj;
  }
  return ritz;
}

SparseMatrix scale_laplacian(const MeshTopology& topology) {
  const double lmax = topology.lambda_max();
  if (!(lmax > 0.0)) fail(ErrorCode::kDomain, "lambda_max must be positive to rescale the Laplacian");
  SparseMatrix identity(topology.vertex_count(), topology.vertex_count());
  identity.setIdentity();
  SparseMatrix scaled = (2.0 / lmax) * topology.laplacian() - identity;
  scaled.makeCompressed();
  return scaled;
}

Eigen::MatrixXd chebyshev_basis(const SparseMatrix& l, const Eigen::MatrixXd& x, int order) {
  const Eigen::Index n = l.rows();
  const Eigen::Index f = x.cols();
  if (order < 1) fail(ErrorCode::kInvalidArgument, "Chebyshev order K must be >= 1");
  if (n == 0 || x.rows() % n != 0) fail(ErrorCode::kDimensionMismatch, "signal rows are not a multiple of |V|");
  const Eigen::Index batch = x.rows() / n;

  Eigen::MatrixXd out(x.rows(), order * f);
  out.leftCols(f) = x;
  if (order > 1) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      out.block(b * n, f, n, f).noalias() = l * x.middleRows(b * n, n);
    }
  }
  for (int k = 2; k < order; ++k) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      auto tk = out.block(b * n, k * f, n, f);
      tk.noalias() = 2.0 * (l * out.block(b * n, (k - 1) * f, n, f));
      tk -= out.block(b * n, (k - 2) * f, n, f);
    }
  }
  return out;
}

Eigen::MatrixXd chebyshev_basis_adjoint(const SparseMatrix& l, const Eigen::MatrixXd& grad_basis,
                                        int order) {
  const Eigen::Index n = l.rows();
  const Eigen::Index f = grad_basis.cols() / order;
  const Eigen::Index batch = grad_basis.rows() / n;
  Eigen::MatrixXd g = grad_basis;
  for (int k = order - 1; k >= 2; --k) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Eigen::MatrixXd gk = g.block(b * n, k * f, n, f);
      g.block(b * n, (k - 1) * f, n, f).noalias() += 2.0 * (l * gk);
      g.block(b * n, (k - 2) * f, n, f) -= gk;
    }
  }
  if (order > 1) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      g.block(b * n, 0, n, f).noalias() += l * g.block(b * n, f, n, f);
    }
  }
  return g.leftCols(f);
}

Eigen::MatrixXd cheb_filter(const MeshTopology& topology, const Eigen::MatrixXd& x,
                            const ChebCoefficients& theta) {
  check_filter_inputs(topology, x, theta);
  const SparseMatrix l = scale_laplacian(topology);
  const Eigen::MatrixXd basis = chebyshev_basis(l, x, static_cast<int>(theta.size()));
  return basis * stack_coefficients(theta);
}

ChebFilterGradient cheb_filter_backward(const MeshTopology& topology, const Eigen::MatrixXd& x,
                                        const ChebCoefficients& theta,
                                        const Eigen::MatrixXd& grad_y) {
  check_filter_inputs(topology, x, theta);
  const int order = static_cast<int>(theta.size());
  const Eigen::Index f_in = x.cols();
  if (grad_y.rows() != x.rows() || grad_y.cols() != theta.front().cols()) {
    fail(ErrorCode::kDimensionMismatch, "upstream gradient shape does not match filter output");
  }
  const SparseMatrix l = scale_laplacian(topology);
  const Eigen::MatrixXd basis = chebyshev_basis(l, x, order);
  const Eigen::MatrixXd stacked = stack_coefficients(theta);

  ChebFilterGradient grad;
  const Eigen::MatrixXd g_stacked = basis.transpose() * grad_y;
  grad.theta.resize(order);
  for (int k = 0; k < order; ++k) grad.theta[k] = g_stacked.middleRows(k * f_in, f_in);
  grad.x = chebyshev_basis_adjoint(l, grad_y * stacked.transpose(), order);
  return grad;
}

}  // namespace csm
