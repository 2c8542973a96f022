#pragma once

#include <vector>

#include <Eigen/Core>

#include "csm/mesh.hpp"

namespace csm {

/// Largest eigenvalue of a symmetric positive semi-definite sparse matrix.
///
/// Lanczos iteration with full reorthogonalisation from a fixed start
/// vector; stops once the leading Ritz value is stable to `rel_tol` or the
/// Krylov space is exhausted. Ritz values never exceed the true maximum.
double largest_eigenvalue(const SparseMatrix& symmetric, double rel_tol = 1e-13);

/// L~ = 2 L / lambda_max - I, spectrum inside [-1, 1].
SparseMatrix scale_laplacian(const MeshTopology& topology);

/// Filter coefficients: theta[k] is the F1 x F2 matrix of k-th order terms.
using ChebCoefficients = std::vector<Eigen::MatrixXd>;

/// Chebyshev spectral filter y = sum_k T_k(L~) x theta[k] on one graph signal
/// (|V| x F1 features), evaluated through the three-term recurrence.
Eigen::MatrixXd cheb_filter(const MeshTopology& topology, const Eigen::MatrixXd& x,
                            const ChebCoefficients& theta);

struct ChebFilterGradient {
  Eigen::MatrixXd x;
  ChebCoefficients theta;
};

/// Vector-Jacobian product of cheb_filter for an upstream gradient dL/dy.
ChebFilterGradient cheb_filter_backward(const MeshTopology& topology, const Eigen::MatrixXd& x,
                                        const ChebCoefficients& theta,
                                        const Eigen::MatrixXd& grad_y);

// Batched kernels. A batch of graph signals is stored sample-major: rows
// [b*|V|, (b+1)*|V|) hold sample b.

/// Stacked basis [T_0 x | T_1 x | ... | T_{K-1} x], (B|V|) x (K F).
Eigen::MatrixXd chebyshev_basis(const SparseMatrix& scaled_laplacian, const Eigen::MatrixXd& x,
                                int order);

/// Adjoint of chebyshev_basis: maps d(basis) to dx. Relies on L~ being symmetric.
Eigen::MatrixXd chebyshev_basis_adjoint(const SparseMatrix& scaled_laplacian,
                                        const Eigen::MatrixXd& grad_basis, int order);

}  // namespace csm
