#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "macs/common.hpp"
#include "macs/tensor.hpp"

namespace macs {

struct SymEigResult {
  Tensor lambda;  // eigenvalues, ascending, shape {n}
  Tensor u;       // eigenvectors as columns, shape {n,n}
};

namespace detail {
inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
  return m;
}
}  // namespace detail

/// Eigendecomposition of a symmetric matrix. The input is symmetrized as
/// (S + Sᵀ)/2 before factorization. Eigenvalues come back ascending and each
/// eigenvector's sign is fixed (largest-magnitude component positive, first
/// index on ties) so results are deterministic.
inline SymEigResult sym_eig(const Tensor& s) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1))
    throw std::invalid_argument("sym_eig: input must be square, got " + s.shape_str());
  const int n = s.dim(0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = 0.5 * (s.at(i, j) + s.at(j, i));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success)
    throw NumericalError("sym_eig: eigensolver failed to converge");

  SymEigResult r;
  r.lambda = Tensor({n});
  r.u = Tensor({n, n});
  for (int j = 0; j < n; ++j) {
    r.lambda[j] = solver.eigenvalues()(j);
    int pivot = 0;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      const double m = std::abs(solver.eigenvectors()(i, j));
      if (m > best) {
        best = m;
        pivot = i;
      }
    }
    const double flip = solver.eigenvectors()(pivot, j) < 0.0 ? -1.0 : 1.0;
    for (int i = 0; i < n; ++i) r.u.at(i, j) = flip * solver.eigenvectors()(i, j);
  }
  return r;
}

/// Smallest gap between consecutive (sorted) eigenvalues.
inline double min_eig_gap(const Tensor& lambda) {
  double gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i + 1 < lambda.numel(); ++i)
    gap = std::min(gap, std::abs(lambda[i + 1] - lambda[i]));
  return gap;
}

/// Reconstructs U diag(g) Uᵀ.
inline Tensor eig_reconstruct(const Tensor& u, const Tensor& g) {
  const int n = u.dim(0);
  Tensor out({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += u.at(i, k) * g[k] * u.at(j, k);
      out.at(i, j) = acc;
    }
  return out;
}

/// Matrix function f applied through the eigenvalues of a symmetric matrix.
template <typename F>
Tensor sym_matrix_function(const Tensor& s, F&& f) {
  SymEigResult e = sym_eig(s);
  Tensor g({e.lambda.numel()});
  for (int i = 0; i < g.numel(); ++i) g[i] = f(e.lambda[i]);
  return eig_reconstruct(e.u, g);
}

/// Orthonormalizes the columns of W (modified Gram-Schmidt, R diagonal kept
/// positive, so an already-orthonormal input maps to itself). Used as the
/// retraction after each optimizer step on the attention parameters.
inline Tensor qr_orthonormalize(const Tensor& w) {
  if (w.rank() != 2) throw std::invalid_argument("qr_orthonormalize: matrix expected");
  const int n = w.dim(0);
  const int k = w.dim(1);
  if (k > n) throw std::invalid_argument("qr_orthonormalize: more columns than rows");
  Tensor q = w;
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < j; ++i) {
      double dot = 0.0;
      for (int r = 0; r < n; ++r) dot += q.at(r, i) * q.at(r, j);
      for (int r = 0; r < n; ++r) q.at(r, j) -= dot * q.at(r, i);
    }
    double norm = 0.0;
    for (int r = 0; r < n; ++r) norm += q.at(r, j) * q.at(r, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12)
      throw NumericalError("qr_orthonormalize: rank-deficient column " + std::to_string(j));
    for (int r = 0; r < n; ++r) q.at(r, j) /= norm;
  }
  return q;
}

/// Max deviation of WᵀW from the identity.
inline double orthonormality_error(const Tensor& w) {
  const int n = w.dim(0);
  const int k = w.dim(1);
  double worst = 0.0;
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      double dot = 0.0;
      for (int r = 0; r < n; ++r) dot += w.at(r, a) * w.at(r, b);
      worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace macs
