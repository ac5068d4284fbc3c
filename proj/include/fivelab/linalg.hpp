#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>

#include "fivelab/errors.hpp"

namespace fivelab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
struct SymEigen {
  Vector values;
  Matrix vectors;
};

inline SymEigen sym_eigen(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

// Q f(L) Q^T for symmetric input.
template <class F>
Matrix sym_function(const SymEigen& e, F&& f) {
  Vector fl = e.values.unaryExpr(f);
  return e.vectors * fl.asDiagonal() * e.vectors.transpose();
}

inline Matrix sym_expm(const Matrix& m) {
  return sym_function(sym_eigen(m), [](double l) { return std::exp(l); });
}

inline bool is_symmetric(const Matrix& s, double tol = 1e-10) {
  if (s.rows() != s.cols()) return false;
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  return (s - s.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

// Cholesky factor of an SPD matrix; throws NumericalError when not positive definite.
inline Eigen::LLT<Matrix> cholesky_spd(const Matrix& s, const std::string& what = "matrix") {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) throw NumericalError(what + " is not positive definite");
  return llt;
}

inline double logdet_from_cholesky(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline double logdet_spd(const Matrix& s) { return logdet_from_cholesky(cholesky_spd(s)); }

// log N(x; mean, cov) from a Cholesky factor of cov.
inline double gaussian_logpdf(const Vector& x, const Vector& mean, const Eigen::LLT<Matrix>& llt) {
  const Vector r = x - mean;
  const Vector w = llt.matrixL().solve(r);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + logdet_from_cholesky(llt) + w.squaredNorm());
}

// Packed lower triangle, row-major: (0,0), (1,0), (1,1), (2,0), ...
inline Eigen::Index packed_lower_size(Eigen::Index d) { return d * (d + 1) / 2; }

inline Eigen::Index packed_lower_index(Eigen::Index i, Eigen::Index j) { return i * (i + 1) / 2 + j; }

inline Matrix unpack_lower(const Vector& packed, Eigen::Index d) {
  require_shape(packed.size() == packed_lower_size(d), "packed lower-triangular length");
  Matrix a = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) a(i, j) = packed(packed_lower_index(i, j));
  return a;
}

inline Vector pack_lower(const Matrix& a) {
  const Eigen::Index d = a.rows();
  Vector packed(packed_lower_size(d));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) packed(packed_lower_index(i, j)) = a(i, j);
  return packed;
}

// Orthonormal basis of the column span (thin QR).
inline Matrix orthonormal_basis(const Matrix& cols) {
  Eigen::HouseholderQR<Matrix> qr(cols);
  return qr.householderQ() * Matrix::Identity(cols.rows(), cols.cols());
}

}  // namespace fivelab
