#pragma once

// Tape operations on per-sample symmetric matrices M = (A + A^T) / 2, where A is
// lower triangular and stored packed (one column per sample). Adjoints of the
// matrix exponential use the divided-difference (Daleckii-Krein) form
//   dF = Q (Gamma o (Q^T dM Q)) Q^T,  Gamma_ij = (e^{l_i} - e^{l_j}) / (l_i - l_j).

#include <cmath>

#include "fivelab/linalg.hpp"
#include "fivelab/tape.hpp"

namespace fivelab::ad {

inline Matrix symmetric_from_packed(const Vector& packed, Eigen::Index d) {
  const Matrix a = unpack_lower(packed, d);
  return 0.5 * (a + a.transpose());
}

// Adjoint of M mapped back onto the packed lower-triangular entries of A.
inline Vector packed_adjoint(const Matrix& m_bar) {
  const Eigen::Index d = m_bar.rows();
  Vector out(packed_lower_size(d));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      out(packed_lower_index(i, j)) = i == j ? m_bar(i, i) : 0.5 * (m_bar(i, j) + m_bar(j, i));
  return out;
}

inline double exp_divided_difference(double a, double b) {
  const double delta = a - b;
  if (delta == 0.0) return std::exp(a);
  return std::exp(b) * std::expm1(delta) / delta;
}

// Adjoint of X for F = expm(X), X symmetric with eigendecomposition `e`.
inline Matrix expm_adjoint(const SymEigen& e, const Matrix& f_bar) {
  const Eigen::Index d = e.values.size();
  const Matrix& q = e.vectors;
  Matrix inner = q.transpose() * (0.5 * (f_bar + f_bar.transpose())) * q;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) inner(i, j) *= exp_divided_difference(e.values(i), e.values(j));
  return q * inner * q.transpose();
}

inline Eigen::Index latent_dim_from_packed(Eigen::Index m) {
  Eigen::Index d = 0;
  while (packed_lower_size(d) < m) ++d;
  require_shape(packed_lower_size(d) == m, "packed lower-triangular row count");
  return d;
}

// Column k: expm(M_k / 2) eps_k, i.e. a reparameterized draw scaled by Sigma^{1/2}.
inline Var expm_half_apply(Var packed, const Matrix& eps) {
  const Eigen::Index d = latent_dim_from_packed(packed.rows());
  require_shape(eps.rows() == d && eps.cols() == packed.cols(), "expm_half_apply noise");
  const Eigen::Index batch = packed.cols();
  std::vector<SymEigen> halves;
  halves.reserve(static_cast<std::size_t>(batch));
  Matrix out(d, batch);
  for (Eigen::Index k = 0; k < batch; ++k) {
    SymEigen e = sym_eigen(0.5 * symmetric_from_packed(packed.value().col(k), d));
    out.col(k) = sym_function(e, [](double l) { return std::exp(l); }) * eps.col(k);
    halves.push_back(std::move(e));
  }
  return packed.tape()->record(
      std::move(out), {packed}, [packed, eps, halves = std::move(halves)](Tape& t, const Matrix& g) {
        Matrix adj(t.value(packed).rows(), t.value(packed).cols());
        for (Eigen::Index k = 0; k < g.cols(); ++k) {
          const Matrix f_bar = g.col(k) * eps.col(k).transpose();
          adj.col(k) = packed_adjoint(0.5 * expm_adjoint(halves[static_cast<std::size_t>(k)], f_bar));
        }
        t.accumulate(packed, adj);
      });
}

// Row vector of tr(expm(M_k)).
inline Var expm_trace(Var packed) {
  const Eigen::Index d = latent_dim_from_packed(packed.rows());
  const Eigen::Index batch = packed.cols();
  std::vector<Matrix> expms;
  expms.reserve(static_cast<std::size_t>(batch));
  Matrix out(1, batch);
  for (Eigen::Index k = 0; k < batch; ++k) {
    expms.push_back(sym_expm(symmetric_from_packed(packed.value().col(k), d)));
    out(0, k) = expms.back().trace();
  }
  return packed.tape()->record(std::move(out), {packed}, [packed, expms = std::move(expms)](Tape& t, const Matrix& g) {
    Matrix adj(t.value(packed).rows(), t.value(packed).cols());
    for (Eigen::Index k = 0; k < g.cols(); ++k)
      adj.col(k) = packed_adjoint(g(0, k) * expms[static_cast<std::size_t>(k)]);
    t.accumulate(packed, adj);
  });
}

}  // namespace fivelab::ad
