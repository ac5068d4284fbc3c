#pragma once

// Pullback metric of a decoder, its eigenframe, Lie brackets of frame fields
// by central differences, the involutivity residual of eigen-line pairs, and
// the Laplace approximation of the true posterior.

#include <cmath>
#include <concepts>
#include <sstream>
#include <string>

#include "fivelab/errors.hpp"
#include "fivelab/linalg.hpp"
#include "fivelab/mlp.hpp"
#include "fivelab/models.hpp"

namespace fivelab {

template <class M>
concept JacobianMap = requires(const M& m, const Vector& z) {
  { m.jacobian(z) } -> std::convertible_to<Matrix>;
};

struct PullbackMetric {
  Vector point;
  Matrix metric;  // G = J^T J
};

template <JacobianMap Map>
PullbackMetric pullback_metric(const Map& decoder, const Vector& z) {
  const Matrix j = decoder.jacobian(z);
  require_shape(j.cols() == z.size(), "decoder Jacobian columns");
  const Matrix g = j.transpose() * j;
  return {z, 0.5 * (g + g.transpose())};
}

inline bool is_immersion(const PullbackMetric& g, double tol = 1e-10) {
  return sym_eigen(g.metric).values.minCoeff() > tol;
}

struct EigenFrame {
  Vector eigenvalues;  // descending
  Matrix frame;        // orthonormal columns
};

inline constexpr double kEigengapTolerance = 1e-8;

// First component with |c| > tol made positive.
inline void fix_sign(Eigen::Ref<Vector> e, double tol = 1e-12) {
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (std::abs(e(i)) > tol) {
      if (e(i) < 0.0) e = -e;
      return;
    }
  }
}

inline EigenFrame eigenframe(const Matrix& g) {
  require_shape(g.rows() == g.cols(), "eigenframe needs a square metric");
  const SymEigen e = sym_eigen(0.5 * (g + g.transpose()));
  const Eigen::Index d = g.rows();
  EigenFrame out{Vector(d), Matrix(d, d)};
  for (Eigen::Index k = 0; k < d; ++k) {
    out.eigenvalues(k) = e.values(d - 1 - k);
    out.frame.col(k) = e.vectors.col(d - 1 - k);
    fix_sign(out.frame.col(k));
  }
  for (Eigen::Index k = 0; k + 1 < d; ++k) {
    if (out.eigenvalues(k) - out.eigenvalues(k + 1) <= kEigengapTolerance) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "degenerate spectrum: eigenvalues " << k + 1 << " and " << k + 2 << " (" << out.eigenvalues(k)
          << ", " << out.eigenvalues(k + 1) << ") are closer than " << kEigengapTolerance;
      throw DegenerateSpectrumError(msg.str());
    }
  }
  return out;
}

inline EigenFrame eigenframe(const PullbackMetric& g) { return eigenframe(g.metric); }

// Frame field: a callable returning a d x d matrix whose columns are the fields at a point.
template <class F>
concept FrameField = requires(const F& f, const Vector& p) {
  { f(p) } -> std::convertible_to<Matrix>;
};

// Eigenframe field of a decoder's pullback metric.
template <JacobianMap Map>
auto decoder_eigenframe_field(const Map& decoder) {
  return [&decoder](const Vector& p) -> Matrix { return eigenframe(pullback_metric(decoder, p)).frame; };
}

inline constexpr double kDefaultBracketStep = 1e-4;

// [e_i, e_j](p) = (De_j) e_i - (De_i) e_j with field Jacobians from central differences.
// Columns evaluated on the stencil are flipped when they point against the centre frame.
template <FrameField F>
Vector lie_bracket(const F& field, const Vector& p, Eigen::Index i, Eigen::Index j, double h = kDefaultBracketStep) {
  const Matrix centre = field(p);
  const Eigen::Index d = p.size();
  require_shape(centre.rows() == d && i >= 0 && j >= 0 && i < centre.cols() && j < centre.cols(),
                "frame field indices");
  auto aligned = [&](const Vector& q) {
    Matrix f = field(q);
    for (Eigen::Index c = 0; c < f.cols(); ++c)
      if (f.col(c).dot(centre.col(c)) < 0.0) f.col(c) = -f.col(c);
    return f;
  };
  Matrix d_ei(d, d);
  Matrix d_ej(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Vector step = Vector::Unit(d, k) * h;
    const Matrix plus = aligned(p + step);
    const Matrix minus = aligned(p - step);
    d_ei.col(k) = (plus.col(i) - minus.col(i)) / (2.0 * h);
    d_ej.col(k) = (plus.col(j) - minus.col(j)) / (2.0 * h);
  }
  return d_ej * centre.col(i) - d_ei * centre.col(j);
}

// Norm of the part of [e_i, e_j](p) orthogonal to span{e_i(p), e_j(p)}.
template <FrameField F>
double involutivity_residual(const F& field, const Vector& p, Eigen::Index i, Eigen::Index j,
                             double h = kDefaultBracketStep) {
  const Vector bracket = lie_bracket(field, p, i, j, h);
  const Matrix centre = field(p);
  Matrix span(centre.rows(), 2);
  span << centre.col(i), centre.col(j);
  const Matrix basis = orthonormal_basis(span);
  return (bracket - basis * (basis.transpose() * bracket)).norm();
}

struct LaplacePosterior {
  Vector mode;
  Matrix precision;   // H = I + J^T J / sigma^2
  Matrix covariance;  // H^{-1}
};

// Laplace approximation of p(z|x) around `mode`.
inline LaplacePosterior laplace_at(const Mlp& decoder, const Vector& mode, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("laplace_posterior: sigma must be positive");
  require_shape(mode.size() == decoder.input_dim(), "mode must be a latent code");
  const Matrix j = jacobian(decoder, mode);
  const Eigen::Index d = mode.size();
  Matrix h = Matrix::Identity(d, d) + j.transpose() * j / (sigma * sigma);
  h = 0.5 * (h + h.transpose());
  Matrix cov = cholesky_spd(h, "Laplace precision").solve(Matrix::Identity(d, d));
  cov = 0.5 * (cov + cov.transpose());
  return {mode, std::move(h), std::move(cov)};
}

// Mode estimated by the encoder output f(x).
inline LaplacePosterior laplace_posterior(const Mlp& decoder, const Mlp& encoder, const Vector& x, double sigma) {
  return laplace_at(decoder, mlp_forward(encoder, x), sigma);
}

// Mode estimated by the model's posterior mean (mu for the VAE variants).
inline LaplacePosterior laplace_posterior(const Model& model, const Vector& x) {
  return laplace_at(model.decoder, mlp_forward(model.encoder, x).head(model.latent_dim), model.noise.sigma());
}

// ||offdiag(G)||_F / ||diag(G)||_F
inline double offdiag_ratio(const Matrix& g) {
  require_shape(g.rows() == g.cols(), "offdiag_ratio needs a square matrix");
  const Vector diag = g.diagonal();
  if ((diag.array() <= 0.0).any()) throw DomainError("offdiag_ratio: diagonal entries must be positive");
  const double off = std::sqrt(std::max(0.0, g.squaredNorm() - diag.squaredNorm()));
  return off / diag.norm();
}

}  // namespace fivelab
