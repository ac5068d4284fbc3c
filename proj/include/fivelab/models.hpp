#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fivelab/errors.hpp"
#include "fivelab/linalg.hpp"
#include "fivelab/mlp.hpp"
#include "fivelab/rng.hpp"

namespace fivelab {

enum class ModelKind { Vae, FcVae, Fif, Five };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Vae: return "vae";
    case ModelKind::FcVae: return "fcvae";
    case ModelKind::Fif: return "fif";
    case ModelKind::Five: return "five";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "vae") return ModelKind::Vae;
  if (s == "fcvae") return ModelKind::FcVae;
  if (s == "fif") return ModelKind::Fif;
  if (s == "five") return ModelKind::Five;
  throw ParseError("unknown model '" + std::string(s) + "'");
}

// Learnable observation noise, stored as log sigma.
struct NoiseParam {
  double log_sigma = std::log(0.1);
  double sigma() const { return std::exp(log_sigma); }
};

// Encoder output width: (mu, log_var) for the diagonal VAE, (mu, packed lower-triangular A)
// for the FC-VAE, and the latent code itself for FIF and FIVE.
inline Eigen::Index encoder_output_dim(ModelKind kind, Eigen::Index d) {
  switch (kind) {
    case ModelKind::Vae: return 2 * d;
    case ModelKind::FcVae: return d + packed_lower_size(d);
    case ModelKind::Fif:
    case ModelKind::Five: return d;
  }
  return d;
}

struct Model {
  ModelKind kind = ModelKind::Five;
  Eigen::Index latent_dim = 1;
  Mlp encoder;
  Mlp decoder;
  NoiseParam noise;

  Eigen::Index data_dim() const { return decoder.output_dim(); }

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (latent_dim < 1) throw ContractError("latent dimension must be positive");
    if (encoder.output_dim() != encoder_output_dim(kind, latent_dim))
      throw ShapeError("encoder output width does not match model kind and latent dimension");
    if (decoder.input_dim() != latent_dim) throw ShapeError("decoder input width differs from latent dimension");
    if (encoder.input_dim() != decoder.output_dim()) throw ShapeError("encoder input differs from decoder output");
    if (!encoder.final_identity() || !decoder.final_identity())
      throw ContractError("final encoder/decoder layer must be Identity");
    if (!std::isfinite(noise.log_sigma)) throw DomainError("log sigma is not finite");
  }

  Eigen::Index parameter_count() const { return encoder.parameter_count() + decoder.parameter_count() + 1; }

  // Encoder, decoder, then log sigma.
  Vector flatten() const {
    Vector out(parameter_count());
    out << encoder.flatten(), decoder.flatten(), noise.log_sigma;
    return out;
  }

  void assign(const Vector& flat) {
    require_shape(flat.size() == parameter_count(), "model parameter vector");
    Eigen::Index o = encoder.assign(flat, 0);
    o = decoder.assign(flat, o);
    noise.log_sigma = flat(o);
  }
};

// Zero-initialized model; hidden widths are mirrored for the decoder.
inline Model make_model(ModelKind kind, Eigen::Index data_dim, Eigen::Index latent_dim,
                        const std::vector<int>& hidden, Activation activation, double log_sigma) {
  std::vector<int> enc{static_cast<int>(data_dim)};
  enc.insert(enc.end(), hidden.begin(), hidden.end());
  enc.push_back(static_cast<int>(encoder_output_dim(kind, latent_dim)));
  std::vector<int> dec{static_cast<int>(latent_dim)};
  dec.insert(dec.end(), hidden.rbegin(), hidden.rend());
  dec.push_back(static_cast<int>(data_dim));
  Model m{kind, latent_dim, Mlp::zeros(enc, activation), Mlp::zeros(dec, activation), {log_sigma}};
  m.validate();
  return m;
}

// -log N(x; mean, sigma^2 I), all sigma-dependent constants kept.
inline double gaussian_nll(const Vector& x, const Vector& mean, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_nll: sigma must be positive");
  require_shape(x.size() == mean.size(), "gaussian_nll");
  const double n = static_cast<double>(x.size());
  return 0.5 * n * (kLog2Pi + 2.0 * std::log(sigma)) + (x - mean).squaredNorm() / (2.0 * sigma * sigma);
}

// KL(N(mu, diag(var)) || N(0, I)).
inline double kl_diag(const Vector& mu, const Vector& variances) {
  require_shape(mu.size() == variances.size(), "kl_diag");
  if ((variances.array() <= 0.0).any()) throw DomainError("kl_diag: variances must be positive");
  return 0.5 * (mu.squaredNorm() + variances.sum() - static_cast<double>(mu.size()) -
                variances.array().log().sum());
}

struct SpdCov {
  Matrix cov;
  double logdet = 0.0;
};

// Sigma = expm((A + A^T) / 2); log det Sigma = tr(M), never through det(Sigma).
inline SpdCov fcvae_cov(const Matrix& a) {
  require_shape(a.rows() == a.cols(), "fcvae_cov needs a square matrix");
  if (!a.allFinite()) throw DomainError("fcvae_cov: non-finite entry");
  const Matrix m = 0.5 * (a + a.transpose());
  return {sym_expm(m), m.trace()};
}

// KL(N(mu, Sigma) || N(0, I)) with a precomputed log det Sigma.
inline double kl_full(const Vector& mu, const Matrix& cov, double logdet) {
  require_shape(cov.rows() == mu.size() && cov.cols() == mu.size(), "kl_full");
  if (!is_symmetric(cov)) throw ContractError("kl_full: covariance is not symmetric");
  return 0.5 * (mu.squaredNorm() + cov.trace() - static_cast<double>(mu.size()) - logdet);
}

// z = f(x) + sigma f'(x) v, v in data space.
inline Vector five_posterior_sample(const Vector& x, const Mlp& encoder, double sigma, const Vector& v) {
  require_shape(v.size() == encoder.input_dim(), "five_posterior_sample noise");
  return mlp_forward(encoder, x) + sigma * jvp(encoder, x, v);
}

// Positive-sign minimizer of the scalar linear FIVE loss.
struct LinearFiveOptimum {
  double w;
  double v;
};

inline LinearFiveOptimum linear_five_closed_form(double lambda, double sigma) {
  if (!(lambda > 0.0)) throw DomainError("linear_five_closed_form: lambda must be positive");
  if (!(sigma >= 0.0)) throw DomainError("linear_five_closed_form: sigma must be non-negative");
  const double r = std::sqrt(lambda);
  return {r, r / (sigma * sigma + lambda)};
}

struct DiagonalCov {
  Vector variances;
};

struct DenseCov {
  Matrix cov;
  double logdet = 0.0;
};

// Covariance scale^2 * factor * factor^T, factor is d x n.
struct JacobianFactorCov {
  Matrix factor;
  double scale = 1.0;
};

class GaussianPosterior {
 public:
  using Repr = std::variant<DiagonalCov, DenseCov, JacobianFactorCov>;

  GaussianPosterior(Vector mean, Repr repr) : mean_(std::move(mean)), repr_(std::move(repr)) { check(); }

  const Vector& mean() const { return mean_; }
  const Repr& repr() const { return repr_; }
  Eigen::Index dim() const { return mean_.size(); }

  Matrix covariance() const {
    return std::visit(
        [](const auto& r) -> Matrix {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, DiagonalCov>) {
            return r.variances.asDiagonal();
          } else if constexpr (std::is_same_v<T, DenseCov>) {
            return r.cov;
          } else {
            return r.scale * r.scale * r.factor * r.factor.transpose();
          }
        },
        repr_);
  }

  double log_density(const Vector& z) const {
    require_shape(z.size() == dim(), "posterior log density");
    if (const auto* diag = std::get_if<DiagonalCov>(&repr_)) {
      const auto& var = diag->variances.array();
      return -0.5 * (static_cast<double>(dim()) * kLog2Pi + var.log().sum() +
                     ((z - mean_).array().square() / var).sum());
    }
    if (const auto* dense = std::get_if<DenseCov>(&repr_)) {
      const auto llt = cholesky_spd(dense->cov, "posterior covariance");
      const Vector w = llt.matrixL().solve(z - mean_);
      return -0.5 * (static_cast<double>(dim()) * kLog2Pi + dense->logdet + w.squaredNorm());
    }
    return gaussian_logpdf(z, mean_, factor_cholesky());
  }

  // Draws from the posterior. The Jacobian-factor form uses data-space noise v ~ N(0, I_n).
  Vector sample(Rng& rng) const {
    if (const auto* diag = std::get_if<DiagonalCov>(&repr_))
      return mean_ + diag->variances.cwiseSqrt().cwiseProduct(standard_normal(dim(), rng));
    if (const auto* dense = std::get_if<DenseCov>(&repr_)) {
      const Matrix root = sym_function(sym_eigen(dense->cov), [](double l) { return std::sqrt(std::max(l, 0.0)); });
      return mean_ + root * standard_normal(dim(), rng);
    }
    const auto& jf = std::get<JacobianFactorCov>(repr_);
    return mean_ + jf.scale * jf.factor * standard_normal(jf.factor.cols(), rng);
  }

  // Cholesky of the d x d Gram covariance; NumericalError if the factor is rank deficient.
  Eigen::LLT<Matrix> factor_cholesky() const {
    const auto& jf = std::get<JacobianFactorCov>(repr_);
    const Matrix gram = jf.scale * jf.scale * jf.factor * jf.factor.transpose();
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 1e-300)
      throw NumericalError(
          "singular proposal covariance sigma^2 f'(x) f'(x)^T: raise the sigma floor or check that the encoder "
          "Jacobian has full row rank");
    return llt;
  }

 private:
  void check() const {
    std::visit(
        [this](const auto& r) {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, DiagonalCov>) {
            require_shape(r.variances.size() == dim(), "diagonal covariance");
            if ((r.variances.array() <= 0.0).any()) throw DomainError("diagonal variances must be positive");
          } else if constexpr (std::is_same_v<T, DenseCov>) {
            require_shape(r.cov.rows() == dim() && r.cov.cols() == dim(), "dense covariance");
            if (!is_symmetric(r.cov)) throw ContractError("dense covariance is not symmetric");
          } else {
            require_shape(r.factor.rows() == dim(), "Jacobian factor rows");
            if (!(r.scale > 0.0)) throw DomainError("Jacobian factor scale must be positive");
            if (r.factor.cols() < dim()) throw NumericalError("Jacobian factor cannot have full row rank");
            Eigen::JacobiSVD<Matrix> svd(r.factor);
            if (svd.singularValues().minCoeff() <= 1e-10)
              throw NumericalError("Jacobian factor is rank deficient (smallest singular value <= 1e-10)");
          }
        },
        repr_);
  }

  Vector mean_;
  Repr repr_;
};

// Variational posterior q(z|x) of a model at one datum.
inline GaussianPosterior posterior_of(const Model& model, const Vector& x) {
  const Eigen::Index d = model.latent_dim;
  const Vector out = mlp_forward(model.encoder, x);
  switch (model.kind) {
    case ModelKind::Vae:
      return {out.head(d), DiagonalCov{out.tail(d).array().exp()}};
    case ModelKind::FcVae: {
      const SpdCov c = fcvae_cov(unpack_lower(out.tail(packed_lower_size(d)), d));
      return {out.head(d), DenseCov{c.cov, c.logdet}};
    }
    case ModelKind::Fif:
    case ModelKind::Five:
      return {out, JacobianFactorCov{jacobian(model.encoder, x), model.noise.sigma()}};
  }
  throw ContractError("unknown model kind");
}

}  // namespace fivelab
