#pragma once

// Training losses for the four models, built on the tape so that gradients
// with respect to encoder, decoder and log sigma are exact. Every loss is the
// mean over the columns (data points) of the batch.

#include <string>
#include <string_view>
#include <vector>

#include "fivelab/models.hpp"
#include "fivelab/net_tape.hpp"
#include "fivelab/spd_ops.hpp"
#include "fivelab/tape.hpp"

namespace fivelab {

enum class ProbeDist { Rademacher, Gaussian };

inline std::string_view to_string(ProbeDist p) { return p == ProbeDist::Rademacher ? "rademacher" : "gaussian"; }

inline ProbeDist parse_probe_dist(std::string_view s) {
  if (s == "rademacher") return ProbeDist::Rademacher;
  if (s == "gaussian") return ProbeDist::Gaussian;
  throw ParseError("unknown probe distribution '" + std::string(s) + "'");
}

// Frozen randomness for one loss evaluation, one column per data point.
//   vae, fcvae: latent = reparameterization noise eps ~ N(0, I_d)
//   fif:        latent = Hutchinson probe v
//   five:       data = eps1 ~ N(0, I_n) for the posterior draw, latent = probe eps2
struct LossNoise {
  Matrix latent;
  Matrix data;
};

inline Matrix draw_probes(Eigen::Index rows, Eigen::Index cols, ProbeDist dist, Rng& rng) {
  return dist == ProbeDist::Rademacher ? rademacher(rows, cols, rng) : standard_normal(rows, cols, rng);
}

inline LossNoise draw_loss_noise(const Model& model, Eigen::Index batch, ProbeDist probes, Rng& rng) {
  const Eigen::Index d = model.latent_dim;
  const Eigen::Index n = model.data_dim();
  switch (model.kind) {
    case ModelKind::Vae:
    case ModelKind::FcVae: return {standard_normal(d, batch, rng), Matrix(0, batch)};
    case ModelKind::Fif: return {draw_probes(d, batch, probes, rng), Matrix(0, batch)};
    case ModelKind::Five: {
      Matrix eps1 = standard_normal(n, batch, rng);
      return {draw_probes(d, batch, probes, rng), std::move(eps1)};
    }
  }
  throw ContractError("unknown model kind");
}

struct ModelGrad {
  ad::NetGrad encoder;
  ad::NetGrad decoder;
  double log_sigma = 0.0;

  // Same layout as Model::flatten().
  Vector flatten() const {
    const Vector e = encoder.flatten();
    const Vector g = decoder.flatten();
    Vector out(e.size() + g.size() + 1);
    out << e, g, log_sigma;
    return out;
  }
};

struct LossOutput {
  double value = 0.0;
  ModelGrad grad;                           // empty when gradients were not requested
  std::vector<Matrix> stop_gradient_values;  // replayable via LossOptions::stop_gradient_override
};

struct LossOptions {
  bool with_grad = true;
  const std::vector<Matrix>* stop_gradient_override = nullptr;
};

namespace detail {

struct ModelVars {
  ad::NetVars encoder;
  ad::NetVars decoder;
  ad::Var log_sigma;
};

// Sum over columns of -log N(x; y, sigma^2 I).
inline ad::Var reconstruction_nll(ad::Tape& tape, const Matrix& x, ad::Var y, ad::Var log_sigma) {
  require_shape(y.rows() == x.rows() && y.cols() == x.cols(), "reconstruction");
  const double count = static_cast<double>(x.size());
  ad::Var sq = ad::sum(ad::square(tape.constant(x) - y));
  ad::Var inv_var = ad::exp(ad::scale(log_sigma, -2.0));
  ad::Var nll = ad::scale(log_sigma, count) + ad::scale(ad::mul_scalar(sq, inv_var), 0.5);
  return ad::add_constant(nll, 0.5 * count * kLog2Pi);
}

inline ad::Var vae(ad::Tape& tape, const ModelVars& m, Eigen::Index d, const Matrix& x, const LossNoise& noise) {
  const double batch = static_cast<double>(x.cols());
  require_shape(noise.latent.rows() == d && noise.latent.cols() == x.cols(), "vae noise");
  ad::Var out = ad::forward(m.encoder, tape.constant(x));
  ad::Var mu = ad::rows(out, 0, d);
  ad::Var log_var = ad::rows(out, d, d);
  ad::Var z = mu + ad::cmul(ad::exp(ad::scale(log_var, 0.5)), tape.constant(noise.latent));
  ad::Var recon = reconstruction_nll(tape, x, ad::forward(m.decoder, z), m.log_sigma);
  ad::Var kl = ad::scale(ad::sum(ad::square(mu)) + ad::sum(ad::exp(log_var)) - ad::sum(log_var), 0.5);
  kl = ad::add_constant(kl, -0.5 * static_cast<double>(d) * batch);
  return ad::scale(recon + kl, 1.0 / batch);
}

inline ad::Var fcvae(ad::Tape& tape, const ModelVars& m, Eigen::Index d, const Matrix& x, const LossNoise& noise) {
  const double batch = static_cast<double>(x.cols());
  require_shape(noise.latent.rows() == d && noise.latent.cols() == x.cols(), "fcvae noise");
  ad::Var out = ad::forward(m.encoder, tape.constant(x));
  ad::Var mu = ad::rows(out, 0, d);
  ad::Var packed = ad::rows(out, d, packed_lower_size(d));
  ad::Var z = mu + ad::expm_half_apply(packed, noise.latent);
  ad::Var recon = reconstruction_nll(tape, x, ad::forward(m.decoder, z), m.log_sigma);
  std::vector<Eigen::Index> diag;
  for (Eigen::Index i = 0; i < d; ++i) diag.push_back(packed_lower_index(i, i));
  ad::Var trace_m = ad::sum(ad::select_rows(packed, diag));
  ad::Var kl = ad::scale(ad::sum(ad::square(mu)) + ad::sum(ad::expm_trace(packed)) - trace_m, 0.5);
  kl = ad::add_constant(kl, -0.5 * static_cast<double>(d) * batch);
  return ad::scale(recon + kl, 1.0 / batch);
}

// u(x, f(x)) + SG[v^T f'(x)] g'(f(x)) v
inline ad::Var fif(ad::Tape& tape, const ModelVars& m, Eigen::Index d, const Matrix& x, const LossNoise& noise) {
  const double batch = static_cast<double>(x.cols());
  require_shape(noise.latent.rows() == d && noise.latent.cols() == x.cols(), "fif probe");
  ad::Var xv = tape.constant(x);
  ad::Var probe = tape.constant(noise.latent);
  ad::Var z = ad::forward(m.encoder, xv);
  ad::Var left = tape.stop_gradient(ad::vjp(m.encoder, xv, probe));
  ad::DualVar dec = ad::forward_jvp(m.decoder, z, probe);
  ad::Var u = reconstruction_nll(tape, x, dec.value, m.log_sigma) + ad::scale(ad::sum(ad::square(z)), 0.5);
  u = ad::add_constant(u, 0.5 * static_cast<double>(d) * batch * kLog2Pi);
  return ad::scale(u + ad::dot(left, dec.tangent), 1.0 / batch);
}

// Reconstruction through z = f(x) + sigma f'(x) eps1, plus the KL with the
// log-determinant replaced by its gradient surrogate eps2^T f'(x) SG[g'(f(x)) eps2].
inline ad::Var five(ad::Tape& tape, const ModelVars& m, Eigen::Index d, const Matrix& x, const LossNoise& noise) {
  const double batch = static_cast<double>(x.cols());
  require_shape(noise.latent.rows() == d && noise.latent.cols() == x.cols(), "five probe");
  require_shape(noise.data.rows() == x.rows() && noise.data.cols() == x.cols(), "five posterior noise");
  ad::Var xv = tape.constant(x);
  ad::Var probe = tape.constant(noise.latent);
  ad::Var sigma = ad::exp(m.log_sigma);

  ad::DualVar enc = ad::forward_jvp(m.encoder, xv, tape.constant(noise.data));
  ad::Var z = enc.value + ad::mul_scalar(enc.tangent, sigma);
  ad::Var recon = reconstruction_nll(tape, x, ad::forward(m.decoder, z), m.log_sigma);

  // Hutchinson estimate of tr(f' f'^T) from the same probe.
  ad::Var row = ad::vjp(m.encoder, xv, probe);
  ad::Var trace_term = ad::mul_scalar(ad::sum(ad::square(row)), ad::exp(ad::scale(m.log_sigma, 2.0)));

  ad::Var w = tape.stop_gradient(ad::forward_jvp(m.decoder, enc.value, probe).tangent);
  ad::Var surrogate = ad::dot(probe, ad::forward_jvp(m.encoder, xv, w).tangent);

  ad::Var kl = ad::scale(ad::sum(ad::square(enc.value)) + trace_term, 0.5);
  kl = kl - ad::scale(m.log_sigma, static_cast<double>(d) * batch) - surrogate;
  kl = ad::add_constant(kl, -0.5 * static_cast<double>(d) * batch);
  return ad::scale(recon + kl, 1.0 / batch);
}

}  // namespace detail

// Evaluates the model's training loss on the columns of `x` with frozen noise.
inline LossOutput model_loss(const Model& model, const Matrix& x, const LossNoise& noise, LossOptions opts = {}) {
  require_shape(x.rows() == model.data_dim(), "loss input rows");
  if (x.cols() < 1) throw ContractError("loss needs at least one data point");
  ad::Tape tape;
  tape.set_stop_gradient_override(opts.stop_gradient_override);
  detail::ModelVars vars{ad::bind(tape, model.encoder, opts.with_grad), ad::bind(tape, model.decoder, opts.with_grad),
                         opts.with_grad ? tape.variable(model.noise.log_sigma) : tape.constant(model.noise.log_sigma)};
  const Eigen::Index d = model.latent_dim;
  ad::Var loss;
  switch (model.kind) {
    case ModelKind::Vae: loss = detail::vae(tape, vars, d, x, noise); break;
    case ModelKind::FcVae: loss = detail::fcvae(tape, vars, d, x, noise); break;
    case ModelKind::Fif: loss = detail::fif(tape, vars, d, x, noise); break;
    case ModelKind::Five: loss = detail::five(tape, vars, d, x, noise); break;
  }
  LossOutput out;
  out.value = loss.scalar();
  out.stop_gradient_values = tape.stop_gradient_values();
  if (opts.with_grad) {
    tape.backward(loss);
    out.grad = {ad::collect(tape, vars.encoder), ad::collect(tape, vars.decoder), tape.grad(vars.log_sigma)(0, 0)};
  }
  return out;
}

// Single-datum convenience wrappers.
inline double vae_loss(const Model& m, const Vector& x, const Vector& eps) {
  return model_loss(m, Matrix(x), {Matrix(eps), Matrix(0, 1)}, {false}).value;
}
inline double fcvae_loss(const Model& m, const Vector& x, const Vector& eps) { return vae_loss(m, x, eps); }
inline double fif_loss(const Model& m, const Vector& x, const Vector& probe) { return vae_loss(m, x, probe); }
inline double five_loss(const Model& m, const Vector& x, const Vector& eps1, const Vector& eps2) {
  return model_loss(m, Matrix(x), {Matrix(eps2), Matrix(eps1)}, {false}).value;
}

// Exact KL(q(z|x) || N(0, I)) for the Jacobian-factor posterior; log det via Cholesky of f' f'^T.
inline double five_exact_kl(const Model& model, const Vector& x) {
  const Eigen::Index d = model.latent_dim;
  const Vector fx = mlp_forward(model.encoder, x);
  const Matrix jf = jacobian(model.encoder, x);
  const Matrix gram = jf * jf.transpose();
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericalError("encoder Jacobian is rank deficient at this point");
  const double sigma2 = model.noise.sigma() * model.noise.sigma();
  return 0.5 * (fx.squaredNorm() + sigma2 * gram.trace() - static_cast<double>(d) -
                static_cast<double>(d) * std::log(sigma2) - logdet_from_cholesky(llt));
}

// Per-datum objective reported for validation and model selection:
//   vae, fcvae: the training loss (single-sample negative ELBO)
//   fif:        u(x, f(x)) + 1/2 log det(I + J^T J / sigma^2), J = g'(f(x))
//   five:       single-sample reconstruction plus the exact KL
inline double reported_loss(const Model& model, const Matrix& x, const LossNoise& noise) {
  switch (model.kind) {
    case ModelKind::Vae:
    case ModelKind::FcVae: return model_loss(model, x, noise, {false}).value;
    case ModelKind::Fif: {
      const double sigma = model.noise.sigma();
      const Eigen::Index d = model.latent_dim;
      double total = 0.0;
      for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const Vector xk = x.col(k);
        const Vector z = mlp_forward(model.encoder, xk);
        const Matrix j = jacobian(model.decoder, z);
        const Matrix h = Matrix::Identity(d, d) + j.transpose() * j / (sigma * sigma);
        total += gaussian_nll(xk, mlp_forward(model.decoder, z), sigma) + 0.5 * z.squaredNorm() +
                 0.5 * static_cast<double>(d) * kLog2Pi + 0.5 * logdet_spd(h);
      }
      return total / static_cast<double>(x.cols());
    }
    case ModelKind::Five: {
      const double sigma = model.noise.sigma();
      double total = 0.0;
      for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const Vector xk = x.col(k);
        const Vector z = five_posterior_sample(xk, model.encoder, sigma, noise.data.col(k));
        total += gaussian_nll(xk, mlp_forward(model.decoder, z), sigma) + five_exact_kl(model, xk);
      }
      return total / static_cast<double>(x.cols());
    }
  }
  throw ContractError("unknown model kind");
}

}  // namespace fivelab
