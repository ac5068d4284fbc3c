#pragma once

// Oracle suites shared by the command-line tool and the acceptance binary.
// Each check reports a name, a verdict and the measured values.

#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fivelab/eval.hpp"
#include "fivelab/geometry.hpp"
#include "fivelab/losses.hpp"
#include "fivelab/models.hpp"
#include "fivelab/train.hpp"

namespace fivelab {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string measured;
};

inline bool all_pass(const std::vector<CheckResult>& rs) {
  for (const auto& r : rs)
    if (!r.pass) return false;
  return true;
}

inline std::string fmtg(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ---- linear FIVE optima ----

// Gradient descent on the scalar loss for lambda in {1, 4}, sigma^2 in {0.01, 1}, 10 random starts each.
inline std::vector<CheckResult> oracle_lemma1(std::uint64_t seed, std::string* trace = nullptr) {
  std::vector<CheckResult> out;
  for (double lambda : {1.0, 4.0}) {
    for (double s2 : {0.01, 1.0}) {
      const double sigma = std::sqrt(s2);
      const LinearFiveOptimum opt = linear_five_closed_form(lambda, sigma);
      Rng rng = make_stream(seed, {0x1e1ULL, static_cast<std::uint64_t>(lambda), static_cast<std::uint64_t>(s2 * 100)});
      double worst = 0.0;
      bool signs_ok = true;
      bool converged = true;
      for (int r = 0; r < 10; ++r) {
        const LinearFiveFit fit = fit_linear_five(Matrix::Constant(1, 1, lambda), 1, sigma, 2'000'000, 0.0, rng);
        const double w = fit.w(0, 0);
        const double v = fit.v(0, 0);
        const double s = w >= 0.0 ? 1.0 : -1.0;
        signs_ok = signs_ok && (v >= 0.0) == (w >= 0.0);
        converged = converged && fit.converged;
        worst = std::max({worst, std::abs(w - s * opt.w), std::abs(v - s * opt.v)});
        if (trace) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%g,%g,%d,%d,%.17g,%.17g\n", lambda, s2, r, fit.steps, w, v);
          *trace += buf;
        }
      }
      out.push_back({"lemma1 lambda=" + fmtg(lambda) + " sigma2=" + fmtg(s2), worst < 1e-3 && signs_ok && converged,
                     "max_abs_err=" + fmtg(worst, 3) + " target=(+-" + fmtg(opt.w) + ", +-" + fmtg(opt.v) +
                         ") same_sign=" + (signs_ok ? "yes" : "no") + " converged=" + (converged ? "yes" : "no")});
    }
  }
  return out;
}

struct SortedEigen {
  Vector values;  // descending
  Matrix vectors;
};

inline SortedEigen sorted_eigen(const Matrix& s) {
  const SymEigen e = sym_eigen(s);
  const Eigen::Index n = s.rows();
  SortedEigen out{Vector(n), Matrix(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = e.values(n - 1 - k);
    out.vectors.col(k) = e.vectors.col(n - 1 - k);
  }
  return out;
}

// Rotation recovered from W and from V at the claimed optimum; both should be orthogonal and equal.
struct LinearOptimumCheck {
  double cov_err = 0.0;      // ||W W^T - Sigma_x||_F (only for d = n)
  double rv_sv_dev = 0.0;    // max |s - 1| over singular values of (s^2 I + L) L^{-1/2} U_S^T V
  double rw_sv_dev = 0.0;    // same for L^{-1/2} U_S^T W
  double rotation_gap = 0.0; // ||R_W - R_V||_F
  Vector literal_sv;         // singular values of V^T U_S L^{1/2} (s^2 I + L)^{-1}
};

inline double max_sv_dev(const Matrix& m) {
  return (Eigen::JacobiSVD<Matrix>(m).singularValues().array() - 1.0).abs().maxCoeff();
}

inline LinearOptimumCheck check_linear_optimum(const Matrix& cov, const Matrix& w, const Matrix& v, double sigma) {
  const Eigen::Index d = w.cols();
  const SortedEigen e = sorted_eigen(cov);
  const Matrix us = e.vectors.leftCols(d);
  const Vector ls = e.values.head(d);
  const Vector shrink = (ls.array() + sigma * sigma).matrix();
  const Matrix rw = ls.cwiseSqrt().cwiseInverse().asDiagonal() * (us.transpose() * w);
  const Matrix rv = (shrink.array() / ls.array().sqrt()).matrix().asDiagonal() * (us.transpose() * v);
  LinearOptimumCheck c;
  c.cov_err = (w * w.transpose() - cov).norm();
  c.rv_sv_dev = max_sv_dev(rv);
  c.rw_sv_dev = max_sv_dev(rw);
  c.rotation_gap = (rw - rv).norm();
  const Matrix literal = v.transpose() * us * (ls.cwiseSqrt().array() / shrink.array()).matrix().asDiagonal();
  c.literal_sv = Eigen::JacobiSVD<Matrix>(literal).singularValues();
  return c;
}

inline std::vector<CheckResult> oracle_theorem3(std::uint64_t seed, std::string* trace = nullptr) {
  std::vector<CheckResult> out;
  {
    const Matrix cov = Vector{{4.0, 2.0, 1.0}}.asDiagonal();
    Rng rng = make_stream(seed, {0x7e3ULL});
    const LinearFiveFit fit = fit_linear_five(cov, 3, 0.1, 2'000'000, 0.0, rng);
    const LinearOptimumCheck c = check_linear_optimum(cov, fit.w, fit.v, 0.1);
    out.push_back({"linear WW^T=Sigma_x", fit.converged && c.cov_err < 1e-2,
                   "frob_err=" + fmtg(c.cov_err, 3) + " steps=" + std::to_string(fit.steps) +
                       " grad_norm=" + fmtg(fit.grad_norm, 3)});
    std::ostringstream lit;
    lit << c.literal_sv.transpose();
    out.push_back({"linear V=U L^1/2 (s^2+L)^-1 R with R orthogonal",
                   fit.converged && c.rv_sv_dev < 1e-2 && c.rw_sv_dev < 1e-2 && c.rotation_gap < 1e-2,
                   "sv_dev_V=" + fmtg(c.rv_sv_dev, 3) + " sv_dev_W=" + fmtg(c.rw_sv_dev, 3) +
                       " |R_W-R_V|=" + fmtg(c.rotation_gap, 3) + " literal_product_sv=[" + lit.str() + "]"});
    if (trace) {
      std::ostringstream os;
      os.precision(17);
      os << fit.w.reshaped().transpose() << "\n" << fit.v.reshaped().transpose() << "\n";
      *trace += os.str();
    }
  }
  {
    // Subspace selection with d < n.
    const Matrix cov = Vector{{9.0, 4.0, 1.0}}.asDiagonal();
    Rng rng = make_stream(seed, {0x1e2ULL});
    const LinearFiveFit fit = fit_linear_five(cov, 1, 0.1, 2'000'000, 0.0, rng);
    const Vector w = fit.w.col(0);
    const double angle = std::acos(std::min(1.0, std::abs(w(0)) / w.norm()));
    const double norm2 = w.squaredNorm();
    out.push_back({"subspace top-eigenvector selection", fit.converged && angle < 1e-2 && std::abs(norm2 - 9.0) <= 0.05,
                   "angle=" + fmtg(angle, 3) + " |W|^2=" + fmtg(norm2, 8) + " steps=" + std::to_string(fit.steps)});
  }
  return out;
}

// ---- Hutchinson estimator ----

// One probe of tr(f'(x) g'(z)): (f'(x)^T v) . (g'(z) v).
inline double hutchinson_sample(const Mlp& f, const Mlp& g, const Vector& x, const Vector& z, const Vector& v) {
  return vjp(f, x, v).dot(jvp(g, z, v));
}

inline Mlp random_mlp(const std::vector<int>& widths, Activation act, double scale, Rng& rng) {
  Mlp net = Mlp::zeros(widths, act);
  net.assign(scale * standard_normal(net.parameter_count(), rng), 0);
  return net;
}

inline std::vector<CheckResult> oracle_hutchinson(std::uint64_t seed, int probes = 100000) {
  std::vector<CheckResult> out;
  for (int d : {2, 4, 6}) {
    for (ProbeDist dist : {ProbeDist::Rademacher, ProbeDist::Gaussian}) {
      Rng rng = make_stream(seed, {0x4c7ULL, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(dist)});
      const int n = d + 2;
      const Mlp f = random_mlp({n, d}, Activation::Identity, 0.7, rng);
      const Mlp g = random_mlp({d, n}, Activation::Identity, 0.7, rng);
      const Vector x = standard_normal(n, rng);
      const Vector z = mlp_forward(f, x);
      const double exact = (jacobian(f, x) * jacobian(g, z)).trace();
      double sum = 0.0;
      double sum2 = 0.0;
      for (int k = 0; k < probes; ++k) {
        const Vector v = draw_probes(d, 1, dist, rng);
        const double e = hutchinson_sample(f, g, x, z, v);
        sum += e;
        sum2 += e * e;
      }
      const double mean = sum / probes;
      const double se = std::sqrt(std::max(0.0, sum2 / probes - mean * mean) / (probes - 1));
      const double dev = std::abs(mean - exact);
      out.push_back({"hutchinson d=" + std::to_string(d) + " " + std::string(to_string(dist)),
                     dev <= 3.0 * se + 1e-12 * (1.0 + std::abs(exact)),
                     "mean=" + fmtg(mean, 8) + " exact=" + fmtg(exact, 8) + " se=" + fmtg(se, 3) +
                         " z=" + fmtg(se > 0 ? dev / se : 0.0, 3)});
    }
  }
  return out;
}

// ---- finite-difference gradient check ----

struct GradCheckReport {
  double max_rel_err = 0.0;
  Eigen::Index worst = -1;
  Vector analytic;
  Vector numeric;
};

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckFloor = 1e-6;

// Central differences with all noise and the stop-gradient values of the base point held fixed.
// Relative error |a - f| / max(|a|, |f|, floor).
inline GradCheckReport gradient_check(const Model& model, const Matrix& x, const LossNoise& noise,
                                      double h = kGradCheckStep, double floor = kGradCheckFloor) {
  const LossOutput base = model_loss(model, x, noise);
  GradCheckReport rep;
  rep.analytic = base.grad.flatten();
  const Vector theta = model.flatten();
  rep.numeric.resize(theta.size());
  Model probe = model;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Vector t = theta;
    t(k) = theta(k) + h;
    probe.assign(t);
    const double fp = model_loss(probe, x, noise, {false, &base.stop_gradient_values}).value;
    t(k) = theta(k) - h;
    probe.assign(t);
    const double fm = model_loss(probe, x, noise, {false, &base.stop_gradient_values}).value;
    rep.numeric(k) = (fp - fm) / (2.0 * h);
    const double a = rep.analytic(k);
    const double f = rep.numeric(k);
    const double rel = std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
    if (rel > rep.max_rel_err || rep.worst < 0) {
      rep.max_rel_err = rel;
      rep.worst = k;
    }
  }
  return rep;
}

struct GradCheckCase {
  Eigen::Index n;
  Eigen::Index d;
  std::vector<int> hidden;
  Eigen::Index batch;
};

inline Model random_model(ModelKind kind, const GradCheckCase& c, Rng& rng) {
  Model m = make_model(kind, c.n, c.d, c.hidden, Activation::SiLU, std::log(0.7));
  Vector theta = 0.5 * standard_normal(m.parameter_count(), rng);
  theta(theta.size() - 1) = std::log(0.7);
  m.assign(theta);
  return m;
}

inline std::vector<CheckResult> oracle_gradcheck(std::uint64_t seed, std::string* trace = nullptr) {
  std::vector<CheckResult> out;
  const std::vector<GradCheckCase> cases{{5, 2, {7}, 3}, {8, 4, {6}, 2}, {3, 1, {5, 4}, 3}};
  for (ModelKind kind : {ModelKind::Vae, ModelKind::FcVae, ModelKind::Fif, ModelKind::Five}) {
    double worst = 0.0;
    Eigen::Index params = 0;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
      Rng rng = make_stream(seed, {0x6c7ULL, static_cast<std::uint64_t>(kind), ci});
      const Model m = random_model(kind, cases[ci], rng);
      const Matrix x = standard_normal(cases[ci].n, cases[ci].batch, rng);
      const LossNoise noise = draw_loss_noise(m, x.cols(), ProbeDist::Gaussian, rng);
      const GradCheckReport rep = gradient_check(m, x, noise);
      worst = std::max(worst, rep.max_rel_err);
      params += rep.analytic.size();
      if (trace) {
        std::ostringstream os;
        os.precision(17);
        os << to_string(kind) << "," << ci << "," << rep.analytic.transpose() << "\n";
        *trace += os.str();
      }
    }
    out.push_back({"gradcheck " + std::string(to_string(kind)), worst < 1e-4,
                   "max_rel_err=" + fmtg(worst, 3) + " params=" + std::to_string(params)});
  }
  return out;
}

// ---- importance sampling on the linear-Gaussian model ----

// Analytic log N(x; 0, W W^T + sigma^2 I).
inline double linear_gaussian_log_marginal(const Matrix& w, double sigma, const Vector& x) {
  const Matrix c = w * w.transpose() + sigma * sigma * Matrix::Identity(w.rows(), w.rows());
  return gaussian_logpdf(x, Vector::Zero(x.size()), cholesky_spd(c, "marginal covariance"));
}

// FC-VAE with linear nets whose q(z|x) is the exact posterior of x = W z + sigma eps.
// `mean_shift` and `log_cov_scale` perturb the proposal away from the posterior.
inline Model exact_posterior_fcvae(const Matrix& w, double sigma, double mean_shift = 0.0, double log_cov_scale = 1.0) {
  const Eigen::Index n = w.rows();
  const Eigen::Index d = w.cols();
  Model m = make_model(ModelKind::FcVae, n, d, {}, Activation::Identity, std::log(sigma));
  const double s2 = sigma * sigma;
  const Matrix post = (Matrix::Identity(d, d) + w.transpose() * w / s2).inverse();
  const Matrix log_post = sym_function(sym_eigen(0.5 * (post + post.transpose())), [](double l) { return std::log(l); });
  Matrix a = log_cov_scale * log_post;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) *= 2.0;
  auto& enc = m.encoder.layers().front();
  enc.weight.setZero();
  enc.weight.topRows(d) = post * w.transpose() / s2;
  enc.bias.head(d).setConstant(mean_shift);
  enc.bias.tail(packed_lower_size(d)) = pack_lower(a);
  auto& dec = m.decoder.layers().front();
  dec.weight = w;
  dec.bias.setZero();
  return m;
}

inline std::vector<CheckResult> oracle_importance(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng = make_stream(seed, {0x15ULL});
  const Eigen::Index n = 5;
  const Eigen::Index d = 3;
  const double sigma = 0.5;
  const Matrix w = standard_normal(n, d, rng);
  const Matrix c = w * w.transpose() + sigma * sigma * Matrix::Identity(n, n);
  const Matrix x = Matrix(Eigen::LLT<Matrix>(c).matrixL()) * standard_normal(n, 200, rng);
  Vector exact(x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) exact(i) = linear_gaussian_log_marginal(w, sigma, x.col(i));
  {
    const Model m = exact_posterior_fcvae(w, sigma);
    const DatasetLikelihood ll = dataset_mean_ll(m, x, 1, seed);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.cols(); ++i)
      worst = std::max(worst, std::abs(ll.rows[static_cast<std::size_t>(i)].log_px - exact(i)));
    out.push_back({"importance exact proposal K=1", worst < 1e-8, "max_abs_err=" + fmtg(worst, 3)});
  }
  {
    const Model m = exact_posterior_fcvae(w, sigma, 0.03, 1.1);
    const DatasetLikelihood ll = dataset_mean_ll(m, x, 1000, seed);
    const double err = std::abs(ll.mean_log_px - exact.mean());
    out.push_back({"importance perturbed proposal K=1000", err < 1e-3,
                   "mean=" + fmtg(ll.mean_log_px, 10) + " exact=" + fmtg(exact.mean(), 10) + " err=" + fmtg(err, 3)});
  }
  return out;
}

// ---- FC-VAE covariance parameterization ----

inline std::vector<CheckResult> oracle_fcvae(std::uint64_t seed, int trials = 1000) {
  Rng rng = make_stream(seed, {0xfcULL});
  std::uniform_int_distribution<int> dim(1, 6);
  double min_eig = std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int d = dim(rng);
    const Matrix a = standard_normal(d, d, rng);
    const SpdCov c = fcvae_cov(a);
    const Vector eig = sym_eigen(c.cov).values;
    min_eig = std::min(min_eig, eig.minCoeff());
    worst = std::max(worst, std::abs(eig.array().log().sum() - c.logdet));
  }
  return {{"fcvae expm positive definite", min_eig > 0.0, "min_eigenvalue=" + fmtg(min_eig, 3)},
          {"fcvae log det = tr(M)", worst < 1e-10, "max_abs_err=" + fmtg(worst, 3)}};
}

// ---- Lie brackets and involutivity ----

inline Matrix contact_frame(const Vector& p) {
  Matrix f = Matrix::Zero(3, 2);
  f << 1.0, 0.0, 0.0, 1.0, p(1), 0.0;
  return f;
}

inline Matrix cylindrical_frame(const Vector& p) {
  const double r = std::hypot(p(0), p(1));
  Matrix f = Matrix::Zero(3, 3);
  f.col(0) << p(0) / r, p(1) / r, 0.0;
  f.col(1) << -p(1) / r, p(0) / r, 0.0;
  f.col(2) << 0.0, 0.0, 1.0;
  return f;
}

inline Matrix polar_frame(const Vector& p) {
  const double r = p.norm();
  Matrix f(2, 2);
  f << p(0) / r, -p(1) / r, p(1) / r, p(0) / r;
  return f;
}

inline Matrix sine_frame(const Vector& p) {
  Matrix f = Matrix::Zero(3, 2);
  f << 1.0, 0.0, 0.0, 1.0, std::sin(p(1)), 0.0;
  return f;
}

inline std::vector<CheckResult> oracle_involutivity(double h = kDefaultBracketStep) {
  std::vector<CheckResult> out;
  const std::vector<Vector> points{Vector{{0.7, 0.4, -0.3}}, Vector{{-1.2, 0.9, 0.5}}, Vector{{0.3, -1.5, 2.0}}};
  const double tol = 10.0 * h * h;
  {
    const Matrix fixed = Matrix{{1.0, 0.2, 0.0}, {0.0, 1.0, 0.3}, {0.5, 0.0, 1.0}};
    auto constant = [&](const Vector&) { return fixed; };
    double worst = 0.0;
    for (const auto& p : points)
      for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = i + 1; j < 3; ++j) worst = std::max(worst, involutivity_residual(constant, p, i, j, h));
    out.push_back({"involutivity constant frame", worst <= tol, "max_residual=" + fmtg(worst, 3)});
  }
  {
    double worst = 0.0;
    for (const auto& p : points) {
      for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = i + 1; j < 3; ++j)
          worst = std::max(worst, involutivity_residual(cylindrical_frame, p, i, j, h));
      worst = std::max(worst, involutivity_residual(polar_frame, Vector(p.head(2)), 0, 1, h));
    }
    out.push_back({"involutivity polar frames", worst <= tol, "max_residual=" + fmtg(worst, 3)});
  }
  {
    double worst = 0.0;
    for (const Vector& p : {Vector{{0.0, 0.0, 0.0}}, Vector{{0.8, 0.0, -1.1}}, Vector{{-2.0, 0.0, 3.0}}})
      worst = std::max(worst, std::abs(involutivity_residual(contact_frame, p, 0, 1, h) - 1.0));
    out.push_back({"involutivity contact frame", worst <= 5.0 * h * h, "max_abs(residual-1)=" + fmtg(worst, 3)});
  }
  {
    // Exact residual |cos y| / sqrt(1 + sin^2 y); central differences shrink cos y by sin(h)/h.
    const Vector p{{0.2, 0.7, -0.4}};
    const double exact = std::abs(std::cos(p(1))) / std::sqrt(1.0 + std::sin(p(1)) * std::sin(p(1)));
    const double coarse = 1e-2;
    const double e1 = std::abs(involutivity_residual(sine_frame, p, 0, 1, coarse) - exact);
    const double e2 = std::abs(involutivity_residual(sine_frame, p, 0, 1, coarse / 2) - exact);
    const double ratio = e1 / e2;
    out.push_back({"involutivity order-h^2 convergence", ratio > 3.6 && ratio < 4.4,
                   "err(h)=" + fmtg(e1, 3) + " err(h/2)=" + fmtg(e2, 3) + " ratio=" + fmtg(ratio, 4)});
  }
  return out;
}

inline std::vector<CheckResult> run_oracle(const std::string& which, std::uint64_t seed) {
  if (which == "lemma1") return oracle_lemma1(seed);
  if (which == "theorem3") return oracle_theorem3(seed);
  if (which == "hutchinson") return oracle_hutchinson(seed);
  if (which == "gradcheck") return oracle_gradcheck(seed);
  if (which == "importance") return oracle_importance(seed);
  if (which == "fcvae") return oracle_fcvae(seed);
  if (which == "involutivity") return oracle_involutivity();
  throw ConfigError("unknown oracle '" + which + "'");
}

inline void print_checks(std::ostream& os, const std::vector<CheckResult>& rs) {
  for (const auto& r : rs) os << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.measured << "\n";
}

}  // namespace fivelab
