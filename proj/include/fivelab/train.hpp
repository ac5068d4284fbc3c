#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fivelab/data.hpp"
#include "fivelab/errors.hpp"
#include "fivelab/losses.hpp"
#include "fivelab/models.hpp"
#include "fivelab/rng.hpp"

namespace fivelab {

struct ModelConfig {
  ModelKind model = ModelKind::Five;
  std::string dataset = "paraboloid";  // paraboloid | linear_gauss | mnist | csv
  std::size_t data_size = 10000;
  double data_noise = 0.2;
  std::vector<double> data_cov_diag{4.0, 2.0, 1.0};
  std::string data_path;
  std::string labels_path;

  Eigen::Index latent_dim = 2;
  std::vector<int> hidden_dims{256, 256};
  Activation activation = Activation::SiLU;
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::size_t batch_size = 50;
  int epochs = 100;
  std::uint64_t seed = 0;
  double sigma_init = 0.1;
  bool sigma_frozen = false;
  std::size_t val_size = 1000;
  std::size_t test_size = 0;
  int k_importance = 100;
  ProbeDist probe_dist = ProbeDist::Rademacher;
  double init_gain = 1.0;
  bool serial = true;  // serial runs write seconds=0 so metrics files are reproducible

  void validate() const {
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(sigma_init > 0.0)) throw ConfigError("sigma_init must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (k_importance < 1) throw ConfigError("k_importance must be >= 1");
    if (!(init_gain > 0.0)) throw ConfigError("init_gain must be > 0");
    for (int h : hidden_dims)
      if (h < 1) throw ConfigError("hidden_dims entries must be >= 1");
  }
};

// Q of a Gaussian matrix's QR with the signs of diag(R) folded in, shaped rows x cols.
inline Matrix orthogonal_init(Eigen::Index rows, Eigen::Index cols, double gain, Rng& rng) {
  if (rows < 1 || cols < 1) throw DomainError("orthogonal_init: shape must be positive");
  const Eigen::Index big = std::max(rows, cols);
  const Eigen::Index small = std::min(rows, cols);
  const Matrix a = standard_normal(big, small, rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  const Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < small; ++k)
    if (r(k, k) < 0.0) q.col(k) = -q.col(k);
  if (rows < cols) q.transposeInPlace();
  return gain * q;
}

inline void orthogonal_init(Mlp& net, double gain, Rng& rng) {
  Vector flat = net.flatten();
  Eigen::Index o = 0;
  for (const auto& l : net.layers()) {
    const Matrix w = orthogonal_init(l.weight.rows(), l.weight.cols(), gain, rng);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat(o++) = w(r, c);
    flat.segment(o, l.bias.size()).setZero();
    o += l.bias.size();
  }
  net.assign(flat, 0);
}

inline Model init_model(const ModelConfig& cfg, Eigen::Index data_dim) {
  Model m = make_model(cfg.model, data_dim, cfg.latent_dim, cfg.hidden_dims, cfg.activation, std::log(cfg.sigma_init));
  Rng rng = make_stream(cfg.seed, {0x1a17ULL});
  orthogonal_init(m.encoder, cfg.init_gain, rng);
  orthogonal_init(m.decoder, cfg.init_gain, rng);
  return m;
}

// Named slice of a flat parameter vector.
struct ParamBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
  bool trainable = true;
  bool decay = true;
};

inline std::vector<ParamBlock> parameter_blocks(const Model& m, bool sigma_frozen) {
  std::vector<ParamBlock> blocks;
  Eigen::Index o = 0;
  auto add_net = [&](const Mlp& net, const std::string& prefix) {
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
      const auto& l = net.layers()[k];
      blocks.push_back({prefix + ".layer" + std::to_string(k) + ".weight", o, l.weight.size()});
      o += l.weight.size();
      blocks.push_back({prefix + ".layer" + std::to_string(k) + ".bias", o, l.bias.size()});
      o += l.bias.size();
    }
  };
  add_net(m.encoder, "encoder");
  add_net(m.decoder, "decoder");
  blocks.push_back({"log_sigma", o, 1, !sigma_frozen, false});
  return blocks;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied after the Adam update
};

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t step = 0;

  static AdamState zeros(Eigen::Index size) { return {Vector::Zero(size), Vector::Zero(size), 0}; }
};

inline void check_gradient(const Vector& grad, const std::vector<ParamBlock>& blocks) {
  for (const auto& b : blocks)
    if (!grad.segment(b.offset, b.size).allFinite())
      throw NumericalError("non-finite gradient in parameter block '" + b.name + "'");
}

inline void adam_step(AdamState& state, Vector& params, const Vector& grad, const AdamConfig& cfg,
                      const std::vector<ParamBlock>& blocks) {
  require_shape(grad.size() == params.size() && state.m.size() == params.size() && state.v.size() == params.size(),
                "adam_step shapes");
  check_gradient(grad, blocks);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& b : blocks) {
    if (!b.trainable) continue;
    auto m = state.m.segment(b.offset, b.size);
    auto v = state.v.segment(b.offset, b.size);
    auto p = params.segment(b.offset, b.size);
    const auto g = grad.segment(b.offset, b.size);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
    if (b.decay && cfg.weight_decay > 0.0) p *= 1.0 - cfg.lr * cfg.weight_decay;
  }
}

inline void adam_step(AdamState& state, Vector& params, const Vector& grad, const AdamConfig& cfg) {
  adam_step(state, params, grad, cfg, {{"params", 0, params.size()}});
}

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double sigma = 0.0;
  double seconds = 0.0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << "epoch,train_loss,val_loss,sigma,seconds\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.6f\n", r.epoch, r.train_loss, r.val_loss, r.sigma,
                  r.seconds);
    os << buf;
  }
}

struct BestRecord {
  int epoch = 0;
  double value = std::numeric_limits<double>::infinity();
  std::optional<Model> snapshot;  // deep copy
};

// Strict improvement only, so ties keep the earliest epoch. The snapshot is a copy.
inline bool update_best(BestRecord& best, int epoch, double value, const Model& model) {
  if (!(value < best.value)) return false;
  best.epoch = epoch;
  best.value = value;
  best.snapshot = model;
  return true;
}

struct TrainState {
  Model model;
  AdamState adam;
  BestRecord best;
};

struct TrainResult {
  Model best_model;
  Model final_model;
  int best_epoch = 0;
  double best_value = 0.0;
  std::vector<MetricsRow> metrics;
  Split split;
};

// Validation objective; equals the mean training loss when there is no validation set.
inline double validation_loss(const Model& model, const Matrix& x_val, const LossNoise& noise) {
  return reported_loss(model, x_val, noise);
}

inline TrainResult train_model(const ModelConfig& cfg, const Dataset& ds) {
  cfg.validate();
  auto [split, schedule] = split_and_batch(ds, cfg.val_size, cfg.batch_size, cfg.seed, cfg.test_size);
  TrainState st{init_model(cfg, ds.dim()), {}, {}};
  const auto blocks = parameter_blocks(st.model, cfg.sigma_frozen);
  st.adam = AdamState::zeros(st.model.parameter_count());
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  const Matrix x_val = gather_columns(ds.x, split.val);
  LossNoise val_noise;
  if (!split.val.empty()) {
    Rng rng = make_stream(cfg.seed, {0x7a1dULL});
    val_noise = draw_loss_noise(st.model, x_val.cols(), cfg.probe_dist, rng);
  }

  TrainResult out;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = schedule.epoch(static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const Matrix xb = gather_columns(ds.x, batches[step]);
      Rng rng = make_stream(cfg.seed, {0x7a1ULL, static_cast<std::uint64_t>(epoch), step});
      const LossNoise noise = draw_loss_noise(st.model, xb.cols(), cfg.probe_dist, rng);
      const LossOutput lo = model_loss(st.model, xb, noise);
      if (!std::isfinite(lo.value))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      Vector params = st.model.flatten();
      try {
        adam_step(st.adam, params, lo.grad.flatten(), adam, blocks);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(step));
      }
      st.model.assign(params);
      loss_sum += lo.value * static_cast<double>(xb.cols());
      seen += static_cast<std::size_t>(xb.cols());
    }
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.val_loss = split.val.empty() ? row.train_loss : validation_loss(st.model, x_val, val_noise);
    if (!std::isfinite(row.val_loss))
      throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    row.sigma = st.model.noise.sigma();
    row.seconds = cfg.serial ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.metrics.push_back(row);
    update_best(st.best, epoch, row.val_loss, st.model);
  }
  out.best_model = *st.best.snapshot;
  out.final_model = st.model;
  out.best_epoch = st.best.epoch;
  out.best_value = st.best.value;
  out.split = std::move(split);
  return out;
}

// ---- linear FIVE on population expectations ----
//
// Encoder f(x) = V^T x, decoder g(z) = W z, V and W are n x d, x ~ (0, Sigma_x).
// With A = I - W V^T the expected loss is (up to constants)
//   tr(A S A^T) / 2s^2 + tr(W V^T V W^T) / 2 + tr(V^T S V) / 2 + s^2 tr(V^T V) / 2 - tr(V^T SG[W]).

struct LinearFiveGrad {
  Matrix w;
  Matrix v;
  double norm() const { return std::sqrt(w.squaredNorm() + v.squaredNorm()); }
};

inline double linear_five_loss(const Matrix& cov, const Matrix& w, const Matrix& v, double sigma) {
  const Eigen::Index n = cov.rows();
  const Matrix a = Matrix::Identity(n, n) - w * v.transpose();
  const double s2 = sigma * sigma;
  return (a * cov * a.transpose()).trace() / (2.0 * s2) + 0.5 * (w * v.transpose() * v * w.transpose()).trace() +
         0.5 * (v.transpose() * cov * v).trace() + 0.5 * s2 * v.squaredNorm() - (v.transpose() * w).trace();
}

inline LinearFiveGrad linear_five_grad(const Matrix& cov, const Matrix& w, const Matrix& v, double sigma) {
  const Eigen::Index n = cov.rows();
  const double s2 = sigma * sigma;
  const Matrix a = Matrix::Identity(n, n) - w * v.transpose();
  return {-a * cov * v / s2 + w * (v.transpose() * v),
          -cov * a.transpose() * w / s2 + v * (w.transpose() * w) + cov * v + s2 * v - w};
}

struct LinearFiveFit {
  Matrix w;
  Matrix v;
  int steps = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

inline constexpr double kLinearFitTolerance = 1e-6;

// Full-batch gradient descent from a small random start. lr <= 0 picks a step from a
// curvature bound of the loss at the expected optimum scale.
inline LinearFiveFit fit_linear_five(const Matrix& cov, Eigen::Index d, double sigma, int steps, double lr, Rng& rng,
                                     double init_scale = 0.5) {
  const Eigen::Index n = cov.rows();
  if (cov.cols() != n) throw ShapeError("fit_linear_five: covariance must be square");
  if (!is_symmetric(cov) || Eigen::LLT<Matrix>(cov).info() != Eigen::Success)
    throw DomainError("fit_linear_five: covariance must be SPD");
  if (d < 1 || d > n) throw DomainError("fit_linear_five: need 1 <= d <= n");
  if (!(sigma > 0.0)) throw DomainError("fit_linear_five: sigma must be positive");
  if (steps < 1) throw DomainError("fit_linear_five: steps must be positive");
  if (lr <= 0.0) {
    const double lmax = sym_eigen(cov).values.maxCoeff();
    lr = 0.5 / (lmax * lmax / (sigma * sigma) + 3.0 * lmax + sigma * sigma + 1.0);
  }
  LinearFiveFit fit{init_scale * standard_normal(n, d, rng), init_scale * standard_normal(n, d, rng)};
  for (fit.steps = 0; fit.steps < steps; ++fit.steps) {
    const LinearFiveGrad g = linear_five_grad(cov, fit.w, fit.v, sigma);
    fit.grad_norm = g.norm();
    if (!std::isfinite(fit.grad_norm)) throw NumericalError("fit_linear_five diverged; lower the step size");
    if (fit.grad_norm <= kLinearFitTolerance) {
      fit.converged = true;
      return fit;
    }
    fit.w -= lr * g.w;
    fit.v -= lr * g.v;
  }
  fit.grad_norm = linear_five_grad(cov, fit.w, fit.v, sigma).norm();
  fit.converged = fit.grad_norm <= kLinearFitTolerance;
  return fit;
}

}  // namespace fivelab
