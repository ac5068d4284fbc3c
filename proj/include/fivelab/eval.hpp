#pragma once

// Importance-sampling estimates of log p(x) using each model's own q(z|x) as proposal.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "fivelab/errors.hpp"
#include "fivelab/models.hpp"
#include "fivelab/rng.hpp"

namespace fivelab {

// log(mean(exp(values))), shifted by the maximum.
inline double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw ContractError("log_mean_exp of an empty sequence");
  const double m = *std::max_element(values.begin(), values.end());
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc / static_cast<double>(values.size()));
}

struct IsEstimate {
  double log_px = 0.0;
  int k = 0;
  double ess = 0.0;  // 1 / sum of squared normalized weights
};

// log p(x, z) = log N(x; g(z), sigma^2 I) + log N(z; 0, I)
inline double log_joint(const Model& model, const Vector& x, const Vector& z) {
  const double sigma = model.noise.sigma();
  return -gaussian_nll(x, mlp_forward(model.decoder, z), sigma) -
         0.5 * (static_cast<double>(z.size()) * kLog2Pi + z.squaredNorm());
}

inline IsEstimate importance_estimate(std::span<const double> log_weights) {
  IsEstimate est;
  est.k = static_cast<int>(log_weights.size());
  est.log_px = log_mean_exp(log_weights);
  const double m = *std::max_element(log_weights.begin(), log_weights.end());
  double s1 = 0.0;
  double s2 = 0.0;
  for (double w : log_weights) {
    const double e = std::exp(w - m);
    s1 += e;
    s2 += e * e;
  }
  est.ess = s1 * s1 / s2;
  return est;
}

inline IsEstimate is_log_likelihood(const Model& model, const Vector& x, int k, Rng& rng) {
  if (k < 1) throw ContractError("importance sampling needs K >= 1");
  const GaussianPosterior q = posterior_of(model, x);
  std::vector<double> log_w(static_cast<std::size_t>(k));
  if (std::holds_alternative<JacobianFactorCov>(q.repr())) {
    // Factor the Gram covariance once; it is shared by all K draws.
    const auto llt = q.factor_cholesky();
    for (auto& w : log_w) {
      const Vector z = q.sample(rng);
      w = log_joint(model, x, z) - gaussian_logpdf(z, q.mean(), llt);
    }
  } else {
    for (auto& w : log_w) {
      const Vector z = q.sample(rng);
      w = log_joint(model, x, z) - q.log_density(z);
    }
  }
  IsEstimate est = importance_estimate(log_w);
  if (!std::isfinite(est.log_px)) throw NumericalError("non-finite importance-sampling estimate");
  return est;
}

struct DatasetLikelihood {
  double mean_log_px = 0.0;
  std::vector<IsEstimate> rows;
};

// Datum i always uses the stream (seed, i), independent of K and of the other data.
inline DatasetLikelihood dataset_mean_ll(const Model& model, const Matrix& data, int k, std::uint64_t seed,
                                         const std::vector<std::size_t>* indices = nullptr) {
  const std::size_t count = indices ? indices->size() : static_cast<std::size_t>(data.cols());
  if (count == 0) throw DataError("dataset is empty");
  require_shape(data.rows() == model.data_dim(), "dataset dimension differs from model");
  DatasetLikelihood out;
  out.rows.reserve(count);
  double total = 0.0;
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t i = indices ? (*indices)[r] : r;
    Rng rng = make_stream(seed, {0x1e5ULL, i});
    out.rows.push_back(is_log_likelihood(model, data.col(static_cast<Eigen::Index>(i)), k, rng));
    total += out.rows.back().log_px;
  }
  out.mean_log_px = total / static_cast<double>(count);
  return out;
}

// CSV: index,log_px,ess,k
inline void write_likelihood_csv(std::ostream& os, const DatasetLikelihood& ll,
                                 const std::vector<std::size_t>* indices = nullptr) {
  os << "index,log_px,ess,k\n";
  char buf[128];
  for (std::size_t r = 0; r < ll.rows.size(); ++r) {
    const auto& e = ll.rows[r];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%d\n", indices ? (*indices)[r] : r, e.log_px, e.ess, e.k);
    os << buf;
  }
}

}  // namespace fivelab
