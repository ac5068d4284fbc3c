#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "fivelab/errors.hpp"
#include "fivelab/linalg.hpp"

namespace fivelab {

enum class Activation { ReLU, SiLU, Identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::SiLU: return "silu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "silu") return Activation::SiLU;
  if (s == "identity") return Activation::Identity;
  throw ParseError("unknown activation '" + std::string(s) + "'");
}

namespace act {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double value(Activation a, double x) {
  switch (a) {
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::SiLU: return x * logistic(x);
    case Activation::Identity: return x;
  }
  return x;
}

// ReLU'(0) := 0.
inline double deriv(Activation a, double x) {
  switch (a) {
    case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Activation::SiLU: {
      const double s = logistic(x);
      return s + x * s * (1.0 - s);
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

inline double second_deriv(Activation a, double x) {
  if (a != Activation::SiLU) return 0.0;
  const double s = logistic(x);
  return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
}

inline Matrix value(Activation a, const Matrix& x) {
  if (a == Activation::Identity) return x;
  return x.unaryExpr([a](double t) { return value(a, t); });
}

inline Matrix deriv(Activation a, const Matrix& x) {
  return x.unaryExpr([a](double t) { return deriv(a, t); });
}

inline Matrix second_deriv(Activation a, const Matrix& x) {
  return x.unaryExpr([a](double t) { return second_deriv(a, t); });
}

}  // namespace act

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Identity;
};

// Fully-connected network. Parameters flatten layer by layer: weight (row-major), then bias.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  // Zero-initialized network with the given widths; hidden layers use `hidden`,
  // the final layer is Identity.
  static Mlp zeros(const std::vector<int>& widths, Activation hidden) {
    if (widths.size() < 2) throw ContractError("an MLP needs at least input and output widths");
    std::vector<Layer> layers;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      if (widths[k] < 1 || widths[k + 1] < 1) throw ContractError("layer widths must be positive");
      const bool last = k + 2 == widths.size();
      layers.push_back({Matrix::Zero(widths[k + 1], widths[k]), Vector::Zero(widths[k + 1]),
                        last ? Activation::Identity : hidden});
    }
    return Mlp(std::move(layers));
  }

  void validate() const {
    if (layers_.empty()) throw ContractError("MLP has no layers");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& l = layers_[k];
      if (l.bias.size() != l.weight.rows())
        throw ShapeError("layer " + std::to_string(k) + ": bias length differs from weight rows");
      if (k > 0 && l.weight.cols() != layers_[k - 1].weight.rows())
        throw ShapeError("layer " + std::to_string(k) + ": input width does not chain");
      if (!l.weight.allFinite() || !l.bias.allFinite())
        throw DomainError("layer " + std::to_string(k) + ": non-finite parameter");
    }
  }

  Eigen::Index input_dim() const { return layers_.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers_.back().weight.rows(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  bool final_identity() const { return layers_.back().activation == Activation::Identity; }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  Vector flatten() const {
    Vector out(parameter_count());
    Eigen::Index o = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out(o++) = l.weight(r, c);
      out.segment(o, l.bias.size()) = l.bias;
      o += l.bias.size();
    }
    return out;
  }

  // Reads parameter_count() entries starting at `offset`; returns the next offset.
  Eigen::Index assign(const Vector& flat, Eigen::Index offset = 0) {
    require_shape(flat.size() - offset >= parameter_count(), "flat parameter vector too short");
    for (auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(offset++);
      l.bias = flat.segment(offset, l.bias.size());
      offset += l.bias.size();
    }
    return offset;
  }

 private:
  std::vector<Layer> layers_;
};

// Batched forward pass; columns of `x` are independent samples.
inline Matrix mlp_forward(const Mlp& net, const Matrix& x) {
  require_shape(x.rows() == net.input_dim(),
                "network input has " + std::to_string(x.rows()) + " rows, expected " +
                    std::to_string(net.input_dim()));
  Matrix h = x;
  for (const auto& l : net.layers()) {
    Matrix pre = l.weight * h;
    pre.colwise() += l.bias;
    h = act::value(l.activation, pre);
  }
  return h;
}

inline Vector mlp_forward(const Mlp& net, const Vector& x) {
  return mlp_forward(net, Matrix(x)).col(0);
}

// J v by tangent propagation.
inline Vector jvp(const Mlp& net, const Vector& x, const Vector& v) {
  require_shape(x.size() == net.input_dim(), "jvp input");
  require_shape(v.size() == net.input_dim(), "jvp tangent");
  Vector h = x;
  Vector t = v;
  for (const auto& l : net.layers()) {
    Vector pre = l.weight * h + l.bias;
    t = act::deriv(l.activation, Matrix(pre)).col(0).cwiseProduct(l.weight * t);
    h = act::value(l.activation, Matrix(pre)).col(0);
  }
  return t;
}

// u^T J by reverse accumulation.
inline Vector vjp(const Mlp& net, const Vector& x, const Vector& u) {
  require_shape(x.size() == net.input_dim(), "vjp input");
  require_shape(u.size() == net.output_dim(), "vjp cotangent");
  std::vector<Vector> pre;
  Vector h = x;
  for (const auto& l : net.layers()) {
    pre.push_back(l.weight * h + l.bias);
    h = act::value(l.activation, Matrix(pre.back())).col(0);
  }
  Vector g = u;
  for (std::size_t k = net.layers().size(); k-- > 0;) {
    const auto& l = net.layers()[k];
    g = l.weight.transpose() * act::deriv(l.activation, Matrix(pre[k])).col(0).cwiseProduct(g);
  }
  return g;
}

// Exact Jacobian (output_dim x input_dim) from whichever of JVP/VJP needs fewer passes.
inline Matrix jacobian(const Mlp& net, const Vector& x) {
  const Eigen::Index n_in = net.input_dim();
  const Eigen::Index n_out = net.output_dim();
  require_shape(x.size() == n_in, "jacobian input");
  std::vector<Vector> slope;
  Vector h = x;
  for (const auto& l : net.layers()) {
    Vector pre = l.weight * h + l.bias;
    slope.push_back(act::deriv(l.activation, Matrix(pre)).col(0));
    h = act::value(l.activation, Matrix(pre)).col(0);
  }
  // All n_in JVPs (or n_out VJPs) at once, sharing one forward pass.
  if (n_in <= n_out) {
    Matrix t = Matrix::Identity(n_in, n_in);
    for (std::size_t k = 0; k < slope.size(); ++k)
      t = slope[k].asDiagonal() * (net.layers()[k].weight * t);
    return t;
  }
  Matrix g = Matrix::Identity(n_out, n_out);
  for (std::size_t k = slope.size(); k-- > 0;)
    g = net.layers()[k].weight.transpose() * (slope[k].asDiagonal() * g);
  return g.transpose();
}

// Network adapter exposing value/jacobian, the interface geometry routines expect.
struct NetMap {
  const Mlp* net;
  Vector value(const Vector& z) const { return mlp_forward(*net, z); }
  Matrix jacobian(const Vector& z) const { return fivelab::jacobian(*net, z); }
};

}  // namespace fivelab
