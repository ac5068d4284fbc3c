#pragma once

// Networks on the tape: forward pass, tangent propagation (JVP) and
// reverse accumulation (VJP), all composed from differentiable tape
// operations so that parameter gradients flow through Jacobian products.

#include <vector>

#include "fivelab/mlp.hpp"
#include "fivelab/tape.hpp"

namespace fivelab::ad {

struct NetVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
  std::vector<Activation> activations;
};

inline NetVars bind(Tape& tape, const Mlp& net, bool trainable) {
  NetVars vars;
  for (const auto& l : net.layers()) {
    vars.weights.push_back(trainable ? tape.variable(l.weight) : tape.constant(l.weight));
    vars.biases.push_back(trainable ? tape.variable(Matrix(l.bias)) : tape.constant(Matrix(l.bias)));
    vars.activations.push_back(l.activation);
  }
  return vars;
}

inline Var forward(const NetVars& net, Var x) {
  Var h = x;
  for (std::size_t k = 0; k < net.weights.size(); ++k)
    h = activate(add_bias(matmul(net.weights[k], h), net.biases[k]), net.activations[k]);
  return h;
}

struct DualVar {
  Var value;
  Var tangent;
};

// Forward pass together with J * tangent (column-wise).
inline DualVar forward_jvp(const NetVars& net, Var x, Var tangent) {
  require_shape(x.rows() == tangent.rows() && x.cols() == tangent.cols(), "jvp tangent");
  Var h = x;
  Var t = tangent;
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    Var pre = add_bias(matmul(net.weights[k], h), net.biases[k]);
    Var pre_t = matmul(net.weights[k], t);
    if (net.activations[k] == Activation::Identity) {
      h = pre;
      t = pre_t;
    } else {
      t = cmul(activate_deriv(pre, net.activations[k]), pre_t);
      h = activate(pre, net.activations[k]);
    }
  }
  return {h, t};
}

// u^T J (column-wise), returned as input_dim x batch.
inline Var vjp(const NetVars& net, Var x, Var cotangent) {
  std::vector<Var> pre;
  Var h = x;
  for (std::size_t k = 0; k < net.weights.size(); ++k) {
    pre.push_back(add_bias(matmul(net.weights[k], h), net.biases[k]));
    h = activate(pre.back(), net.activations[k]);
  }
  require_shape(cotangent.rows() == h.rows() && cotangent.cols() == h.cols(), "vjp cotangent");
  Var g = cotangent;
  for (std::size_t k = net.weights.size(); k-- > 0;) {
    if (net.activations[k] != Activation::Identity) g = cmul(activate_deriv(pre[k], net.activations[k]), g);
    g = matmul_tn(net.weights[k], g);
  }
  return g;
}

// Gradient blocks shaped like the network's parameters.
struct NetGrad {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static NetGrad zeros_like(const Mlp& net) {
    NetGrad g;
    for (const auto& l : net.layers()) {
      g.weights.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.biases.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  // Same layout as Mlp::flatten().
  Vector flatten() const {
    Eigen::Index n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
    Vector out(n);
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      for (Eigen::Index r = 0; r < weights[k].rows(); ++r)
        for (Eigen::Index c = 0; c < weights[k].cols(); ++c) out(o++) = weights[k](r, c);
      out.segment(o, biases[k].size()) = biases[k];
      o += biases[k].size();
    }
    return out;
  }
};

inline NetGrad collect(const Tape& tape, const NetVars& vars) {
  NetGrad g;
  for (std::size_t k = 0; k < vars.weights.size(); ++k) {
    g.weights.push_back(tape.grad(vars.weights[k]));
    g.biases.push_back(tape.grad(vars.biases[k]).col(0));
  }
  return g;
}

}  // namespace fivelab::ad
