#pragma once

// Reverse-mode differentiation over dense matrices.
//
// Every node holds a matrix value; scalars are 1x1. Operations record a
// closure that pushes the node's adjoint into its inputs. Nodes that do not
// depend on any variable carry no closure, so constant subgraphs cost only
// their forward evaluation.
//
// stop_gradient() passes its value through and blocks adjoints. Its values are
// recorded in call order and can be replayed on a later tape via
// set_stop_gradient_override(), which freezes the marked subexpressions while
// the rest of the expression is re-evaluated (used by finite-difference checks).

#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "fivelab/errors.hpp"
#include "fivelab/linalg.hpp"
#include "fivelab/mlp.hpp"

namespace fivelab::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
  Var constant(double value) { return constant(Matrix::Constant(1, 1, value)); }
  Var variable(Matrix value) { return push(std::move(value), true, nullptr); }
  Var variable(double value) { return variable(Matrix::Constant(1, 1, value)); }

  // Records an operation. The closure runs only if some input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      check_owned(v);
      needs = needs || nodes_[v.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  Var stop_gradient(Var x) {
    check_owned(x);
    Matrix v = nodes_[x.id()].value;
    if (override_) {
      if (sg_cursor_ >= override_->size())
        throw ContractError("stop-gradient replay has fewer recorded values than marks");
      const Matrix& frozen = (*override_)[sg_cursor_];
      require_shape(frozen.rows() == v.rows() && frozen.cols() == v.cols(), "stop-gradient replay value");
      v = frozen;
    }
    ++sg_cursor_;
    sg_values_.push_back(v);
    return constant(std::move(v));
  }

  void set_stop_gradient_override(const std::vector<Matrix>* values) {
    override_ = values;
    sg_cursor_ = 0;
  }
  const std::vector<Matrix>& stop_gradient_values() const { return sg_values_; }

  const Matrix& value(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }
  bool requires_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }

  // Adjoint of `v` after backward(); zeros when nothing flowed into it.
  Matrix grad(Var v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <class Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  // Adds `g` into rows [start, start + g.rows()) of the adjoint of `v`.
  void accumulate_rows(Var v, Eigen::Index start, const Matrix& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    n.grad.middleRows(start, g.rows()) += g;
  }

  void backward(Var root) {
    check_owned(root);
    const Node& r = nodes_[root.id()];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw ContractError("backward() needs a scalar expression, got " + std::to_string(r.value.rows()) +
                          "x" + std::to_string(r.value.cols()));
    for (auto& n : nodes_) n.has_grad = false;
    accumulate(root, Matrix::Constant(1, 1, 1.0));
    for (int i = root.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back({std::move(value), Matrix(), requires_grad, false, std::move(backward)});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  void check_owned(Var v) const {
    if (v.tape() != this || v.id() < 0 || v.id() >= static_cast<int>(nodes_.size()))
      throw ContractError("variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> sg_values_;
  const std::vector<Matrix>* override_ = nullptr;
  std::size_t sg_cursor_ = 0;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("not a scalar");
  return v(0, 0);
}

inline void same_shape(Var a, Var b, const char* op) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), op);
}

inline Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// Elementwise product.
inline Var cmul(Var a, Var b) {
  same_shape(a, b, "cmul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

inline Var scale(Var a, double c) {
  return a.tape()->record(a.value() * c, {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
}

inline Var add_constant(Var a, double c) {
  return a.tape()->record(a.value().array() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

// Matrix times a 1x1 variable.
inline Var mul_scalar(Var a, Var s) {
  const double sv = s.scalar();
  return a.tape()->record(a.value() * sv, {a, s}, [a, s, sv](Tape& t, const Matrix& g) {
    t.accumulate(a, g * sv);
    if (t.requires_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(t.value(a)).sum()));
  });
}

inline Var matmul(Var a, Var b) {
  require_shape(a.cols() == b.rows(), "matmul inner dimension");
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

// a^T b
inline Var matmul_tn(Var a, Var b) {
  require_shape(a.rows() == b.rows(), "matmul_tn inner dimension");
  return a.tape()->record(a.value().transpose() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, t.value(b) * g.transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a) * g);
  });
}

// Adds a column vector to every column.
inline Var add_bias(Var a, Var bias) {
  require_shape(bias.cols() == 1 && bias.rows() == a.rows(), "add_bias");
  Matrix v = a.value();
  v.colwise() += bias.value().col(0);
  return a.tape()->record(std::move(v), {a, bias}, [a, bias](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.rowwise().sum());
  });
}

inline Var activate(Var a, Activation kind) {
  if (kind == Activation::Identity) return a;
  return a.tape()->record(act::value(kind, a.value()), {a}, [a, kind](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(act::deriv(kind, t.value(a))));
  });
}

// Elementwise activation derivative, itself differentiable.
inline Var activate_deriv(Var a, Activation kind) {
  Matrix v = act::deriv(kind, a.value());
  if (kind != Activation::SiLU) return a.tape()->constant(std::move(v));
  return a.tape()->record(std::move(v), {a}, [a, kind](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(act::second_deriv(kind, t.value(a))));
  });
}

inline Var exp(Var a) {
  Matrix v = a.value().array().exp();
  Matrix cached = v;
  return a.tape()->record(std::move(v), {a}, [a, cached = std::move(cached)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(cached));
  });
}

inline Var square(Var a) {
  return a.tape()->record(a.value().array().square(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(t.value(a)));
  });
}

inline Var sum(Var a) {
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& v = t.value(a);
    t.accumulate(a, Matrix::Constant(v.rows(), v.cols(), g(0, 0)));
  });
}

// Sum over all entries of a (.) b.
inline Var dot(Var a, Var b) { return sum(cmul(a, b)); }

inline Var rows(Var a, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && start + count <= a.rows(), "row slice");
  return a.tape()->record(a.value().middleRows(start, count), {a},
                          [a, start](Tape& t, const Matrix& g) { t.accumulate_rows(a, start, g); });
}

inline Var select_rows(Var a, std::vector<Eigen::Index> idx) {
  Matrix v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    require_shape(idx[k] >= 0 && idx[k] < a.rows(), "row selection");
    v.row(static_cast<Eigen::Index>(k)) = a.value().row(idx[k]);
  }
  return a.tape()->record(std::move(v), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
    for (std::size_t k = 0; k < idx.size(); ++k) full.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    t.accumulate(a, full);
  });
}

}  // namespace fivelab::ad
