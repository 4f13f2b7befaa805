#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation applied to its variables. Calling
// backward() on a 1x1 result walks the tape in reverse and accumulates
// gradients into each Parameter that took part in the computation.
// Tapes built with recording disabled skip all gradient bookkeeping and
// are what evaluation-mode forward passes use.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "antic/error.hpp"

namespace antic {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Adam moments.
  Matrix m;
  Matrix v;
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Matrix init, bool apply_decay)
      : name(std::move(n)), value(std::move(init)), decay(apply_decay) {
    zero_grad();
    m = Matrix::Zero(value.rows(), value.cols());
    v = Matrix::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false});
    return Var{nodes_.size() - 1};
  }

  Var param(Parameter& p) {
    if (!record_) return constant(p.value);
    Parameter* target = &p;
    nodes_.push_back(Node{p.value, Matrix(), [target](Tape& t, std::size_t self) {
                            target->grad += t.nodes_[self].grad;
                          },
                          true});
    return Var{nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient of the root with respect to v; zero-sized until backward() reaches it.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.rows() != 1 || m.cols() != 1) throw ShapeError("tape: expected a 1x1 value");
    return m(0, 0);
  }

  Var push(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    if (record_) {
      for (Var in : inputs) needs = needs || nodes_[in.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(fn) : nullptr, needs});
    return Var{nodes_.size() - 1};
  }

  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const Matrix& upstream(std::size_t self) const { return nodes_[self].grad; }

  void backward(Var root) {
    if (!record_) throw Error("tape: backward() on a non-recording tape");
    const Matrix& r = value(root);
    if (r.rows() != 1 || r.cols() != 1) throw ShapeError("tape: backward() needs a 1x1 root");
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
};

}  // namespace antic
