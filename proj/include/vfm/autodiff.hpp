#pragma once

// Tape-based reverse-mode differentiation.
//
// A `Tape` records every primitive evaluated on `Var`s together with its local
// partial derivatives. `Tape::backward` then sweeps the record once in reverse and
// returns the gradient over the registered parameter slots. Besides scalar
// primitives the tape knows two block nodes:
//   * network outputs of a whole mini-batch (backpropagated with dense products),
//   * block terms whose partials w.r.t. a contiguous slot range are supplied.
//
// A default-constructed or double-constructed Var is a constant that belongs to
// no tape, so templated model code works unchanged for double and Var.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "vfm/errors.hpp"
#include "vfm/network.hpp"

namespace vfm::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: implicit constant

  double value() const { return value_; }
  bool is_constant() const { return tape_ == nullptr; }
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t i, double v) : tape_(t), index_(i), value_(v) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
  double value_ = 0.0;
};

class Tape {
 public:
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose adjoint is accumulated into gradient slot `slot`.
  Var parameter(double value, std::size_t slot) {
    Node n;
    n.kind = Kind::Parameter;
    n.payload = slot;
    return push_node(n, value);
  }

  // Leaf without a slot; its adjoint is available through `adjoint()` after backward.
  Var variable(double value) { return push_node(Node{}, value); }

  Var unary(double value, const Var& a, double da) {
    if (a.is_constant()) return Var(value);
    check_owner(a);
    Node n;
    n.a = a.index_;
    n.da = da;
    return push_node(n, value);
  }

  Var binary(double value, const Var& a, double da, const Var& b, double db) {
    if (a.is_constant()) return unary(value, b, db);
    if (b.is_constant()) return unary(value, a, da);
    check_owner(a);
    check_owner(b);
    Node n;
    n.a = a.index_;
    n.da = da;
    n.b = b.index_;
    n.db = db;
    return push_node(n, value);
  }

  // Evaluates the network on every column of `inputs` (constants) and returns one
  // Var per column. Parameter gradients land in slots [slot_offset, slot_offset + P).
  std::vector<Var> network_outputs(const NetworkView& net, std::size_t slot_offset,
                                   const Eigen::MatrixXd& inputs) {
    NetworkCall call{net, slot_offset, {}, {}};
    const Eigen::RowVectorXd out = network_forward_batch(net, inputs, &call.cache);
    call.dout = Eigen::RowVectorXd::Zero(out.size());
    calls_.push_back(std::move(call));
    std::vector<Var> vars;
    vars.reserve(static_cast<std::size_t>(out.size()));
    for (Eigen::Index c = 0; c < out.size(); ++c) {
      Node n;
      n.kind = Kind::NetworkOutput;
      n.payload = calls_.size() - 1;
      n.column = static_cast<std::uint32_t>(c);
      vars.push_back(push_node(n, out(c)));
    }
    return vars;
  }

  // Scalar term with known partials w.r.t. slots [slot_offset, slot_offset + partials.size()).
  Var block_term(double value, std::size_t slot_offset, std::vector<double> partials) {
    blocks_.push_back(Block{slot_offset, std::move(partials)});
    Node n;
    n.kind = Kind::BlockTerm;
    n.payload = blocks_.size() - 1;
    return push_node(n, value);
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from `root`. Single use: a tape can be swept once.
  std::vector<double> backward(const Var& root, std::size_t slot_count) {
    if (swept_) throw ContractError("backward: tape already swept");
    if (!root.is_constant() && root.tape_ != this) {
      throw ContractError("backward: root does not belong to this tape");
    }
    swept_ = true;
    std::vector<double> grad(slot_count, 0.0);
    if (root.is_constant()) {
      adjoints_.assign(nodes_.size(), 0.0);
      return grad;  // nothing recorded depends on the parameters
    }
    adjoints_.assign(nodes_.size(), 0.0);
    adjoints_[root.index_] = 1.0;
    for (std::size_t i = root.index_ + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      const double adj = adjoints_[i];
      switch (n.kind) {
        case Kind::Operation:
          if (n.a != kNone) adjoints_[n.a] += adj * n.da;
          if (n.b != kNone) adjoints_[n.b] += adj * n.db;
          break;
        case Kind::Parameter:
          check_slot(n.payload, 1, slot_count);
          grad[n.payload] += adj;
          break;
        case Kind::NetworkOutput:
          calls_[n.payload].dout(n.column) = adj;
          break;
        case Kind::BlockTerm: {
          const Block& b = blocks_[n.payload];
          check_slot(b.offset, b.partials.size(), slot_count);
          for (std::size_t k = 0; k < b.partials.size(); ++k) grad[b.offset + k] += adj * b.partials[k];
          break;
        }
      }
    }
    for (const auto& call : calls_) {
      const std::size_t p = call.net.parameters().size();
      check_slot(call.offset, p, slot_count);
      network_backward_batch(call.net, call.cache, call.dout,
                             std::span<double>(grad.data() + call.offset, p));
    }
    return grad;
  }

  double adjoint(const Var& v) const {
    if (!swept_) throw ContractError("adjoint: backward has not run");
    if (v.is_constant()) return 0.0;
    check_owner(v);
    return v.index_ < adjoints_.size() ? adjoints_[v.index_] : 0.0;
  }

 private:
  enum class Kind : std::uint8_t { Operation, Parameter, NetworkOutput, BlockTerm };

  struct Node {
    Kind kind = Kind::Operation;
    std::uint32_t a = kNone;
    std::uint32_t b = kNone;
    std::uint32_t column = 0;
    std::size_t payload = 0;
    double da = 0.0;
    double db = 0.0;
  };

  struct NetworkCall {
    NetworkView net;
    std::size_t offset;
    BatchCache cache;
    Eigen::RowVectorXd dout;
  };

  struct Block {
    std::size_t offset;
    std::vector<double> partials;
  };

  Var push_node(const Node& n, double value) {
    if (swept_) throw ContractError("tape already swept; record a new evaluation");
    if (nodes_.size() >= kNone) throw ContractError("tape is full");
    nodes_.push_back(n);
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
  }

  void check_owner(const Var& v) const {
    if (v.tape_ != this) throw ContractError("Var belongs to a different tape");
  }

  static void check_slot(std::size_t offset, std::size_t len, std::size_t count) {
    if (offset + len > count) throw ContractError("gradient slot out of range");
  }

  std::vector<Node> nodes_;
  std::vector<NetworkCall> calls_;
  std::vector<Block> blocks_;
  std::vector<double> adjoints_;
  bool swept_ = false;
};

namespace detail {
inline Tape* tape_of(const Var& a, const Var& b) {
  if (a.tape() && b.tape() && a.tape() != b.tape()) {
    throw ContractError("operands belong to different tapes");
  }
  return a.tape() ? a.tape() : b.tape();
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() + b.value();
  return t ? t->binary(v, a, 1.0, b, 1.0) : Var(v);
}
inline Var operator-(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() - b.value();
  return t ? t->binary(v, a, 1.0, b, -1.0) : Var(v);
}
inline Var operator*(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() * b.value();
  return t ? t->binary(v, a, b.value(), b, a.value()) : Var(v);
}
inline Var operator/(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const double v = a.value() / b.value();
  return t ? t->binary(v, a, 1.0 / b.value(), b, -v / b.value()) : Var(v);
}
inline Var operator-(const Var& a) {
  return a.tape() ? a.tape()->unary(-a.value(), a, -1.0) : Var(-a.value());
}

inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline Var exp(const Var& a) {
  const double v = std::exp(a.value());
  return a.tape() ? a.tape()->unary(v, a, v) : Var(v);
}
inline Var log(const Var& a) {
  const double v = std::log(a.value());
  return a.tape() ? a.tape()->unary(v, a, 1.0 / a.value()) : Var(v);
}
// d/dx sqrt(x) at x = 0 is taken as 0.
inline Var sqrt(const Var& a) {
  const double v = std::sqrt(a.value());
  const double d = v > 0.0 ? 0.5 / v : 0.0;
  return a.tape() ? a.tape()->unary(v, a, d) : Var(v);
}
inline Var pow(const Var& a, double p) {
  const double v = std::pow(a.value(), p);
  const double d = a.value() != 0.0 ? p * v / a.value() : (p == 1.0 ? 1.0 : 0.0);
  return a.tape() ? a.tape()->unary(v, a, d) : Var(v);
}
inline Var pow(const Var& a, const Var& p) {
  Tape* t = detail::tape_of(a, p);
  const double v = std::pow(a.value(), p.value());
  if (!t) return Var(v);
  const double da = a.value() != 0.0 ? p.value() * v / a.value() : 0.0;
  const double dp = a.value() > 0.0 ? v * std::log(a.value()) : 0.0;
  return t->binary(v, a, da, p, dp);
}
inline Var pow(double a, const Var& p) { return pow(Var(a), p); }

}  // namespace vfm::ad

namespace vfm {

using ad::Var;

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

// max with ties resolved to the first argument; the derivative follows the
// selected branch.
inline double maximum(double a, double b) { return a >= b ? a : b; }
inline double minimum(double a, double b) { return a <= b ? a : b; }

inline Var maximum(const Var& a, const Var& b) {
  if (a.value() >= b.value()) return ad::Var(a);
  return b;
}
inline Var minimum(const Var& a, const Var& b) {
  if (a.value() <= b.value()) return a;
  return b;
}
inline Var maximum(const Var& a, double b) { return maximum(a, Var(b)); }
inline Var maximum(double a, const Var& b) { return maximum(Var(a), b); }
inline Var minimum(const Var& a, double b) { return minimum(a, Var(b)); }
inline Var minimum(double a, const Var& b) { return minimum(Var(a), b); }

inline double relu(double x) { return maximum(0.0, x); }
inline Var relu(const Var& x) { return maximum(0.0, x); }

}  // namespace vfm
