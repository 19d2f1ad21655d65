#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "hsim/errors.hpp"

namespace hsim {

// Minimal reverse-mode tape. Each node stores up to two parent indices with
// local partial derivatives; backward() accumulates adjoints in one reverse
// sweep. Var is a lightweight handle (tape pointer + node index + value).
class Tape {
 public:
  struct Node {
    int parent[2];
    double weight[2];
  };

  int constant(double) { return push(-1, 0.0, -1, 0.0); }

  int unary(int p, double w) { return push(p, w, -1, 0.0); }
  int binary(int p0, double w0, int p1, double w1) { return push(p0, w0, p1, w1); }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Adjoints of every node w.r.t. node `seed`.
  std::vector<double> backward(int seed) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[static_cast<std::size_t>(seed)] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      const Node& n = nodes_[i];
      const double a = adj[i];
      if (a == 0.0) continue;
      if (n.parent[0] >= 0) adj[static_cast<std::size_t>(n.parent[0])] += n.weight[0] * a;
      if (n.parent[1] >= 0) adj[static_cast<std::size_t>(n.parent[1])] += n.weight[1] * a;
    }
    return adj;
  }

 private:
  int push(int p0, double w0, int p1, double w1) {
    nodes_.push_back(Node{{p0, p1}, {w0, w1}});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  double v = 0.0;

  Var() = default;
  Var(Tape& t, double value) : tape(&t), idx(t.constant(value)), v(value) {}
  Var(Tape* t, int i, double value) : tape(t), idx(i), v(value) {}

  double value() const { return v; }
};

inline Var make_var(Tape& t, double value) { return Var(t, value); }

// Arithmetic. Mixed double operands are treated as constants (no node).
inline Var operator+(const Var& a, const Var& b) {
  return Var(a.tape, a.tape->binary(a.idx, 1.0, b.idx, 1.0), a.v + b.v);
}
inline Var operator-(const Var& a, const Var& b) {
  return Var(a.tape, a.tape->binary(a.idx, 1.0, b.idx, -1.0), a.v - b.v);
}
inline Var operator*(const Var& a, const Var& b) {
  return Var(a.tape, a.tape->binary(a.idx, b.v, b.idx, a.v), a.v * b.v);
}
inline Var operator/(const Var& a, const Var& b) {
  return Var(a.tape, a.tape->binary(a.idx, 1.0 / b.v, b.idx, -a.v / (b.v * b.v)), a.v / b.v);
}
inline Var operator-(const Var& a) { return Var(a.tape, a.tape->unary(a.idx, -1.0), -a.v); }

inline Var operator+(const Var& a, double c) { return Var(a.tape, a.tape->unary(a.idx, 1.0), a.v + c); }
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return a + (-c); }
inline Var operator-(double c, const Var& a) { return Var(a.tape, a.tape->unary(a.idx, -1.0), c - a.v); }
inline Var operator*(const Var& a, double c) { return Var(a.tape, a.tape->unary(a.idx, c), a.v * c); }
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, const Var& a) {
  return Var(a.tape, a.tape->unary(a.idx, -c / (a.v * a.v)), c / a.v);
}

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator<(const Var& a, double b) { return a.v < b; }
inline bool operator<(double a, const Var& b) { return a < b.v; }
inline bool operator>(const Var& a, double b) { return a.v > b; }

inline Var tanh(const Var& a) {
  const double t = std::tanh(a.v);
  return Var(a.tape, a.tape->unary(a.idx, 1.0 - t * t), t);
}
inline Var exp(const Var& a) {
  const double e = std::exp(a.v);
  return Var(a.tape, a.tape->unary(a.idx, e), e);
}
inline Var log(const Var& a) { return Var(a.tape, a.tape->unary(a.idx, 1.0 / a.v), std::log(a.v)); }
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.v);
  return Var(a.tape, a.tape->unary(a.idx, 0.5 / s), s);
}
inline Var sin(const Var& a) { return Var(a.tape, a.tape->unary(a.idx, std::cos(a.v)), std::sin(a.v)); }
inline Var cos(const Var& a) { return Var(a.tape, a.tape->unary(a.idx, -std::sin(a.v)), std::cos(a.v)); }
inline Var tan(const Var& a) {
  const double t = std::tan(a.v);
  return Var(a.tape, a.tape->unary(a.idx, 1.0 + t * t), t);
}

// Hard clamp with a straight-through gradient: identity inside [lo, hi],
// zero gradient when saturated.
inline Var clamp_st(const Var& a, double lo, double hi) {
  if (a.v < lo) return Var(a.tape, a.tape->unary(a.idx, 0.0), lo);
  if (a.v > hi) return Var(a.tape, a.tape->unary(a.idx, 0.0), hi);
  return a;
}
inline double clamp_st(double a, double lo, double hi) {
  return a < lo ? lo : (a > hi ? hi : a);
}

// Zero speed floor; subgradient 0 on the clipped branch.
inline Var floor_zero(const Var& a) {
  if (a.v < 0.0) return Var(a.tape, a.tape->unary(a.idx, 0.0), 0.0);
  return a;
}

inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var relu(const Var& a) { return a.v > 0.0 ? a : Var(a.tape, a.tape->unary(a.idx, 0.0), 0.0); }
inline double relu(double a) { return a > 0.0 ? a : 0.0; }

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.v; }

}  // namespace hsim
