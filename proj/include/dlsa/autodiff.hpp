#pragma once

// Reverse-mode differentiation over matrix-valued nodes.
//
// A Tape records every primitive in creation order; since a node can only
// consume nodes created before it, replaying the tape back to front visits
// each node after all of its consumers. All reductions accumulate in a fixed
// left-to-right order so repeated runs are bit-identical.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlsa/error.hpp"
#include "dlsa/matrix.hpp"

namespace dlsa::ad {

/// Trainable tensor with its gradient accumulator.
struct Parameter {
  Matrix value;
  Matrix grad;
  std::uint32_t id = 0;

  Parameter() = default;
  Parameter(Matrix v, std::uint32_t pid)
      : value(std::move(v)), grad(value.rows(), value.cols()), id(pid) {}

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t i) : tape_(t), index_(i) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v) {
    nodes_.push_back(Node{std::move(v), {}, {}, nullptr, false});
    return Var(this, nodes_.size() - 1);
  }

  Var param(Parameter& p) {
    nodes_.push_back(Node{p.value, {}, {}, &p, true});
    return Var(this, nodes_.size() - 1);
  }

  /// Appends a derived node. The backward callback is dropped when no input
  /// requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward back) {
    bool needs = false;
    for (const Var& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.index()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(back) : Backward{}, nullptr, needs});
    return Var(this, nodes_.size() - 1);
  }

  const Matrix& value(std::size_t i) const { return nodes_[i].value; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradient accumulator of `v`, allocated on first use; null when `v`
  /// does not lead to any parameter.
  Matrix* grad_target(Var v) {
    Node& n = nodes_[v.index()];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  /// Propagates d(out)/d(node) through the tape and adds the result into
  /// every bound Parameter's gradient. The tape cannot be replayed afterwards.
  void backward(Var out) {
    if (consumed_) throw StateError("backward: tape already consumed");
    check_owned(out);
    if (out.rows() != 1 || out.cols() != 1) {
      throw ContractError("backward: output must be a scalar, got " + out.value().shape_string());
    }
    consumed_ = true;
    Node& root = nodes_[out.index()];
    if (!root.requires_grad) return;
    root.grad = Matrix(1, 1, 1.0);
    for (std::size_t i = out.index() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.back) n.back(*this, n.grad);
      if (n.param != nullptr) {
        Parameter& p = *n.param;
        if (!p.grad.same_shape(p.value)) p.zero_grad();
        for (std::size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j];
      }
      n.grad = Matrix();
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward back;
    Parameter* param;
    bool requires_grad;
  };

  void check_owned(Var v) const {
    if (v.tape() != this) throw ContractError("Var belongs to a different tape");
  }

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

inline const Matrix& Var::value() const { return tape_->value(index_); }

namespace detail {

inline void require_same_shape(const char* op, Var a, Var b) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": operand shapes " + a.value().shape_string() +
                         " and " + b.value().shape_string() + " differ");
  }
}

template <class F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Matrix* gb = t.grad_target(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Matrix* gb = t.grad_target(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  Matrix y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    if (Matrix* gb = t.grad_target(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

inline Var scale(Var a, double c) {
  Matrix y = detail::map(a.value(), [c](double v) { return c * v; });
  return a.tape()->record(std::move(y), {a}, [a, c](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
  });
}

inline Var add_scalar(Var a, double c) {
  Matrix y = detail::map(a.value(), [c](double v) { return v + c; });
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

inline Var tanh(Var a) {
  Matrix y = detail::map(a.value(), [](double v) { return std::tanh(v); });
  const std::size_t self = a.tape()->size();
  return a.tape()->record(std::move(y), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& yv = t.value(self);
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - yv[i] * yv[i]);
  });
}

inline Var exp(Var a) {
  Matrix y = detail::map(a.value(), [](double v) { return std::exp(v); });
  const std::size_t self = a.tape()->size();
  return a.tape()->record(std::move(y), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& yv = t.value(self);
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * yv[i];
  });
}

/// log(max(a, eps)); the clamped region has zero gradient.
inline Var log(Var a, double eps = 1e-12) {
  Matrix y = detail::map(a.value(), [eps](double v) { return std::log(std::max(v, eps)); });
  return a.tape()->record(std::move(y), {a}, [a, eps](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > eps) (*ga)[i] += g[i] / av[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0];
  });
}

inline Var mean(Var a) {
  if (a.value().empty()) throw ContractError("mean: empty input");
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record(Matrix(1, 1, s / n), {a}, [a, n](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0] / n;
  });
}

/// Weighted sum sum_i w_i a_i with constant weights.
inline Var weighted_sum(Var a, std::vector<double> w) {
  if (w.size() != a.value().size()) {
    throw DimensionError("weighted_sum: " + std::to_string(w.size()) + " weights for " +
                         std::to_string(a.value().size()) + " entries");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a.value()[i];
  return a.tape()->record(Matrix(1, 1, s), {a}, [a, w = std::move(w)](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < w.size(); ++i) (*ga)[i] += g[0] * w[i];
  });
}

/// n x m -> n x 1
inline Var row_sum(Var a) {
  const Matrix& av = a.value();
  Matrix y(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v;
    y(r, 0) = s;
  }
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < ga->rows(); ++r)
        for (double& v : ga->row(r)) v += g(r, 0);
  });
}

/// n x m -> 1 x m
inline Var col_mean(Var a) {
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ContractError("col_mean: no rows");
  const double n = static_cast<double>(av.rows());
  Matrix y(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) y(0, c) += av(r, c);
  for (double& v : y.data()) v /= n;
  return a.tape()->record(std::move(y), {a}, [a, n](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < ga->rows(); ++r)
        for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g(0, c) / n;
  });
}

/// Row-wise max + log sum exp(v - max); n x m -> n x 1.
inline Var logsumexp(Var a) {
  const Matrix& av = a.value();
  if (av.cols() == 0 || av.rows() == 0) throw ContractError("logsumexp: empty input");
  Matrix y(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (double v : av.row(r))
      if (std::isnan(v)) throw NumericError("logsumexp: NaN input");
    y(r, 0) = kernels::logsumexp(av.row(r));
  }
  const std::size_t self = a.tape()->size();
  return a.tape()->record(std::move(y), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& yv = t.value(self);
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c)
          (*ga)(r, c) += g(r, 0) * std::exp(av(r, c) - yv(r, 0));
  });
}

/// Row-wise softmax.
inline Var softmax(Var a) {
  const Matrix& av = a.value();
  Matrix y(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) kernels::softmax(av.row(r), y.row(r));
  const std::size_t self = a.tape()->size();
  return a.tape()->record(std::move(y), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& s = t.value(self);
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < s.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < s.cols(); ++c) dot += g(r, c) * s(r, c);
        for (std::size_t c = 0; c < s.cols(); ++c) (*ga)(r, c) += s(r, c) * (g(r, c) - dot);
      }
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Var concat_cols(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts " + av.shape_string() + " vs " + bv.shape_string());
  }
  Matrix y(av.rows(), av.cols() + bv.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy(av.row(r).begin(), av.row(r).end(), y.row(r).begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), y.row(r).begin() + static_cast<std::ptrdiff_t>(av.cols()));
  }
  const std::size_t split = av.cols();
  return a.tape()->record(std::move(y), {a, b}, [a, b, split](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < split; ++c) (*ga)(r, c) += g(r, c);
    if (Matrix* gb = t.grad_target(b))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = split; c < g.cols(); ++c) (*gb)(r, c - split) += g(r, c);
  });
}

/// out[:, i] = a[:, idx[i]]
inline Var select_cols(Var a, std::vector<std::size_t> idx) {
  const Matrix& av = a.value();
  Matrix y(av.rows(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= av.cols()) throw DimensionError("select_cols: column index out of range");
    for (std::size_t r = 0; r < av.rows(); ++r) y(r, i) = av(r, idx[i]);
  }
  return a.tape()->record(std::move(y), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t i = 0; i < idx.size(); ++i) (*ga)(r, idx[i]) += g(r, i);
  });
}

/// out[i, :] = a[idx[i], :]
inline Var select_rows(Var a, std::vector<std::size_t> idx) {
  const Matrix& av = a.value();
  Matrix y(idx.size(), av.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= av.rows()) throw DimensionError("select_rows: row index out of range");
    std::copy(av.row(idx[i]).begin(), av.row(idx[i]).end(), y.row(i).begin());
  }
  return a.tape()->record(std::move(y), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(idx[i], c) += g(i, c);
  });
}

/// out[r] = a[r, idx[r]]; n x m -> n x 1.
inline Var pick(Var a, std::vector<std::size_t> idx) {
  const Matrix& av = a.value();
  if (idx.size() != av.rows()) throw DimensionError("pick: one index per row required");
  Matrix y(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    if (idx[r] >= av.cols()) throw DimensionError("pick: index out of range");
    y(r, 0) = av(r, idx[r]);
  }
  return a.tape()->record(std::move(y), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < idx.size(); ++r) (*ga)(r, idx[r]) += g(r, 0);
  });
}

/// Adds a constant row vector to every row.
inline Var add_row_constant(Var a, std::vector<double> offset) {
  const Matrix& av = a.value();
  if (offset.size() != av.cols()) throw DimensionError("add_row_constant: width mismatch");
  Matrix y = av;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += offset[c];
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

/// Scales every row to unit Euclidean norm (norm floored at eps).
inline Var normalize_rows(Var a, double eps = 1e-12) {
  const Matrix& av = a.value();
  Matrix y(av.rows(), av.cols());
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v * v;
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t c = 0; c < av.cols(); ++c) y(r, c) = av(r, c) / norms[r];
  }
  const std::size_t self = a.tape()->size();
  return a.tape()->record(std::move(y), {a}, [a, self, norms = std::move(norms)](Tape& t, const Matrix& g) {
    const Matrix& yv = t.value(self);
    if (Matrix* ga = t.grad_target(a))
      for (std::size_t r = 0; r < yv.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < yv.cols(); ++c) dot += yv(r, c) * g(r, c);
        for (std::size_t c = 0; c < yv.cols(); ++c)
          (*ga)(r, c) += (g(r, c) - yv(r, c) * dot) / norms[r];
      }
  });
}

// ---------------------------------------------------------------------------
// Layers

namespace detail {

inline Var affine_impl(Var in, Var w, const Matrix* mask, Var bias) {
  const Matrix& x = in.value();
  const Matrix& wv = w.value();
  if (x.cols() != wv.cols()) {
    throw DimensionError("affine: input " + x.shape_string() + " incompatible with weights " +
                         wv.shape_string());
  }
  if (mask != nullptr && !mask->same_shape(wv)) {
    throw DimensionError("masked_affine: mask " + mask->shape_string() + " vs weights " +
                         wv.shape_string());
  }
  if (bias.value().size() != wv.rows()) {
    throw DimensionError("affine: bias " + bias.value().shape_string() + " vs weights " +
                         wv.shape_string());
  }
  Matrix y = kernels::affine(x, wv, mask, bias.value());
  std::vector<double> m = mask != nullptr ? mask->data() : std::vector<double>{};
  return in.tape()->record(std::move(y), {in, w, bias},
                           [in, w, bias, m = std::move(m)](Tape& t, const Matrix& g) {
    const Matrix& x = in.value();
    const Matrix& wv = w.value();
    const std::size_t n = x.rows(), d_in = x.cols(), d_out = wv.rows();
    const bool masked = !m.empty();
    if (Matrix* gx = t.grad_target(in)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < d_out; ++o) {
          const double go = g(r, o);
          if (go == 0.0) continue;
          for (std::size_t j = 0; j < d_in; ++j) {
            const double we = masked ? wv(o, j) * m[o * d_in + j] : wv(o, j);
            (*gx)(r, j) += go * we;
          }
        }
    }
    if (Matrix* gw = t.grad_target(w)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < d_out; ++o) {
          const double go = g(r, o);
          for (std::size_t j = 0; j < d_in; ++j) {
            const double mk = masked ? m[o * d_in + j] : 1.0;
            (*gw)(o, j) += go * x(r, j) * mk;
          }
        }
    }
    if (Matrix* gb = t.grad_target(bias)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < d_out; ++o) (*gb)[o] += g(r, o);
    }
  });
}

}  // namespace detail

/// in * W^T + b with W: out x in and b: 1 x out.
inline Var affine(Var in, Var w, Var bias) { return detail::affine_impl(in, w, nullptr, bias); }

/// in * (W .* mask)^T + b.
inline Var masked_affine(Var in, Var w, const Matrix& mask, Var bias) {
  return detail::affine_impl(in, w, &mask, bias);
}

/// Squared distances of each row of z to each (constant) center; n x D -> n x K.
inline Var squared_distances(Var z, const Matrix& centers) {
  if (z.cols() != centers.cols()) {
    throw DimensionError("squared_distances: latent " + z.value().shape_string() +
                         " vs centers " + centers.shape_string());
  }
  Matrix y = kernels::squared_distances(z.value(), centers);
  return z.tape()->record(std::move(y), {z}, [z, centers](Tape& t, const Matrix& g) {
    const Matrix& zv = z.value();
    if (Matrix* gz = t.grad_target(z))
      for (std::size_t r = 0; r < zv.rows(); ++r)
        for (std::size_t k = 0; k < centers.rows(); ++k) {
          const double gk = 2.0 * g(r, k);
          for (std::size_t j = 0; j < zv.cols(); ++j) (*gz)(r, j) += gk * (zv(r, j) - centers(k, j));
        }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradientCheck {
  double max_rel_error = 0.0;
  std::uint32_t worst_param = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares backward() against central differences of `loss` for every entry
/// of every parameter. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradientCheck check_gradients(const std::function<Var(Tape&)>& loss,
                                     std::span<Parameter* const> params, double h = 1e-5,
                                     double floor = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&loss] {
    Tape tape;
    return loss(tape).scalar();
  };
  GradientCheck out;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = eval();
      p->value[i] = saved - h;
      const double down = eval();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++out.entries_checked;
      if (rel > out.max_rel_error || std::isnan(rel)) {
        out.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        out.worst_param = p->id;
        out.worst_entry = i;
        out.analytic = analytic;
        out.numeric = numeric;
      }
    }
  }
  return out;
}

}  // namespace dlsa::ad
