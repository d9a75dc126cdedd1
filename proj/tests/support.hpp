#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dlsa/dlsa.hpp"

namespace dlsa::fixtures {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data()) v = u(rng);
  return m;
}

inline Matrix normal_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

/// Overwrites every flow parameter with uniform noise in [-scale, scale].
inline void randomize_flow(FlowStack& flow, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  for (ad::Parameter* p : flow.parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, -scale, scale);
}

/// One-dimensional flow built by hand (build_flow needs D >= 2). With no
/// earlier coordinates every MADE output is its bias, so each block is the
/// affine map z = (x - b_mu) exp(-alpha(b_alpha)).
inline FlowStack scalar_flow(const std::vector<std::pair<double, double>>& mu_and_raw_alpha) {
  FlowStack flow;
  flow.dim = 1;
  std::uint32_t id = 0;
  for (const auto& [mu, raw] : mu_and_raw_alpha) {
    FlowBlock b;
    MadeNetwork& m = b.made;
    m.dim = 1;
    m.hidden = 4;
    m.hidden_degrees.assign(4, 1);
    m.mask_in = Matrix(4, 1);
    m.mask_out = Matrix(1, 4);
    m.w_in = ad::Parameter(Matrix(4, 1, 0.3), id++);
    m.b_in = ad::Parameter(Matrix(1, 4, 0.1), id++);
    m.w_mu = ad::Parameter(Matrix(1, 4, 0.7), id++);
    m.b_mu = ad::Parameter(Matrix(1, 1, mu), id++);
    m.w_alpha = ad::Parameter(Matrix(1, 4, -0.4), id++);
    m.b_alpha = ad::Parameter(Matrix(1, 1, raw), id++);
    b.permutation = {0};
    flow.blocks.push_back(std::move(b));
  }
  return flow;
}

/// Trapezoid integral of exp(loglik) over [lo, hi] with n intervals.
inline double integrate_density_1d(const FlowStack& flow, const GaussianMixtureLatent& g, double lo, double hi,
                                   std::size_t n) {
  Matrix x(n + 1, 1);
  const double h = (hi - lo) / static_cast<double>(n);
  for (std::size_t i = 0; i <= n; ++i) x(i, 0) = lo + h * static_cast<double>(i);
  const auto s = score_batch(flow, g, x);
  double acc = 0.0;
  for (std::size_t i = 0; i <= n; ++i) acc += (i == 0 || i == n ? 0.5 : 1.0) * std::exp(s.loglik[i]);
  return acc * h;
}

/// log|det| of a square matrix by partial-pivot elimination.
inline double log_abs_det(Matrix a) {
  const std::size_t n = a.rows();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (piv != c)
      for (std::size_t k = 0; k < n; ++k) std::swap(a(c, k), a(piv, k));
    const double d = a(c, c);
    acc += std::log(std::abs(d));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / d;
      for (std::size_t k = c; k < n; ++k) a(r, k) -= f * a(c, k);
    }
  }
  return acc;
}

/// Central-difference Jacobian dz/dx of the density direction at one point.
inline Matrix fd_jacobian(const FlowStack& flow, std::span<const double> x, double h = 1e-6) {
  const std::size_t d = x.size();
  Matrix jac(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    Matrix up = Matrix::row_vector(x), down = Matrix::row_vector(x);
    up(0, j) += h;
    down(0, j) -= h;
    const Matrix zu = inverse_with_logdet(flow, up).z;
    const Matrix zd = inverse_with_logdet(flow, down).z;
    for (std::size_t i = 0; i < d; ++i) jac(i, j) = (zu(0, i) - zd(0, i)) / (2.0 * h);
  }
  return jac;
}

}  // namespace dlsa::fixtures
