#pragma once

// Masked autoregressive flow.
//
// Each block holds a MADE network producing a shift mu(x) and a log-scale
// alpha(x) whose i-th outputs only see inputs 0..i-1. The density direction
// x -> z is one parallel pass per block:
//
//   z_i = (x_i - mu_i(x)) * exp(-alpha_i(x)),   log|det| += -sum_i alpha_i
//
// evaluated in the block's coordinate order: columns are permuted before the
// transform and restored after it, so the permutation only picks the
// autoregressive order. Sampling (z -> x) inverts each block with D
// sequential passes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlsa/autodiff.hpp"
#include "dlsa/error.hpp"
#include "dlsa/matrix.hpp"

namespace dlsa {

/// Bound of the smooth clamp applied to the log-scale head.
inline constexpr double kAlphaBound = 5.0;

inline std::size_t default_hidden_width(std::size_t dim) { return std::max<std::size_t>(64, 4 * dim); }

struct MadeNetwork {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  std::vector<std::size_t> hidden_degrees;  // in [1, dim - 1]
  Matrix mask_in;                           // hidden x dim
  Matrix mask_out;                          // dim x hidden
  ad::Parameter w_in, b_in, w_mu, b_mu, w_alpha, b_alpha;

  std::vector<ad::Parameter*> parameters() { return {&w_in, &b_in, &w_mu, &b_mu, &w_alpha, &b_alpha}; }
  std::vector<const ad::Parameter*> parameters() const {
    return {&w_in, &b_in, &w_mu, &b_mu, &w_alpha, &b_alpha};
  }
};

struct FlowBlock {
  MadeNetwork made;
  std::vector<std::size_t> permutation;  // out[:, i] = in[:, permutation[i]]
};

struct FlowStack {
  std::size_t dim = 0;
  std::vector<FlowBlock> blocks;

  std::vector<ad::Parameter*> parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& b : blocks)
      for (auto* p : b.made.parameters()) out.push_back(p);
    return out;
  }
  std::vector<const ad::Parameter*> parameters() const {
    std::vector<const ad::Parameter*> out;
    for (const auto& b : blocks)
      for (const auto* p : b.made.parameters()) out.push_back(p);
    return out;
  }
};

/// Builds degree masks for a MADE with one hidden layer. Hidden unit k gets
/// degree (k mod (dim-1)) + 1; input j has degree j+1; output i may read
/// hidden units of degree < i+1.
inline void assign_made_masks(MadeNetwork& m) {
  m.hidden_degrees.resize(m.hidden);
  for (std::size_t k = 0; k < m.hidden; ++k) m.hidden_degrees[k] = (k % (m.dim - 1)) + 1;
  m.mask_in = Matrix(m.hidden, m.dim);
  for (std::size_t k = 0; k < m.hidden; ++k)
    for (std::size_t j = 0; j < m.dim; ++j) m.mask_in(k, j) = m.hidden_degrees[k] >= j + 1 ? 1.0 : 0.0;
  m.mask_out = Matrix(m.dim, m.hidden);
  for (std::size_t i = 0; i < m.dim; ++i)
    for (std::size_t k = 0; k < m.hidden; ++k) m.mask_out(i, k) = i + 1 > m.hidden_degrees[k] ? 1.0 : 0.0;
}

inline std::vector<std::size_t> block_permutation(std::size_t dim, std::size_t block_index) {
  std::vector<std::size_t> perm(dim);
  for (std::size_t i = 0; i < dim; ++i) perm[i] = block_index % 2 == 0 ? i : dim - 1 - i;
  return perm;
}

inline std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size(), perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size() || inv[perm[i]] != perm.size()) throw ContractError("not a permutation");
    inv[perm[i]] = i;
  }
  return inv;
}

/// Fresh flow equal to the identity map: both output heads start at zero,
/// the input layer is random.
inline FlowStack build_flow(std::size_t dim, std::size_t blocks, std::size_t hidden, std::uint64_t seed) {
  if (dim < 2) throw ContractError("build_flow: dimension must be >= 2, got " + std::to_string(dim));
  if (blocks < 1) throw ContractError("build_flow: need at least one block");
  if (hidden == 0) hidden = default_hidden_width(dim);
  if (hidden < dim) throw ContractError("build_flow: hidden width must be >= dimension");

  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> init(-bound, bound);

  FlowStack flow;
  flow.dim = dim;
  std::uint32_t next_id = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    FlowBlock block;
    MadeNetwork& m = block.made;
    m.dim = dim;
    m.hidden = hidden;
    assign_made_masks(m);
    Matrix w_in(hidden, dim);
    for (double& v : w_in.data()) v = init(rng);
    m.w_in = ad::Parameter(std::move(w_in), next_id++);
    m.b_in = ad::Parameter(Matrix(1, hidden), next_id++);
    m.w_mu = ad::Parameter(Matrix(dim, hidden), next_id++);
    m.b_mu = ad::Parameter(Matrix(1, dim), next_id++);
    m.w_alpha = ad::Parameter(Matrix(dim, hidden), next_id++);
    m.b_alpha = ad::Parameter(Matrix(1, dim), next_id++);
    block.permutation = block_permutation(dim, b);
    flow.blocks.push_back(std::move(block));
  }
  return flow;
}

namespace detail {

inline ad::Var bind(ad::Tape& t, ad::Parameter& p) { return t.param(p); }
inline ad::Var bind(ad::Tape& t, const ad::Parameter& p) { return t.constant(p.value); }

struct MadeOutputs {
  ad::Var mu;
  ad::Var alpha;
};

template <class Made>
MadeOutputs made_outputs(ad::Tape& t, Made& m, ad::Var x) {
  ad::Var h = ad::tanh(ad::masked_affine(x, bind(t, m.w_in), m.mask_in, bind(t, m.b_in)));
  ad::Var mu = ad::masked_affine(h, bind(t, m.w_mu), m.mask_out, bind(t, m.b_mu));
  ad::Var raw = ad::masked_affine(h, bind(t, m.w_alpha), m.mask_out, bind(t, m.b_alpha));
  ad::Var alpha = ad::scale(ad::tanh(ad::scale(raw, 1.0 / kAlphaBound)), kAlphaBound);
  return {mu, alpha};
}

inline void require_finite(const Matrix& m, std::size_t block, const char* what) {
  if (!m.all_finite()) {
    throw NumericError("flow block " + std::to_string(block) + ": non-finite " + what);
  }
}

}  // namespace detail

struct FlowOutput {
  ad::Var z;       // n x D
  ad::Var logdet;  // n x 1
};

/// Density direction on a tape. With a mutable FlowStack the parameters are
/// bound for backward(); with a const one they enter as constants.
template <class Flow>
FlowOutput inverse_with_logdet(ad::Tape& tape, Flow& flow, ad::Var x) {
  if (x.cols() != flow.dim) {
    throw DimensionError("inverse_with_logdet: input has " + std::to_string(x.cols()) +
                         " columns, flow expects " + std::to_string(flow.dim));
  }
  detail::require_finite(x.value(), 0, "input");
  ad::Var cur = x;
  ad::Var logdet = tape.constant(Matrix(x.rows(), 1));
  for (std::size_t b = 0; b < flow.blocks.size(); ++b) {
    auto& block = flow.blocks[b];
    ad::Var u = ad::select_cols(cur, block.permutation);
    auto out = detail::made_outputs(tape, block.made, u);
    ad::Var z = ad::mul(ad::sub(u, out.mu), ad::exp(ad::scale(out.alpha, -1.0)));
    logdet = ad::add(logdet, ad::scale(ad::row_sum(out.alpha), -1.0));
    cur = ad::select_cols(z, inverse_permutation(block.permutation));
    detail::require_finite(cur.value(), b, "latent");
    detail::require_finite(logdet.value(), b, "log-determinant");
  }
  return {cur, logdet};
}

struct LatentBatch {
  Matrix z;
  std::vector<double> logdet;
};

/// Density direction without gradient tracking.
inline LatentBatch inverse_with_logdet(const FlowStack& flow, const Matrix& x) {
  ad::Tape tape;
  auto out = inverse_with_logdet(tape, flow, tape.constant(x));
  return {out.z.value(), out.logdet.value().data()};
}

/// Sampling direction z -> x: blocks undone in reverse order, each by D
/// sequential autoregressive passes.
inline Matrix forward(const FlowStack& flow, const Matrix& z) {
  if (z.cols() != flow.dim) throw DimensionError("forward: latent width does not match flow");
  const std::size_t dim = flow.dim;
  Matrix cur = z;
  for (std::size_t bi = flow.blocks.size(); bi-- > 0;) {
    const FlowBlock& block = flow.blocks[bi];
    const MadeNetwork& m = block.made;
    Matrix u(cur.rows(), dim);
    for (std::size_t r = 0; r < cur.rows(); ++r)
      for (std::size_t i = 0; i < dim; ++i) u(r, i) = cur(r, block.permutation[i]);
    Matrix x(cur.rows(), dim);
    for (std::size_t i = 0; i < dim; ++i) {
      Matrix h = kernels::affine(x, m.w_in.value, &m.mask_in, m.b_in.value);
      for (double& v : h.data()) v = std::tanh(v);
      const Matrix mu = kernels::affine(h, m.w_mu.value, &m.mask_out, m.b_mu.value);
      const Matrix raw = kernels::affine(h, m.w_alpha.value, &m.mask_out, m.b_alpha.value);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double alpha = kAlphaBound * std::tanh(raw(r, i) / kAlphaBound);
        x(r, i) = u(r, i) * std::exp(alpha) + mu(r, i);
      }
    }
    detail::require_finite(x, bi, "sample");
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t i = 0; i < dim; ++i) cur(r, block.permutation[i]) = x(r, i);
  }
  return cur;
}

}  // namespace dlsa
