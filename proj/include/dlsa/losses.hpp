#pragma once

// Flow Filter objectives: class-weighted likelihood, cluster balancedness
// (negative entropy of a momentum estimate of the dataset posterior) and
// pairwise purity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlsa/autodiff.hpp"
#include "dlsa/error.hpp"
#include "dlsa/gmm_latent.hpp"

namespace dlsa {

/// Floor applied inside every log of a probability.
inline constexpr double kProbEps = 1e-12;

struct ClassWeights {
  std::vector<double> omega;  // indexed by class id
  double q = 2.0;

  double operator()(std::size_t label) const { return omega.at(label); }
};

/// omega_i = n_i^-q / sum_j n_j^-q. q = 0 gives uniform weights (MLE weighting off).
inline ClassWeights class_weights(std::span<const std::uint64_t> counts, double q) {
  if (q < 0.0) throw ContractError("class_weights: exponent must be non-negative");
  if (counts.empty()) throw ContractError("class_weights: no classes");
  ClassWeights w;
  w.q = q;
  w.omega.resize(counts.size());
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      throw ContractError("class_weights: class " + std::to_string(i) + " has no training samples");
    }
    w.omega[i] = std::pow(static_cast<double>(counts[i]), -q);
    total += w.omega[i];
  }
  for (double& v : w.omega) v /= total;
  return w;
}

/// Like class_weights, but classes with zero count get weight 0 and the rest
/// are normalized among themselves. Used on cascade residual subsets.
inline ClassWeights class_weights_present(std::span<const std::uint64_t> counts, double q) {
  std::vector<std::uint64_t> present;
  for (auto c : counts)
    if (c > 0) present.push_back(c);
  if (present.empty()) throw ContractError("class_weights_present: every class is empty");
  const ClassWeights sub = class_weights(present, q);
  ClassWeights w;
  w.q = q;
  w.omega.assign(counts.size(), 0.0);
  for (std::size_t i = 0, j = 0; i < counts.size(); ++i)
    if (counts[i] > 0) w.omega[i] = sub.omega[j++];
  return w;
}

/// -sum_{x in batch} omega(y_x) log L(x).
template <class Flow>
ad::Var mle_loss(ad::Tape& tape, Flow& flow, const GaussianMixtureLatent& g, ad::Var x,
                 std::span<const std::size_t> labels, const ClassWeights& w) {
  if (x.rows() == 0) throw ContractError("mle_loss: empty batch");
  if (labels.size() != x.rows()) throw DimensionError("mle_loss: one label per row required");
  std::vector<double> weights(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= w.omega.size()) {
      throw ContractError("mle_loss: label " + std::to_string(labels[i]) + " outside class range");
    }
    weights[i] = -w.omega[labels[i]];
  }
  return ad::weighted_sum(sample_loglik(tape, flow, g, x), std::move(weights));
}

/// Exponentially decayed running mean of batch posteriors with bias
/// correction. Only the current batch term carries gradient.
class PosteriorMomentum {
 public:
  PosteriorMomentum() = default;
  PosteriorMomentum(std::size_t clusters, double eta) : estimate_(clusters, 0.0), eta_(eta) {
    if (!(eta > 0.0 && eta < 1.0)) throw ContractError("PosteriorMomentum: decay must lie in (0, 1)");
  }

  double eta() const { return eta_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<double>& raw_estimate() const { return estimate_; }

  std::vector<double> corrected() const {
    std::vector<double> out(estimate_);
    if (steps_ == 0) return out;
    const double denom = 1.0 - std::pow(eta_, static_cast<double>(steps_));
    for (double& v : out) v /= denom;
    return out;
  }

  /// Folds in a batch mean posterior (1 x K) and returns the corrected estimate as a tape node.
  ad::Var update(ad::Tape& tape, ad::Var batch_mean) {
    check_probability(batch_mean.value().data());
    const double next_t = static_cast<double>(steps_ + 1);
    const double denom = 1.0 - std::pow(eta_, next_t);
    Matrix history(1, estimate_.size());
    for (std::size_t k = 0; k < estimate_.size(); ++k) history[k] = eta_ * estimate_[k] / denom;
    ad::Var out = ad::add(tape.constant(std::move(history)), ad::scale(batch_mean, (1.0 - eta_) / denom));
    advance(batch_mean.value().data());
    return out;
  }

  std::vector<double> update(std::span<const double> batch_mean) {
    check_probability(batch_mean);
    advance(batch_mean);
    return corrected();
  }

 private:
  void check_probability(std::span<const double> p) const {
    if (p.size() != estimate_.size()) throw DimensionError("PosteriorMomentum: cluster count mismatch");
    double s = 0.0;
    for (double v : p) {
      if (!(v >= -1e-12)) throw ContractError("PosteriorMomentum: negative or NaN probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ContractError("PosteriorMomentum: batch mean sums to " + std::to_string(s) + ", not 1");
  }

  void advance(std::span<const double> p) {
    for (std::size_t k = 0; k < estimate_.size(); ++k) estimate_[k] = eta_ * estimate_[k] + (1.0 - eta_) * p[k];
    ++steps_;
  }

  std::vector<double> estimate_;
  double eta_ = 0.7;
  std::uint64_t steps_ = 0;
};

/// sum_k p_k log max(p_k, eps): negative entropy, minimal (-log K) at uniform.
inline ad::Var balance_loss(ad::Tape& /*tape*/, ad::Var p) { return ad::sum(ad::mul(p, ad::log(p, kProbEps))); }

inline double balance_loss(std::span<const double> p) {
  double s = 0.0;
  for (double v : p) s += v * std::log(std::max(v, kProbEps));
  return s;
}

using IndexPair = std::pair<std::size_t, std::size_t>;

/// Pairs of batch positions with different labels. Each pair picks two
/// distinct classes uniformly among those present, then one member of each
/// uniformly. A single-class batch yields no pairs.
template <class Rng>
std::vector<IndexPair> sample_purity_pairs(std::span<const std::size_t> labels, Rng& rng, std::size_t count) {
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [label, idx] : members) groups.push_back(&idx);
  std::vector<IndexPair> pairs;
  if (groups.size() < 2) return pairs;
  pairs.reserve(count);
  std::uniform_int_distribution<std::size_t> first(0, groups.size() - 1);
  std::uniform_int_distribution<std::size_t> second(0, groups.size() - 2);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t a = first(rng);
    std::size_t b = second(rng);
    if (b >= a) ++b;
    const auto& ga = *groups[a];
    const auto& gb = *groups[b];
    const std::size_t i = ga[std::uniform_int_distribution<std::size_t>(0, ga.size() - 1)(rng)];
    const std::size_t j = gb[std::uniform_int_distribution<std::size_t>(0, gb.size() - 1)(rng)];
    pairs.emplace_back(i, j);
  }
  return pairs;
}

/// Mean over pairs of sum_k P(k|x_i) log max(P(k|x_j), eps); 0 without pairs.
inline ad::Var purity_loss(ad::Tape& tape, ad::Var posteriors, std::span<const IndexPair> pairs) {
  if (pairs.empty()) return tape.constant(Matrix(1, 1, 0.0));
  std::vector<std::size_t> left, right;
  left.reserve(pairs.size());
  right.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    left.push_back(i);
    right.push_back(j);
  }
  ad::Var pi = ad::select_rows(posteriors, std::move(left));
  ad::Var pj = ad::select_rows(posteriors, std::move(right));
  return ad::mean(ad::row_sum(ad::mul(pi, ad::log(pj, kProbEps))));
}

/// L_MLE + lambda_bal L_bal + lambda_pure L_pure; a zero weight drops its term.
inline ad::Var total_loss(ad::Var mle, ad::Var bal, ad::Var pure, double lambda_bal, double lambda_pure) {
  if (lambda_bal < 0.0 || lambda_pure < 0.0) throw ContractError("total_loss: loss weights must be non-negative");
  ad::Var total = mle;
  if (lambda_bal != 0.0) total = ad::add(total, ad::scale(bal, lambda_bal));
  if (lambda_pure != 0.0) total = ad::add(total, ad::scale(pure, lambda_pure));
  return total;
}

struct LossTerms {
  ad::Var mle;
  ad::Var bal;
  ad::Var pure;
  ad::Var total;
};

/// Full Flow Filter objective on one batch. Advances `momentum` by one step.
template <class Flow>
LossTerms flow_filter_loss(ad::Tape& tape, Flow& flow, const GaussianMixtureLatent& g, const Matrix& batch,
                           std::span<const std::size_t> labels, const ClassWeights& w,
                           PosteriorMomentum& momentum, std::span<const IndexPair> pairs, double lambda_bal,
                           double lambda_pure) {
  if (lambda_bal < 0.0 || lambda_pure < 0.0) throw ContractError("flow_filter_loss: loss weights must be non-negative");
  if (batch.rows() == 0) throw ContractError("flow_filter_loss: empty batch");
  if (labels.size() != batch.rows()) throw DimensionError("flow_filter_loss: one label per row required");
  std::vector<double> weights(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= w.omega.size()) throw ContractError("flow_filter_loss: label outside class range");
    weights[i] = -w.omega[labels[i]];
  }
  ad::Var x = tape.constant(batch);
  auto out = inverse_with_logdet(tape, flow, x);
  ad::Var comp = component_logpdf(tape, g, out.z);
  ad::Var loglik = ad::add(ad::add_scalar(ad::logsumexp(comp), -std::log(static_cast<double>(g.clusters()))),
                           out.logdet);
  LossTerms t;
  t.mle = ad::weighted_sum(loglik, std::move(weights));
  ad::Var post = ad::softmax(comp);
  for (double v : post.value().data())
    if (!std::isfinite(v)) throw NumericError("flow_filter_loss: cluster posterior is not finite");
  t.bal = balance_loss(tape, momentum.update(tape, ad::col_mean(post)));
  t.pure = purity_loss(tape, post, pairs);
  t.total = total_loss(t.mle, t.bal, t.pure, lambda_bal, lambda_pure);
  return t;
}

}  // namespace dlsa
