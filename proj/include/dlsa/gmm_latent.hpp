#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dlsa/autodiff.hpp"
#include "dlsa/error.hpp"
#include "dlsa/maf_flow.hpp"
#include "dlsa/matrix.hpp"

namespace dlsa {

/// Uniform-prior mixture of unit-covariance Gaussians with frozen centers.
class GaussianMixtureLatent {
 public:
  GaussianMixtureLatent() = default;
  GaussianMixtureLatent(Matrix centers, double sigma) : centers_(std::move(centers)), sigma_(sigma) {
    if (centers_.rows() == 0 || centers_.cols() == 0) {
      throw ContractError("GaussianMixtureLatent: empty center matrix");
    }
  }

  std::size_t clusters() const { return centers_.rows(); }
  std::size_t dim() const { return centers_.cols(); }
  double sigma() const { return sigma_; }
  const Matrix& centers() const { return centers_; }

 private:
  Matrix centers_;
  double sigma_ = 0.0;
};

/// Center scale putting neighbouring centers about three unit standard
/// deviations apart: E|mu_p - mu_q|^2 = 2 D sigma^2 = 3.
inline double auto_center_sigma(std::size_t dim) { return std::sqrt(3.0 / (2.0 * static_cast<double>(dim))); }

/// 0.05 for 1024-d features (the tuned value), the three-sigma rule elsewhere.
inline double default_center_sigma(std::size_t dim) { return dim == 1024 ? 0.05 : auto_center_sigma(dim); }

/// Centers drawn i.i.d. from N(0, sigma^2); nullopt sigma selects auto_center_sigma.
inline GaussianMixtureLatent init_centers(std::size_t clusters, std::size_t dim, std::optional<double> sigma,
                                          std::uint64_t seed) {
  if (clusters < 2) throw ContractError("init_centers: need at least 2 clusters");
  if (dim < 1) throw ContractError("init_centers: dimension must be positive");
  const double s = sigma.value_or(auto_center_sigma(dim));
  if (!(s > 0.0)) throw ContractError("init_centers: sigma must be positive, got " + std::to_string(s));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, s);
  Matrix centers(clusters, dim);
  for (double& v : centers.data()) v = normal(rng);
  return GaussianMixtureLatent(std::move(centers), s);
}

namespace detail {

inline double log_norm_const(std::size_t dim) {
  return -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
}

inline void check_latent(const GaussianMixtureLatent& g, std::size_t width) {
  if (width != g.dim()) {
    throw DimensionError("latent has " + std::to_string(width) + " entries, mixture expects " +
                         std::to_string(g.dim()));
  }
}

}  // namespace detail

/// log N(z | mu_k, I) for every row and component; n x K.
inline ad::Var component_logpdf(ad::Tape& /*tape*/, const GaussianMixtureLatent& g, ad::Var z) {
  detail::check_latent(g, z.cols());
  return ad::add_scalar(ad::scale(ad::squared_distances(z, g.centers()), -0.5),
                        detail::log_norm_const(g.dim()));
}

/// log P(z) = logsumexp_k log N(z | mu_k, I) - log K; n x 1.
inline ad::Var latent_logpdf(ad::Tape& tape, const GaussianMixtureLatent& g, ad::Var z) {
  return ad::add_scalar(ad::logsumexp(component_logpdf(tape, g, z)),
                        -std::log(static_cast<double>(g.clusters())));
}

/// Row-wise cluster posterior P(h = k | z); n x K.
inline ad::Var posterior(ad::Tape& tape, const GaussianMixtureLatent& g, ad::Var z) {
  return ad::softmax(component_logpdf(tape, g, z));
}

inline std::vector<double> component_logpdf(const GaussianMixtureLatent& g, std::span<const double> z) {
  detail::check_latent(g, z.size());
  const double c = detail::log_norm_const(g.dim());
  std::vector<double> out(g.clusters());
  for (std::size_t k = 0; k < g.clusters(); ++k) {
    const auto mu = g.centers().row(k);
    double d2 = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double d = z[j] - mu[j];
      d2 += d * d;
    }
    out[k] = -0.5 * d2 + c;
  }
  return out;
}

inline double latent_logpdf(const GaussianMixtureLatent& g, std::span<const double> z) {
  for (double v : z)
    if (!std::isfinite(v)) throw NumericError("latent_logpdf: non-finite latent");
  const auto comp = component_logpdf(g, z);
  return kernels::logsumexp(comp) - std::log(static_cast<double>(g.clusters()));
}

inline std::vector<double> posterior(const GaussianMixtureLatent& g, std::span<const double> z) {
  const auto comp = component_logpdf(g, z);
  std::vector<double> p(comp.size());
  kernels::softmax(comp, p);
  return p;
}

/// argmax_k of the posterior, lowest index on ties. Identity covariances make
/// this the nearest center.
inline std::size_t predict_cluster(const GaussianMixtureLatent& g, std::span<const double> z) {
  const auto comp = component_logpdf(g, z);
  std::size_t best = 0;
  for (std::size_t k = 1; k < comp.size(); ++k)
    if (comp[k] > comp[best]) best = k;
  return best;
}

/// log of the mixture likelihood of x under flow + mixture; n x 1.
template <class Flow>
ad::Var sample_loglik(ad::Tape& tape, Flow& flow, const GaussianMixtureLatent& g, ad::Var x) {
  auto out = inverse_with_logdet(tape, flow, x);
  return ad::add(latent_logpdf(tape, g, out.z), out.logdet);
}

struct LatentScores {
  Matrix z;                     // n x D
  std::vector<double> loglik;   // n
  std::vector<std::size_t> cluster;
};

/// Latents, log-likelihoods and cluster predictions for a batch, no tape kept.
inline LatentScores score_batch(const FlowStack& flow, const GaussianMixtureLatent& g, const Matrix& x) {
  ad::Tape tape;
  auto out = inverse_with_logdet(tape, flow, tape.constant(x));
  ad::Var ll = ad::add(latent_logpdf(tape, g, out.z), out.logdet);
  LatentScores s;
  s.z = out.z.value();
  s.loglik = ll.value().data();
  s.cluster.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) s.cluster[r] = predict_cluster(g, s.z.row(r));
  return s;
}

inline double sample_loglik(const FlowStack& flow, const GaussianMixtureLatent& g, std::span<const double> x) {
  return score_batch(flow, g, Matrix::row_vector(x)).loglik[0];
}

}  // namespace dlsa
