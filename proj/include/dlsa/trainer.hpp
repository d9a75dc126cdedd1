#pragma once

// Mini-batch SGD for Flow Filters and the classifiers that consume them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dlsa/autodiff.hpp"
#include "dlsa/classifiers.hpp"
#include "dlsa/data_io.hpp"
#include "dlsa/error.hpp"
#include "dlsa/gmm_latent.hpp"
#include "dlsa/losses.hpp"
#include "dlsa/maf_flow.hpp"

namespace dlsa {

struct TrainConfig {
  // Flow Filter optimisation
  double learning_rate = 0.2;
  double momentum = 0.9;
  std::size_t batch_size = 1024;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  double lambda_bal = 1.0;
  double lambda_pure = 0.02;
  double q = 2.0;
  double eta = 0.7;
  std::size_t clusters = 500;
  double filter_fraction = 0.3;
  std::size_t flow_blocks = 2;
  std::size_t hidden = 0;                // 0: default_hidden_width(D)
  std::optional<double> center_sigma;    // nullopt: default_center_sigma(D)
  double grad_clip = 0.0;                // global gradient norm cap; 0 disables

  // Classifiers
  std::size_t classifier_epochs = 30;
  double classifier_lr = 0.1;
  std::size_t classifier_batch = 256;
  bool residual_on_full_set = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("TrainConfig: " + m); };
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (batch_size == 0) fail("batch_size must be positive");
    if (lambda_bal < 0.0 || lambda_pure < 0.0) fail("loss weights must be non-negative");
    if (q < 0.0) fail("q must be non-negative");
    if (!(eta > 0.0 && eta < 1.0)) fail("eta must lie in (0, 1)");
    if (clusters < 2) fail("clusters must be >= 2");
    if (!(filter_fraction > 0.0 && filter_fraction < 1.0)) fail("filter_fraction must lie in (0, 1)");
    if (flow_blocks < 1) fail("flow_blocks must be >= 1");
    if (center_sigma && !(*center_sigma > 0.0)) fail("center_sigma must be positive");
    if (grad_clip < 0.0) fail("grad_clip must be non-negative");
    if (!(classifier_lr > 0.0)) fail("classifier_lr must be positive");
    if (classifier_batch == 0) fail("classifier_batch must be positive");
  }
};

/// splitmix64 of (seed, stream) so each consumer gets an independent stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

/// Plain SGD with optional heavy-ball momentum and global-norm gradient
/// clipping; no weight decay.
class Sgd {
 public:
  Sgd(std::vector<ad::Parameter*> params, double lr, double momentum, double clip = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), clip_(clip) {
    for (auto* p : params_) velocity_.emplace_back(p->value.rows(), p->value.cols());
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto* p : params_)
      for (double g : p->grad.data()) s += g * g;
    return std::sqrt(s);
  }

  void step() {
    double factor = 1.0;
    if (clip_ > 0.0) {
      const double norm = grad_norm();
      if (norm > clip_) factor = clip_ / norm;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ad::Parameter& p = *params_[i];
      Matrix& v = velocity_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        v[j] = momentum_ * v[j] + factor * p.grad[j];
        p.value[j] -= lr_ * v[j];
      }
    }
  }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Matrix> velocity_;
  double lr_;
  double momentum_;
  double clip_;
};

struct EpochTrace {
  std::size_t epoch = 0;
  double mle = 0.0;
  double bal = 0.0;
  double pure = 0.0;
  double total = 0.0;
};

struct TrainedFilter {
  FlowStack flow;
  GaussianMixtureLatent latent;
  double alpha = 0.0;  // log-likelihood threshold; loglik >= alpha is filtered
  std::vector<EpochTrace> trace;
  std::vector<double> train_loglik;
  std::vector<std::size_t> train_clusters;
  std::vector<std::size_t> filtered;  // training indices with loglik >= alpha
};

/// Number of samples the threshold keeps: ceil(rho N), at least 1.
inline std::size_t filtered_count(std::size_t n, double rho) {
  const double target = rho * static_cast<double>(n);
  auto m = static_cast<std::size_t>(std::ceil(target - 1e-9));
  return std::clamp<std::size_t>(m, 1, n);
}

/// Threshold at the (1 - rho) quantile: the ceil(rho N)-th largest value, so
/// that exactly that many samples (absent ties) satisfy loglik >= alpha.
inline double calibrate_threshold(std::span<const double> logliks, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ContractError("calibrate_threshold: fraction must lie in (0, 1)");
  if (logliks.empty()) throw ContractError("calibrate_threshold: no samples");
  std::vector<double> sorted(logliks.begin(), logliks.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[sorted.size() - filtered_count(sorted.size(), rho)];
}

inline double calibrate_threshold(TrainedFilter& filter, const Matrix& train_x, double rho) {
  const auto scores = score_batch(filter.flow, filter.latent, train_x);
  filter.alpha = calibrate_threshold(scores.loglik, rho);
  filter.train_loglik = scores.loglik;
  filter.train_clusters = scores.cluster;
  filter.filtered.clear();
  for (std::size_t i = 0; i < scores.loglik.size(); ++i)
    if (scores.loglik[i] >= filter.alpha) filter.filtered.push_back(i);
  return filter.alpha;
}

struct LossValues {
  double mle = 0.0;
  double bal = 0.0;
  double pure = 0.0;
  double total = 0.0;
};

/// Objective on the whole dataset as one batch with a fresh momentum
/// estimator (so the balance term sees the exact dataset posterior).
inline LossValues full_data_loss(const FlowStack& flow, const GaussianMixtureLatent& g, const FeatureDataset& data,
                                 const TrainConfig& cfg) {
  const auto labels = data.label_indices();
  const auto weights = class_weights_present(data.counts(), cfg.q);
  PosteriorMomentum momentum(g.clusters(), cfg.eta);
  std::mt19937_64 rng(derive_seed(cfg.seed, 99));
  const auto pairs = sample_purity_pairs(std::span<const std::size_t>(labels), rng, labels.size());
  ad::Tape tape;
  auto t = flow_filter_loss(tape, flow, g, data.to_matrix(), labels, weights, momentum, pairs, cfg.lambda_bal,
                            cfg.lambda_pure);
  return {t.mle.scalar(), t.bal.scalar(), t.pure.scalar(), t.total.scalar()};
}

inline std::size_t distinct_labels(std::span<const std::uint32_t> labels) {
  std::vector<std::uint32_t> l(labels.begin(), labels.end());
  std::sort(l.begin(), l.end());
  return static_cast<std::size_t>(std::unique(l.begin(), l.end()) - l.begin());
}

/// Trains one Flow Filter on `data` and calibrates its threshold.
inline TrainedFilter train_flow_filter(const FeatureDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ContractError("train_flow_filter: empty dataset");
  if (distinct_labels(data.labels) < 2) throw ContractError("train_flow_filter: need at least 2 classes");

  TrainedFilter filter;
  filter.flow = build_flow(data.dim, cfg.flow_blocks, cfg.hidden, derive_seed(cfg.seed, 1));
  filter.latent = init_centers(cfg.clusters, data.dim, cfg.center_sigma.value_or(default_center_sigma(data.dim)),
                               derive_seed(cfg.seed, 2));
  const Matrix x = data.to_matrix();
  const auto labels = data.label_indices();
  const auto weights = class_weights_present(data.counts(), cfg.q);

  PosteriorMomentum momentum(cfg.clusters, cfg.eta);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 3));
  std::mt19937_64 pair_rng(derive_seed(cfg.seed, 4));
  Sgd opt(filter.flow.parameters(), cfg.learning_rate, cfg.momentum, cfg.grad_clip);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochTrace tr;
    tr.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      Matrix batch(idx.size(), data.dim);
      std::vector<std::size_t> batch_labels(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), batch.row(r).begin());
        batch_labels[r] = labels[idx[r]];
      }
      const auto pairs = sample_purity_pairs(std::span<const std::size_t>(batch_labels), pair_rng, idx.size());
      opt.zero_grad();
      ad::Tape tape;
      LossTerms terms;
      try {
        terms = flow_filter_loss(tape, filter.flow, filter.latent, batch, batch_labels, weights, momentum, pairs,
                                 cfg.lambda_bal, cfg.lambda_pure);
      } catch (const NumericError& e) {
        throw TrainingError("flow filter diverged in epoch " + std::to_string(epoch + 1) +
                            " (last finite epoch " + std::to_string(epoch) + "): " + e.what());
      }
      if (!std::isfinite(terms.total.scalar())) {
        throw TrainingError("flow filter loss is not finite in epoch " + std::to_string(epoch + 1) +
                            " (last finite epoch " + std::to_string(epoch) + ")");
      }
      tr.mle += terms.mle.scalar();
      tr.bal += terms.bal.scalar();
      tr.pure += terms.pure.scalar();
      tr.total += terms.total.scalar();
      ++batches;
      tape.backward(terms.total);
      opt.step();
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    tr.mle /= nb;
    tr.bal /= nb;
    tr.pure /= nb;
    tr.total /= nb;
    filter.trace.push_back(tr);
  }
  calibrate_threshold(filter, x, cfg.filter_fraction);
  return filter;
}

/// Softmax cross-entropy training shared by every classifier. `logits(t, idx)`
/// builds batch logits for the given sample indices.
template <class LogitsFn>
std::vector<double> train_softmax(std::vector<ad::Parameter*> params, std::span<const std::size_t> labels,
                                  LogitsFn&& logits, std::size_t epochs, double lr, double momentum,
                                  std::size_t batch_size, std::uint64_t seed) {
  Sgd opt(std::move(params), lr, momentum);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> trace;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<std::size_t> y(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) y[r] = labels[idx[r]];
      opt.zero_grad();
      ad::Tape tape;
      ad::Var l = logits(tape, idx);
      ad::Var nll = ad::mean(ad::sub(ad::logsumexp(l), ad::pick(l, std::move(y))));
      if (!std::isfinite(nll.scalar())) {
        throw TrainingError("classifier loss is not finite in epoch " + std::to_string(epoch + 1));
      }
      total += nll.scalar() * static_cast<double>(idx.size());
      tape.backward(nll);
      opt.step();
    }
    trace.push_back(total / static_cast<double>(std::max<std::size_t>(labels.size(), 1)));
  }
  return trace;
}

struct ClassifierTrainResult {
  ClusterAidedClassifier classifier;
  std::vector<double> loss_trace;
};

/// log max(n_c, 1) of each class in `labels`.
inline std::vector<double> log_label_counts(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<double> counts(classes, 0.0);
  for (auto y : labels) {
    if (y >= classes) throw ContractError("label " + std::to_string(y + 1) + " outside class range");
    counts[y] += 1.0;
  }
  for (double& c : counts) c = std::log(std::max(c, 1.0));
  return counts;
}

/// Fits the cluster-aided heads on filtered samples (features, latents, and
/// each sample's cluster prior row).
inline ClassifierTrainResult train_cluster_classifier(const Matrix& x, const Matrix& z, const Matrix& prior,
                                                      std::span<const std::size_t> labels, std::size_t classes,
                                                      const TrainConfig& cfg, std::uint64_t seed) {
  if (x.rows() == 0) {
    throw ConfigError("train_cluster_classifier: filtered set is empty; increase the filter fraction");
  }
  if (labels.size() != x.rows()) throw DimensionError("train_cluster_classifier: one label per row required");
  ClassifierTrainResult out;
  out.classifier = ClusterAidedClassifier::zeros(x.cols(), classes);
  out.classifier.check(x, z, prior);
  auto& clf = out.classifier;
  out.loss_trace = train_softmax(
      clf.parameters(), labels,
      [&](ad::Tape& t, const std::vector<std::size_t>& idx) {
        Matrix xb(idx.size(), x.cols()), zb(idx.size(), z.cols()), pb(idx.size(), prior.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
          std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), xb.row(r).begin());
          std::copy(z.row(idx[r]).begin(), z.row(idx[r]).end(), zb.row(r).begin());
          std::copy(prior.row(idx[r]).begin(), prior.row(idx[r]).end(), pb.row(r).begin());
        }
        return ClusterAidedClassifier::logits(t, clf, t.constant(std::move(xb)), t.constant(std::move(zb)),
                                              t.constant(std::move(pb)));
      },
      cfg.classifier_epochs, cfg.classifier_lr, cfg.momentum, cfg.classifier_batch, seed);
  return out;
}

struct ResidualTrainResult {
  ResidualClassifier classifier;
  std::vector<double> loss_trace;
};

/// linear / balsoftmax / cosine classifier on `x`. Balanced-softmax offsets
/// use the class counts of this training set; absent classes count as 1.
inline ResidualTrainResult train_residual_classifier(const Matrix& x, std::span<const std::size_t> labels,
                                                     std::size_t classes, ClassifierKind kind,
                                                     const TrainConfig& cfg, std::uint64_t seed) {
  if (x.rows() == 0) throw ConfigError("train_residual_classifier: residual set is empty");
  if (labels.size() != x.rows()) throw DimensionError("train_residual_classifier: one label per row required");
  ResidualTrainResult out;
  ResidualClassifier& clf = out.classifier;
  clf.kind = kind;
  clf.dim = x.cols();
  clf.classes = classes;
  Matrix w(classes, x.cols());
  if (kind == ClassifierKind::cosine) {
    std::mt19937_64 rng(derive_seed(seed, 7));
    std::normal_distribution<double> n(0.0, 0.01);
    for (double& v : w.data()) v = n(rng);
  }
  clf.weight = ad::Parameter(std::move(w), 0);
  clf.bias = ad::Parameter(Matrix(1, classes), 1);

  clf.train_log_counts = log_label_counts(labels, classes);
  if (kind == ClassifierKind::balsoftmax) {
    std::vector<bool> seen(classes, false);
    for (auto y : labels) seen[y] = true;
    std::size_t absent = 0;
    for (bool b : seen) absent += !b;
    if (absent > 0) {
      warn(std::to_string(absent) + " of " + std::to_string(classes) +
           " classes absent from the residual set; their balanced-softmax offsets use count 1");
    }
  }

  out.loss_trace = train_softmax(
      clf.parameters(), labels,
      [&](ad::Tape& t, const std::vector<std::size_t>& idx) {
        Matrix xb(idx.size(), x.cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
          std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), xb.row(r).begin());
        ad::Var l = ResidualClassifier::logits(t, clf, t.constant(std::move(xb)));
        if (clf.kind == ClassifierKind::balsoftmax) l = ad::add_row_constant(l, clf.train_log_counts);
        return l;
      },
      cfg.classifier_epochs, cfg.classifier_lr, cfg.momentum, cfg.classifier_batch, seed);
  return out;
}

}  // namespace dlsa
