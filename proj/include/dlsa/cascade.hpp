#pragma once

// Chained Flow Filters. Each stage keeps the samples its flow explains best
// (log-likelihood >= alpha) and classifies them with cluster help; the rest
// move on to the next stage and finally to the residual classifier.
//
// Model container (little-endian):
//   "DLSA" | version u32 | D u32 | C u32 | K u32 (stage 0, or 0) | stages u32
//   per stage:
//     blocks u32 | hidden u32 | per block: permutation D x u32,
//       w_in b_in w_mu b_mu w_alpha b_alpha (f64)
//     K u32 | sigma f64 | centers K*D f64 | alpha f64
//     prior K*C f64 | occupancy K x u64
//     w_feat b_feat w_prior b_prior (f64)
//   residual: kind u32 | cosine scale f64 | weight C*D f64 | bias C f64 | log counts C f64
//   training class counts C x u64
//   CRC-32 of everything after the magic/version

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlsa/binary_io.hpp"
#include "dlsa/classifiers.hpp"
#include "dlsa/data_io.hpp"
#include "dlsa/error.hpp"
#include "dlsa/gmm_latent.hpp"
#include "dlsa/maf_flow.hpp"
#include "dlsa/trainer.hpp"

namespace dlsa {

struct ClusterPriorTable {
  Matrix table;                          // K x C, P(y | h = k)
  std::vector<std::uint64_t> occupancy;  // filtered training samples per cluster

  std::size_t clusters() const { return table.rows(); }
  std::size_t classes() const { return table.cols(); }
  std::span<const double> row(std::size_t k) const { return table.row(k); }
};

inline ClusterPriorTable build_cluster_prior(std::span<const std::size_t> clusters,
                                             std::span<const std::size_t> labels, std::size_t k,
                                             std::size_t c) {
  if (clusters.size() != labels.size()) throw DimensionError("build_cluster_prior: one label per assignment");
  ClusterPriorTable p;
  p.table = Matrix(k, c);
  p.occupancy.assign(k, 0);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i] >= k || labels[i] >= c) throw ContractError("build_cluster_prior: index out of range");
    p.table(clusters[i], labels[i]) += 1.0;
    ++p.occupancy[clusters[i]];
  }
  for (std::size_t r = 0; r < k; ++r) {
    const double n = static_cast<double>(p.occupancy[r]);
    for (std::size_t j = 0; j < c; ++j) p.table(r, j) = n > 0 ? p.table(r, j) / n : 1.0 / static_cast<double>(c);
  }
  return p;
}

/// Class probabilities of the cluster-aided classifier for one sample.
inline std::vector<double> cluster_aided_predict(std::span<const double> x, std::span<const double> z,
                                                 std::span<const double> prior_row,
                                                 const ClusterAidedClassifier& clf) {
  if (x.size() != clf.dim || z.size() != clf.dim || prior_row.size() != clf.classes) {
    throw ContractError("cluster_aided_predict: expected x, z of width " + std::to_string(clf.dim) +
                        " and a prior of width " + std::to_string(clf.classes));
  }
  return clf.probabilities(Matrix::row_vector(x), Matrix::row_vector(z), Matrix::row_vector(prior_row)).data();
}

struct CascadeStage {
  TrainedFilter filter;
  ClusterPriorTable prior;
  ClusterAidedClassifier classifier;
  // Training-time bookkeeping, not serialized: indices into the dataset given
  // to fit_cascade.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> filtered_indices;
};

struct DlsaCascade {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<CascadeStage> stages;
  ResidualClassifier residual;
  std::vector<std::uint64_t> train_counts;
  std::vector<std::size_t> residual_indices;  // not serialized
};

struct RoutingRecord {
  std::optional<std::size_t> stage;  // nullopt: residual classifier
  std::vector<double> loglik;        // one per visited stage
  std::vector<std::vector<double>> z;
  std::optional<std::size_t> cluster;
};

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
  RoutingRecord route;
};

inline void check_features(const DlsaCascade& c, const Matrix& x) {
  if (x.cols() != c.dim) {
    throw DimensionError("cascade expects D=" + std::to_string(c.dim) + ", got " + std::to_string(x.cols()));
  }
}

/// Routes a batch: every row visits stages in order until one accepts it.
inline std::vector<RoutingRecord> route_batch(const DlsaCascade& c, const Matrix& x) {
  check_features(c, x);
  std::vector<RoutingRecord> out(x.rows());
  std::vector<std::size_t> pending(x.rows());
  for (std::size_t i = 0; i < pending.size(); ++i) pending[i] = i;
  for (std::size_t s = 0; s < c.stages.size() && !pending.empty(); ++s) {
    const auto& st = c.stages[s];
    Matrix xs(pending.size(), c.dim);
    for (std::size_t r = 0; r < pending.size(); ++r)
      std::copy(x.row(pending[r]).begin(), x.row(pending[r]).end(), xs.row(r).begin());
    const auto scores = score_batch(st.filter.flow, st.filter.latent, xs);
    std::vector<std::size_t> next;
    for (std::size_t r = 0; r < pending.size(); ++r) {
      RoutingRecord& rec = out[pending[r]];
      rec.loglik.push_back(scores.loglik[r]);
      rec.z.emplace_back(scores.z.row(r).begin(), scores.z.row(r).end());
      if (scores.loglik[r] >= st.filter.alpha) {
        rec.stage = s;
        rec.cluster = scores.cluster[r];
      } else {
        next.push_back(pending[r]);
      }
    }
    pending = std::move(next);
  }
  return out;
}

inline RoutingRecord route(const DlsaCascade& c, std::span<const double> x) {
  return route_batch(c, Matrix::row_vector(x))[0];
}

inline std::vector<Prediction> predict_batch(const DlsaCascade& c, const Matrix& x) {
  auto routes = route_batch(c, x);
  std::vector<Prediction> out(x.rows());
  // Group rows by destination so each classifier runs once per batch.
  std::vector<std::vector<std::size_t>> groups(c.stages.size() + 1);
  for (std::size_t i = 0; i < routes.size(); ++i) groups[routes[i].stage.value_or(c.stages.size())].push_back(i);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    if (idx.empty()) continue;
    Matrix xs(idx.size(), c.dim);
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), xs.row(r).begin());
    Matrix probs;
    if (g < c.stages.size()) {
      const auto& st = c.stages[g];
      Matrix zs(idx.size(), c.dim), ps(idx.size(), c.classes);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& rec = routes[idx[r]];
        std::copy(rec.z[g].begin(), rec.z[g].end(), zs.row(r).begin());
        const auto prow = st.prior.row(*rec.cluster);
        std::copy(prow.begin(), prow.end(), ps.row(r).begin());
      }
      probs = st.classifier.probabilities(xs, zs, ps);
    } else {
      probs = c.residual.probabilities(xs);
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
      Prediction& p = out[idx[r]];
      p.probabilities.assign(probs.row(r).begin(), probs.row(r).end());
      p.label = argmax(p.probabilities);
      p.route = std::move(routes[idx[r]]);
    }
  }
  return out;
}

inline Prediction predict(const DlsaCascade& c, std::span<const double> x) {
  return predict_batch(c, Matrix::row_vector(x))[0];
}

inline std::vector<std::size_t> predicted_labels(std::span<const Prediction> preds) {
  std::vector<std::size_t> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back(p.label);
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

struct StageOverride {
  std::optional<std::size_t> clusters;
  std::optional<double> filter_fraction;
  std::optional<std::size_t> epochs;
};

struct CascadeConfig {
  TrainConfig train;
  std::size_t stages = 3;
  ClassifierKind residual_kind = ClassifierKind::balsoftmax;
  std::vector<StageOverride> overrides;  // indexed by stage; missing entries use `train`

  TrainConfig stage_config(std::size_t s) const {
    TrainConfig cfg = train;
    cfg.seed = derive_seed(train.seed, 100 + s);
    if (s < overrides.size()) {
      const auto& o = overrides[s];
      if (o.clusters) cfg.clusters = *o.clusters;
      if (o.filter_fraction) cfg.filter_fraction = *o.filter_fraction;
      if (o.epochs) cfg.epochs = *o.epochs;
    }
    return cfg;
  }
};

inline std::vector<std::size_t> gather(std::span<const std::size_t> from, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(from[i]);
  return out;
}

inline DlsaCascade fit_cascade(const FeatureDataset& data, const CascadeConfig& cc) {
  cc.train.validate();
  data.validate();
  if (data.empty()) throw ContractError("fit_cascade: empty training set");
  DlsaCascade model;
  model.dim = data.dim;
  model.classes = data.classes;
  model.train_counts = data.counts();

  const auto all_y = data.label_indices();
  std::vector<std::size_t> current(data.size());
  for (std::size_t i = 0; i < current.size(); ++i) current[i] = i;

  for (std::size_t s = 0; s < cc.stages; ++s) {
    const TrainConfig cfg = cc.stage_config(s);
    cfg.validate();
    const FeatureDataset sub = data.subset(current);
    if (sub.size() < 2 || distinct_labels(sub.labels) < 2) {
      throw TrainingError("residual training set exhausted before stage " + std::to_string(s + 1) + " (" +
                          std::to_string(sub.size()) +
                          " samples left); use a smaller filter fraction or fewer stages");
    }
    CascadeStage st;
    st.train_indices = current;
    st.filter = train_flow_filter(sub, cfg);

    const auto& local = st.filter.filtered;
    st.filtered_indices = gather(current, local);
    const auto filt_y = gather(all_y, st.filtered_indices);
    const auto filt_h = gather(st.filter.train_clusters, local);
    st.prior = build_cluster_prior(filt_h, filt_y, cfg.clusters, data.classes);

    const Matrix fx = data.rows(st.filtered_indices);
    const auto latents = score_batch(st.filter.flow, st.filter.latent, fx);
    Matrix fp(local.size(), data.classes);
    for (std::size_t r = 0; r < local.size(); ++r) {
      const auto row = st.prior.row(filt_h[r]);
      std::copy(row.begin(), row.end(), fp.row(r).begin());
    }
    st.classifier = train_cluster_classifier(fx, latents.z, fp, filt_y, data.classes, cfg,
                                             derive_seed(cfg.seed, 5))
                        .classifier;

    std::vector<bool> taken(sub.size(), false);
    for (auto i : local) taken[i] = true;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < current.size(); ++i)
      if (!taken[i]) rest.push_back(current[i]);
    current = std::move(rest);
    model.stages.push_back(std::move(st));
  }

  if (current.empty()) {
    throw TrainingError("residual training set is empty after " + std::to_string(cc.stages) +
                        " stages; use a smaller filter fraction or fewer stages");
  }
  model.residual_indices = current;
  std::vector<std::size_t> res_idx = current;
  if (cc.train.residual_on_full_set) {
    res_idx.resize(data.size());
    for (std::size_t i = 0; i < res_idx.size(); ++i) res_idx[i] = i;
  }
  model.residual = train_residual_classifier(data.rows(res_idx), gather(all_y, res_idx), data.classes,
                                             cc.residual_kind, cc.train, derive_seed(cc.train.seed, 6))
                       .classifier;
  return model;
}

// ---------------------------------------------------------------------------
// Model container

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void put(io::Writer& w, const ad::Parameter& p) { w.f64s(p.value.data()); }

inline void take(io::Reader& r, ad::Parameter& p, std::size_t rows, std::size_t cols, std::uint32_t id,
                 const char* what) {
  Matrix m(rows, cols);
  r.f64s(m.data(), what);
  p = ad::Parameter(std::move(m), id);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_cascade(const DlsaCascade& c) {
  io::Writer w;
  w.magic("DLSA");
  w.u32(kModelFormatVersion);
  const std::size_t payload = w.size();
  w.u32(static_cast<std::uint32_t>(c.dim));
  w.u32(static_cast<std::uint32_t>(c.classes));
  w.u32(c.stages.empty() ? 0u : static_cast<std::uint32_t>(c.stages[0].filter.latent.clusters()));
  w.u32(static_cast<std::uint32_t>(c.stages.size()));
  for (const auto& st : c.stages) {
    const auto& flow = st.filter.flow;
    w.u32(static_cast<std::uint32_t>(flow.blocks.size()));
    w.u32(static_cast<std::uint32_t>(flow.blocks.empty() ? 0 : flow.blocks[0].made.hidden));
    for (const auto& b : flow.blocks) {
      for (auto p : b.permutation) w.u32(static_cast<std::uint32_t>(p));
      for (const auto* p : b.made.parameters()) detail::put(w, *p);
    }
    const auto& g = st.filter.latent;
    w.u32(static_cast<std::uint32_t>(g.clusters()));
    w.f64(g.sigma());
    w.f64s(g.centers().data());
    w.f64(st.filter.alpha);
    w.f64s(st.prior.table.data());
    for (auto n : st.prior.occupancy) w.u64(n);
    detail::put(w, st.classifier.w_feat);
    detail::put(w, st.classifier.b_feat);
    detail::put(w, st.classifier.w_prior);
    detail::put(w, st.classifier.b_prior);
  }
  w.u32(static_cast<std::uint32_t>(c.residual.kind));
  w.f64(c.residual.cosine_scale);
  detail::put(w, c.residual.weight);
  detail::put(w, c.residual.bias);
  w.f64s(c.residual.train_log_counts);
  for (auto n : c.train_counts) w.u64(n);
  io::seal(w, payload);
  return std::move(w.buffer());
}

inline DlsaCascade deserialize_cascade(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic("DLSA");
  const auto version = r.u32("version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported DLSA version " + std::to_string(version) + " at offset 4");
  }
  const std::size_t end = io::verify_seal(bytes, r.offset());
  io::Reader body(bytes.first(end));
  body.u32("magic");
  body.u32("version");

  DlsaCascade c;
  c.dim = body.u32("dimension");
  c.classes = body.u32("class count");
  body.u32("cluster count");
  const auto stages = body.u32("stage count");
  if (c.dim < 2 || c.classes < 2) throw FormatError("model header: D and C must be >= 2");
  const std::size_t d = c.dim, cl = c.classes;
  for (std::uint32_t s = 0; s < stages; ++s) {
    CascadeStage st;
    const auto blocks = body.u32("flow blocks");
    const auto hidden = body.u32("hidden width");
    if (blocks < 1 || hidden < d) throw FormatError("stage " + std::to_string(s + 1) + ": invalid flow shape");
    FlowStack flow = build_flow(d, blocks, hidden, 0);
    for (auto& b : flow.blocks) {
      for (auto& p : b.permutation) {
        p = body.u32("permutation");
        if (p >= d) throw FormatError("permutation index out of range at offset " + std::to_string(body.offset() - 4));
      }
      try {
        inverse_permutation(b.permutation);
      } catch (const ContractError&) {
        throw FormatError("stage " + std::to_string(s + 1) + ": block permutation is not a bijection");
      }
      auto& m = b.made;
      detail::take(body, m.w_in, hidden, d, m.w_in.id, "w_in");
      detail::take(body, m.b_in, 1, hidden, m.b_in.id, "b_in");
      detail::take(body, m.w_mu, d, hidden, m.w_mu.id, "w_mu");
      detail::take(body, m.b_mu, 1, d, m.b_mu.id, "b_mu");
      detail::take(body, m.w_alpha, d, hidden, m.w_alpha.id, "w_alpha");
      detail::take(body, m.b_alpha, 1, d, m.b_alpha.id, "b_alpha");
    }
    st.filter.flow = std::move(flow);
    const auto k = body.u32("cluster count");
    if (k < 2) throw FormatError("stage " + std::to_string(s + 1) + ": cluster count below 2");
    const double sigma = body.f64("sigma");
    Matrix centers(k, d);
    body.f64s(centers.data(), "centers");
    st.filter.latent = GaussianMixtureLatent(std::move(centers), sigma);
    st.filter.alpha = body.f64("alpha");
    st.prior.table = Matrix(k, cl);
    body.f64s(st.prior.table.data(), "prior table");
    st.prior.occupancy.resize(k);
    for (auto& n : st.prior.occupancy) n = body.u64("occupancy");
    st.classifier = ClusterAidedClassifier::zeros(d, cl);
    detail::take(body, st.classifier.w_feat, cl, 2 * d, 0, "w_feat");
    detail::take(body, st.classifier.b_feat, 1, cl, 1, "b_feat");
    detail::take(body, st.classifier.w_prior, cl, cl, 2, "w_prior");
    detail::take(body, st.classifier.b_prior, 1, cl, 3, "b_prior");
    c.stages.push_back(std::move(st));
  }
  const auto kind = body.u32("residual kind");
  if (kind > 2) throw FormatError("unknown residual classifier kind " + std::to_string(kind));
  c.residual.kind = static_cast<ClassifierKind>(kind);
  c.residual.dim = d;
  c.residual.classes = cl;
  c.residual.cosine_scale = body.f64("cosine scale");
  detail::take(body, c.residual.weight, cl, d, 0, "residual weight");
  detail::take(body, c.residual.bias, 1, cl, 1, "residual bias");
  c.residual.train_log_counts.resize(cl);
  body.f64s(c.residual.train_log_counts, "residual log counts");
  c.train_counts.resize(cl);
  for (auto& n : c.train_counts) n = body.u64("training counts");
  if (body.remaining() != 0) {
    throw FormatError("trailing bytes at offset " + std::to_string(body.offset()) + " before CRC footer");
  }
  return c;
}

inline void save_cascade(const std::string& path, const DlsaCascade& c) { io::write_file(path, serialize_cascade(c)); }

inline DlsaCascade load_cascade(const std::string& path) { return deserialize_cascade(io::read_file(path)); }

}  // namespace dlsa
