#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dlsa/cascade.hpp"
#include "support.hpp"

using namespace dlsa;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.batch_size = 64;
  c.epochs = 3;
  c.clusters = 4;
  c.seed = 3;
  c.classifier_epochs = 10;
  c.classifier_batch = 32;
  c.grad_clip = 10.0;
  return c;
}

FeatureDataset small_data(std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.classes = 5;
  spec.beta = 10;
  spec.n_max = 100;
  spec.dim = 4;
  spec.seed = seed;
  return gen_synthetic(spec).train;
}

const DlsaCascade& fitted() {
  static const DlsaCascade model = [] {
    CascadeConfig cc;
    cc.train = small_config();
    cc.stages = 3;
    return fit_cascade(small_data(), cc);
  }();
  return model;
}

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace

TEST(ClusterPrior, HandExamples) {
  const std::vector<std::size_t> h{0, 0, 0, 2}, y{1, 1, 0, 1};
  const auto p = build_cluster_prior(h, y, 3, 2);
  EXPECT_DOUBLE_EQ(p.table(0, 1), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.table(0, 0), 1.0 / 3.0);
  EXPECT_EQ(p.table(2, 1), 1.0);
  EXPECT_EQ(p.table(2, 0), 0.0);
  EXPECT_EQ(p.table(1, 0), 0.5);  // empty cluster: uniform
  EXPECT_EQ(p.occupancy, (std::vector<std::uint64_t>{3, 0, 1}));
}

TEST(ClusterPrior, RowsAreDistributions) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> hk(0, 9), yc(0, 6);
  std::vector<std::size_t> h(500), y(500);
  for (std::size_t i = 0; i < 500; ++i) {
    h[i] = hk(rng);
    y[i] = yc(rng);
  }
  const auto p = build_cluster_prior(h, y, 12, 7);
  for (std::size_t k = 0; k < 12; ++k) {
    double s = 0.0;
    for (double v : p.row(k)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(build_cluster_prior(std::vector<std::size_t>{12}, std::vector<std::size_t>{0}, 12, 7), ContractError);
  EXPECT_THROW(build_cluster_prior(h, std::vector<std::size_t>{0}, 12, 7), DimensionError);
}

TEST(ClusterAidedPredict, ZeroWeightsGiveUniform) {
  const auto clf = ClusterAidedClassifier::zeros(3, 4);
  const std::vector<double> x{1, 2, 3}, z{-1, 0, 1}, prior{0.7, 0.1, 0.1, 0.1};
  for (double p : cluster_aided_predict(x, z, prior, clf)) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(ClusterAidedPredict, PriorDominates) {
  auto clf = ClusterAidedClassifier::zeros(2, 3);
  for (std::size_t i = 0; i < 3; ++i) clf.w_prior.value(i, i) = 20.0;
  const auto p = cluster_aided_predict(std::vector<double>{5, -5}, std::vector<double>{1, 1},
                                       std::vector<double>{0.1, 0.8, 0.1}, clf);
  EXPECT_EQ(argmax(p), 1u);
  EXPECT_GT(p[1], 0.9);
}

TEST(ClusterAidedPredict, ComponentwiseOracle) {
  std::mt19937_64 rng(3);
  const std::size_t d = 3, c = 4;
  auto clf = ClusterAidedClassifier::zeros(d, c);
  for (auto* p : clf.parameters())
    p->value = fixtures::random_matrix(p->value.rows(), p->value.cols(), rng, -1, 1);
  const Matrix x = fixtures::random_matrix(1, d, rng, -2, 2), z = fixtures::random_matrix(1, d, rng, -2, 2);
  const std::vector<double> prior{0.1, 0.2, 0.3, 0.4};
  std::vector<double> logit(c);
  for (std::size_t k = 0; k < c; ++k) {
    double v = clf.b_feat.value(0, k) + clf.b_prior.value(0, k);
    for (std::size_t j = 0; j < d; ++j) v += clf.w_feat.value(k, j) * x(0, j) + clf.w_feat.value(k, d + j) * z(0, j);
    for (std::size_t j = 0; j < c; ++j) v += clf.w_prior.value(k, j) * prior[j];
    logit[k] = v;
  }
  double norm = 0.0;
  for (double v : logit) norm += std::exp(v);
  const auto p = cluster_aided_predict(x.row(0), z.row(0), prior, clf);
  for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(p[k], std::exp(logit[k]) / norm, 1e-12);
}

TEST(ClusterAidedPredict, ShapeMismatch) {
  const auto clf = ClusterAidedClassifier::zeros(3, 4);
  EXPECT_THROW(cluster_aided_predict(std::vector<double>(2), std::vector<double>(3), std::vector<double>(4), clf),
               ContractError);
  EXPECT_THROW(cluster_aided_predict(std::vector<double>(3), std::vector<double>(3), std::vector<double>(5), clf),
               ContractError);
}

TEST(Cascade, ZeroStagesIsTheResidualClassifier) {
  CascadeConfig cc;
  cc.train = small_config();
  cc.stages = 0;
  const auto data = small_data();
  const auto model = fit_cascade(data, cc);
  EXPECT_TRUE(model.stages.empty());
  EXPECT_EQ(model.residual_indices.size(), data.size());
  const Matrix x = data.to_matrix();
  const auto preds = predict_batch(model, x);
  const Matrix ref = model.residual.probabilities(x);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    EXPECT_FALSE(preds[i].route.stage.has_value());
    EXPECT_TRUE(preds[i].route.loglik.empty());
    for (std::size_t k = 0; k < model.classes; ++k) EXPECT_EQ(preds[i].probabilities[k], ref(i, k));
  }
}

TEST(Cascade, FirstAcceptingStageWins) {
  const auto& model = fitted();
  const auto data = small_data(9);
  const auto routes = route_batch(model, data.to_matrix());
  for (const auto& r : routes) {
    const std::size_t visited = r.loglik.size();
    ASSERT_GE(visited, 1u);
    for (std::size_t s = 0; s + 1 < visited; ++s) EXPECT_LT(r.loglik[s], model.stages[s].filter.alpha);
    if (r.stage) {
      EXPECT_EQ(*r.stage, visited - 1);
      EXPECT_GE(r.loglik.back(), model.stages[*r.stage].filter.alpha);
      EXPECT_TRUE(r.cluster.has_value());
    } else {
      EXPECT_EQ(visited, model.stages.size());
      EXPECT_LT(r.loglik.back(), model.stages.back().filter.alpha);
    }
  }
}

TEST(Cascade, TrainingFractionsFollowTheQuantile) {
  const auto& model = fitted();
  const double rho = small_config().filter_fraction;
  std::size_t n = small_data().size();
  const std::size_t total = n;
  for (const auto& st : model.stages) {
    EXPECT_EQ(st.train_indices.size(), n);
    EXPECT_NEAR(static_cast<double>(st.filtered_indices.size()) / static_cast<double>(n), rho, 1.0 / static_cast<double>(n));
    n -= filtered_count(n, rho);
  }
  EXPECT_EQ(model.residual_indices.size(), n);
  EXPECT_NEAR(static_cast<double>(n) / static_cast<double>(total), std::pow(1.0 - rho, 3), 2.0 / static_cast<double>(total));
}

TEST(Cascade, StagesPartitionTheTrainingSet) {
  const auto& model = fitted();
  std::vector<int> seen(small_data().size(), 0);
  for (const auto& st : model.stages)
    for (auto i : st.filtered_indices) ++seen[i];
  for (auto i : model.residual_indices) ++seen[i];
  for (int v : seen) EXPECT_EQ(v, 1);
}

TEST(Cascade, TrainingSamplesRouteLikeTheirStageWhenFiltered) {
  // stage s scores its own training subset, so a sample filtered at stage s and
  // rejected by every earlier stage must be routed to s at inference time.
  const auto& model = fitted();
  const auto data = small_data();
  const auto routes = route_batch(model, data.to_matrix());
  for (std::size_t s = 0; s < model.stages.size(); ++s)
    for (auto i : model.stages[s].filtered_indices) EXPECT_EQ(routes[i].stage, std::optional<std::size_t>(s)) << i;
}

TEST(Cascade, BatchAndSinglePredictionsAgree) {
  const auto& model = fitted();
  const Matrix x = small_data(4).to_matrix();
  const auto batch = predict_batch(model, x);
  for (std::size_t i = 0; i < x.rows(); i += 7) {
    const auto one = predict(model, x.row(i));
    EXPECT_EQ(one.label, batch[i].label);
    EXPECT_EQ(one.route.stage, batch[i].route.stage);
    for (std::size_t k = 0; k < model.classes; ++k)
      EXPECT_EQ(bits(one.probabilities[k]), bits(batch[i].probabilities[k]));
  }
}

TEST(Cascade, FitIsDeterministic) {
  CascadeConfig cc;
  cc.train = small_config();
  cc.stages = 3;
  EXPECT_EQ(serialize_cascade(fit_cascade(small_data(), cc)), serialize_cascade(fitted()));
}

TEST(Cascade, DimensionMismatch) {
  EXPECT_THROW(route_batch(fitted(), Matrix(2, 5)), DimensionError);
}

TEST(Cascade, ResidualExhaustion) {
  CascadeConfig cc;
  cc.train = small_config();
  cc.train.filter_fraction = 0.9;
  cc.stages = 4;
  const auto data = small_data();
  std::vector<std::size_t> idx, taken(data.classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i)
    if (taken[data.labels[i]]++ < 3) idx.push_back(i);
  EXPECT_THROW(fit_cascade(data.subset(idx), cc), TrainingError);
}

TEST(ModelFile, RoundTripIsBitIdentical) {
  const auto& model = fitted();
  const auto bytes = serialize_cascade(model);
  const auto back = deserialize_cascade(bytes);
  EXPECT_EQ(serialize_cascade(back), bytes);
  std::mt19937_64 rng(5);
  const Matrix x = fixtures::random_matrix(1000, model.dim, rng, -4, 4);
  const auto a = predict_batch(model, x), b = predict_batch(back, x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    ASSERT_EQ(a[i].label, b[i].label);
    ASSERT_EQ(a[i].route.stage, b[i].route.stage);
    for (std::size_t k = 0; k < model.classes; ++k)
      ASSERT_EQ(bits(a[i].probabilities[k]), bits(b[i].probabilities[k]));
  }
}

TEST(ModelFile, SaveAndLoad) {
  const auto path = (std::filesystem::temp_directory_path() / "dlsa_test_cascade.dlsa").string();
  save_cascade(path, fitted());
  EXPECT_EQ(serialize_cascade(load_cascade(path)), serialize_cascade(fitted()));
  std::filesystem::remove(path);
}

TEST(ModelFile, CorruptionRejected) {
  const auto good = serialize_cascade(fitted());
  for (std::size_t i : {std::size_t{0}, std::size_t{5}, std::size_t{9}, good.size() / 2, good.size() - 1}) {
    auto bad = good;
    bad[i] ^= 0x21;
    EXPECT_THROW(deserialize_cascade(bad), FormatError) << i;
  }
  const std::vector<std::uint8_t> cut(good.begin(), good.end() - 9);
  EXPECT_THROW(deserialize_cascade(cut), FormatError);
}

TEST(ModelFile, TrailingBytesRejectedEvenWithValidCrc) {
  auto bytes = serialize_cascade(fitted());
  bytes.resize(bytes.size() - 4);
  bytes.push_back(0);
  io::Writer w;
  w.bytes(bytes);
  io::seal(w, 8);
  try {
    (void)deserialize_cascade(w.buffer());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos);
  }
}

TEST(ModelFile, ZeroStageModelRoundTrips) {
  CascadeConfig cc;
  cc.train = small_config();
  cc.stages = 0;
  const auto model = fit_cascade(small_data(), cc);
  const auto bytes = serialize_cascade(model);
  EXPECT_EQ(serialize_cascade(deserialize_cascade(bytes)), bytes);
}
