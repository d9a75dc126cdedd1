#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dlsa/autodiff.hpp"
#include "support.hpp"

using dlsa::Matrix;
using dlsa::fixtures::random_matrix;
namespace ad = dlsa::ad;

namespace {

// Contracts any node with fixed random weights so every output entry gets a
// distinct upstream gradient.
ad::Var contract(ad::Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> w(v.value().size());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& x : w) x = u(rng);
  Matrix wm(v.rows(), v.cols(), std::move(w));
  return ad::sum(ad::mul(v, v.tape()->constant(std::move(wm))));
}

}  // namespace

TEST(MaskedAffine, IdentityWeightsReturnInput) {
  ad::Tape t;
  Matrix v{{0.5, -2.0, 3.0}};
  auto y = ad::masked_affine(t.constant(v), t.constant(Matrix::identity(3)), Matrix(3, 3, 1.0),
                             t.constant(Matrix(1, 3)));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y.value()(0, j), v(0, j));
}

TEST(MaskedAffine, ZeroMaskGivesBiasRows) {
  ad::Tape t;
  Matrix b{{1.5, -0.25}};
  auto y = ad::masked_affine(t.constant(Matrix{{1, 2, 3}, {4, 5, 6}}), t.constant(Matrix{{9, 9, 9}, {7, 7, 7}}),
                             Matrix(2, 3, 0.0), t.constant(b));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(y.value()(r, 0), 1.5);
    EXPECT_EQ(y.value()(r, 1), -0.25);
  }
}

TEST(MaskedAffine, HandExample) {
  ad::Tape t;
  auto y = ad::masked_affine(t.constant(Matrix{{1, 1}}), t.constant(Matrix{{1, 2}, {3, 4}}), Matrix{{1, 0}, {1, 1}},
                             t.constant(Matrix(1, 2)));
  EXPECT_EQ(y.value()(0, 0), 1.0);
  EXPECT_EQ(y.value()(0, 1), 7.0);
}

TEST(MaskedAffine, ShapeMismatchNamesOperands) {
  ad::Tape t;
  try {
    ad::masked_affine(t.constant(Matrix(1, 3)), t.constant(Matrix(2, 2)), Matrix(2, 2, 1.0), t.constant(Matrix(1, 2)));
    FAIL() << "expected DimensionError";
  } catch (const dlsa::DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("1x3"), std::string::npos);
  }
  EXPECT_THROW(ad::masked_affine(t.constant(Matrix(1, 2)), t.constant(Matrix(2, 2)), Matrix(2, 3, 1.0),
                                 t.constant(Matrix(1, 2))),
               dlsa::DimensionError);
}

TEST(Backward, LinearCase) {
  ad::Parameter w(Matrix{{3.0}}, 0);
  ad::Tape t;
  t.backward(ad::mul(t.param(w), t.constant(Matrix{{2.0}})));
  EXPECT_EQ(w.grad[0], 2.0);
}

TEST(Backward, Quadratic) {
  ad::Parameter w(Matrix{{1.0, -3.0}}, 0);
  ad::Tape t;
  ad::Var v = t.param(w);
  t.backward(ad::sum(ad::mul(v, v)));
  EXPECT_EQ(w.grad[0], 2.0);
  EXPECT_EQ(w.grad[1], -6.0);
}

TEST(Backward, ConsumedTapeIsStateError) {
  ad::Parameter w(Matrix{{1.0}}, 0);
  ad::Tape t;
  ad::Var out = ad::sum(t.param(w));
  t.backward(out);
  EXPECT_TRUE(t.consumed());
  EXPECT_THROW(t.backward(out), dlsa::StateError);
}

TEST(Backward, NonScalarIsContractError) {
  ad::Parameter w(Matrix{{1.0, 2.0}}, 0);
  ad::Tape t;
  EXPECT_THROW(t.backward(t.param(w)), dlsa::ContractError);
}

TEST(Backward, GradientsAccumulateUntilReset) {
  ad::Parameter w(Matrix{{1.0}}, 0);
  for (int i = 0; i < 2; ++i) {
    ad::Tape t;
    t.backward(ad::scale(t.param(w), 3.0));
  }
  EXPECT_EQ(w.grad[0], 6.0);
  w.zero_grad();
  EXPECT_EQ(w.grad[0], 0.0);
  EXPECT_TRUE(w.grad.same_shape(w.value));
}

TEST(Backward, TwoLayerMaskedNetworkMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const std::size_t d = 8, h = 16;
  Matrix mask1(h, d), mask2(d, h);
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t j = 0; j < d; ++j) mask1(k, j) = (k % (d - 1)) + 1 >= j + 1 ? 1.0 : 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < h; ++k) mask2(i, k) = i + 1 > (k % (d - 1)) + 1 ? 1.0 : 0.0;
  ad::Parameter w1(random_matrix(h, d, rng), 0), b1(random_matrix(1, h, rng), 1);
  ad::Parameter w2(random_matrix(d, h, rng), 2), b2(random_matrix(1, d, rng), 3);
  const Matrix x = random_matrix(5, d, rng);
  std::vector<ad::Parameter*> params{&w1, &b1, &w2, &b2};
  auto loss = [&](ad::Tape& t) {
    ad::Var hid = ad::tanh(ad::masked_affine(t.constant(x), t.param(w1), mask1, t.param(b1)));
    return contract(ad::masked_affine(hid, t.param(w2), mask2, t.param(b2)), 5);
  };
  const auto res = ad::check_gradients(loss, params);
  EXPECT_LT(res.max_rel_error, 1e-4) << "param " << res.worst_param << " entry " << res.worst_entry;
}

// Every primitive against central differences over 100 randomized inputs.
class PrimitiveGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  const std::string op = GetParam();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    ad::Parameter a(random_matrix(3, 4, rng), 0);
    ad::Parameter b(random_matrix(3, 4, rng), 1);
    ad::Parameter w(random_matrix(2, 4, rng), 2);
    ad::Parameter bias(random_matrix(1, 2, rng), 3);
    ad::Parameter pos(random_matrix(3, 4, rng, 0.2, 2.0), 4);
    const Matrix centers = random_matrix(5, 4, rng);
    const Matrix mask{{1, 0, 1, 1}, {0, 1, 1, 0}};
    std::function<ad::Var(ad::Tape&)> f;
    std::vector<ad::Parameter*> params{&a};
    if (op == "add") {
      f = [&](ad::Tape& t) { return contract(ad::add(t.param(a), t.param(b)), 1); };
      params.push_back(&b);
    } else if (op == "sub") {
      f = [&](ad::Tape& t) { return contract(ad::sub(t.param(a), t.param(b)), 1); };
      params.push_back(&b);
    } else if (op == "mul") {
      f = [&](ad::Tape& t) { return contract(ad::mul(t.param(a), t.param(b)), 1); };
      params.push_back(&b);
    } else if (op == "scale") {
      f = [&](ad::Tape& t) { return contract(ad::add_scalar(ad::scale(t.param(a), -1.7), 0.3), 1); };
    } else if (op == "tanh") {
      f = [&](ad::Tape& t) { return contract(ad::tanh(t.param(a)), 1); };
    } else if (op == "exp") {
      f = [&](ad::Tape& t) { return contract(ad::exp(t.param(a)), 1); };
    } else if (op == "log") {
      f = [&](ad::Tape& t) { return contract(ad::log(t.param(pos)), 1); };
      params = {&pos};
    } else if (op == "sum") {
      f = [&](ad::Tape& t) { return ad::sum(ad::mul(t.param(a), t.param(a))); };
    } else if (op == "mean") {
      f = [&](ad::Tape& t) { return ad::mean(ad::mul(t.param(a), t.param(b))); };
      params.push_back(&b);
    } else if (op == "weighted_sum") {
      f = [&](ad::Tape& t) { return ad::weighted_sum(ad::row_sum(t.param(a)), {0.5, -2.0, 1.25}); };
    } else if (op == "row_sum") {
      f = [&](ad::Tape& t) { return contract(ad::row_sum(ad::tanh(t.param(a))), 1); };
    } else if (op == "col_mean") {
      f = [&](ad::Tape& t) { return contract(ad::col_mean(ad::tanh(t.param(a))), 1); };
    } else if (op == "logsumexp") {
      f = [&](ad::Tape& t) { return contract(ad::logsumexp(ad::scale(t.param(a), 3.0)), 1); };
    } else if (op == "softmax") {
      f = [&](ad::Tape& t) { return contract(ad::softmax(ad::scale(t.param(a), 2.0)), 1); };
    } else if (op == "concat_cols") {
      f = [&](ad::Tape& t) { return contract(ad::tanh(ad::concat_cols(t.param(a), t.param(b))), 1); };
      params.push_back(&b);
    } else if (op == "select") {
      f = [&](ad::Tape& t) {
        return contract(ad::select_rows(ad::select_cols(t.param(a), {3, 0, 0, 2}), {2, 2, 0}), 1);
      };
    } else if (op == "pick") {
      f = [&](ad::Tape& t) { return contract(ad::pick(t.param(a), {1, 3, 0}), 1); };
    } else if (op == "add_row_constant") {
      f = [&](ad::Tape& t) { return contract(ad::tanh(ad::add_row_constant(t.param(a), {1, -1, 0.5, 2})), 1); };
    } else if (op == "normalize_rows") {
      f = [&](ad::Tape& t) { return contract(ad::normalize_rows(t.param(a)), 1); };
    } else if (op == "affine") {
      f = [&](ad::Tape& t) { return contract(ad::affine(t.param(a), t.param(w), t.param(bias)), 1); };
      params = {&a, &w, &bias};
    } else if (op == "masked_affine") {
      f = [&](ad::Tape& t) { return contract(ad::masked_affine(t.param(a), t.param(w), mask, t.param(bias)), 1); };
      params = {&a, &w, &bias};
    } else if (op == "squared_distances") {
      f = [&](ad::Tape& t) { return contract(ad::squared_distances(t.param(a), centers), 1); };
    } else {
      FAIL() << "unknown op " << op;
    }
    const auto res = ad::check_gradients(f, params);
    worst = std::max(worst, res.max_rel_error);
  }
  EXPECT_LT(worst, 1e-4) << op;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient,
                         ::testing::Values("add", "sub", "mul", "scale", "tanh", "exp", "log", "sum", "mean",
                                           "weighted_sum", "row_sum", "col_mean", "logsumexp", "softmax",
                                           "concat_cols", "select", "pick", "add_row_constant", "normalize_rows",
                                           "affine", "masked_affine", "squared_distances"));

TEST(Logsumexp, Examples) {
  ad::Tape t;
  EXPECT_DOUBLE_EQ(ad::logsumexp(t.constant(Matrix{{0.0, 0.0}})).scalar(), std::log(2.0));
  EXPECT_EQ(ad::logsumexp(t.constant(Matrix{{-3.25}})).scalar(), -3.25);
  const double big = ad::logsumexp(t.constant(Matrix{{1000.0, 1000.0}})).scalar();
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_DOUBLE_EQ(big, 1000.0 + std::log(2.0));
}

TEST(Logsumexp, AgreesWithNaiveFormulaAtSmallMagnitude) {
  std::mt19937_64 rng(3);
  ad::Tape t;
  for (int i = 0; i < 50; ++i) {
    Matrix v = random_matrix(1, 7, rng, -5, 5);
    double naive = 0.0;
    for (double x : v.data()) naive += std::exp(x);
    EXPECT_NEAR(ad::logsumexp(t.constant(v)).scalar(), std::log(naive), 1e-12);
  }
}

TEST(Logsumexp, Errors) {
  ad::Tape t;
  EXPECT_THROW(ad::logsumexp(t.constant(Matrix(1, 0))), dlsa::ContractError);
  EXPECT_THROW(ad::logsumexp(t.constant(Matrix{{1.0, std::nan("")}})), dlsa::NumericError);
}

TEST(Logsumexp, BoundsProperty) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(1, 20);
  ad::Tape t;
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = static_cast<std::size_t>(len(rng));
    Matrix v = random_matrix(1, n, rng, -50, 50);
    double m = v[0];
    for (double x : v.data()) m = std::max(m, x);
    const double l = ad::logsumexp(t.constant(v)).scalar();
    EXPECT_GE(l, m);
    EXPECT_LE(l, m + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(Tape, RepeatedRunsAreBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(77);
    ad::Parameter w(random_matrix(6, 5, rng), 0), b(random_matrix(1, 6, rng), 1);
    const Matrix x = random_matrix(9, 5, rng);
    ad::Tape t;
    ad::Var y = ad::logsumexp(ad::tanh(ad::affine(t.constant(x), t.param(w), t.param(b))));
    ad::Var out = ad::sum(y);
    const double v = out.scalar();
    t.backward(out);
    std::vector<double> all{v};
    all.insert(all.end(), w.grad.data().begin(), w.grad.data().end());
    all.insert(all.end(), b.grad.data().begin(), b.grad.data().end());
    return all;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Tape, ForeignVarRejected) {
  ad::Tape t1, t2;
  ad::Var a = t1.constant(Matrix(1, 1, 1.0));
  ad::Var b = t2.constant(Matrix(1, 1, 1.0));
  EXPECT_THROW(ad::add(a, b), dlsa::ContractError);
}

TEST(Log, ClampsAtEpsilon) {
  ad::Tape t;
  EXPECT_DOUBLE_EQ(ad::log(t.constant(Matrix{{0.0}})).scalar(), std::log(1e-12));
}
