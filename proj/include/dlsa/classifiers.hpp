#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dlsa/autodiff.hpp"
#include "dlsa/error.hpp"
#include "dlsa/matrix.hpp"

namespace dlsa {

enum class ClassifierKind : std::uint32_t { linear = 0, balsoftmax = 1, cosine = 2 };

inline const char* to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::linear: return "linear";
    case ClassifierKind::balsoftmax: return "balsoftmax";
    case ClassifierKind::cosine: return "cosine";
  }
  return "?";
}

inline ClassifierKind parse_classifier_kind(const std::string& s) {
  if (s == "linear") return ClassifierKind::linear;
  if (s == "balsoftmax") return ClassifierKind::balsoftmax;
  if (s == "cosine") return ClassifierKind::cosine;
  throw ConfigError("unknown classifier kind '" + s + "' (expected linear|balsoftmax|cosine)");
}

/// argmax with ties to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) kernels::softmax(logits.row(r), p.row(r));
  return p;
}

/// Softmax(FC[x, z] + FC[prior]) where prior is the class histogram of the
/// sample's predicted cluster.
struct ClusterAidedClassifier {
  std::size_t dim = 0;
  std::size_t classes = 0;
  ad::Parameter w_feat;   // C x 2D
  ad::Parameter b_feat;   // 1 x C
  ad::Parameter w_prior;  // C x C
  ad::Parameter b_prior;  // 1 x C

  static ClusterAidedClassifier zeros(std::size_t dim, std::size_t classes) {
    ClusterAidedClassifier c;
    c.dim = dim;
    c.classes = classes;
    c.w_feat = ad::Parameter(Matrix(classes, 2 * dim), 0);
    c.b_feat = ad::Parameter(Matrix(1, classes), 1);
    c.w_prior = ad::Parameter(Matrix(classes, classes), 2);
    c.b_prior = ad::Parameter(Matrix(1, classes), 3);
    return c;
  }

  std::vector<ad::Parameter*> parameters() { return {&w_feat, &b_feat, &w_prior, &b_prior}; }

  template <class Self>
  static ad::Var logits(ad::Tape& t, Self& self, ad::Var x, ad::Var z, ad::Var prior) {
    auto bind = [&t](auto& p) {
      if constexpr (std::is_const_v<std::remove_reference_t<decltype(p)>>) {
        return t.constant(p.value);
      } else {
        return t.param(p);
      }
    };
    ad::Var feat = ad::affine(ad::concat_cols(x, z), bind(self.w_feat), bind(self.b_feat));
    ad::Var pri = ad::affine(prior, bind(self.w_prior), bind(self.b_prior));
    return ad::add(feat, pri);
  }

  void check(const Matrix& x, const Matrix& z, const Matrix& prior) const {
    if (x.cols() != dim || z.cols() != dim || prior.cols() != classes || x.rows() != z.rows() ||
        x.rows() != prior.rows()) {
      throw DimensionError("ClusterAidedClassifier: inputs " + x.shape_string() + ", " + z.shape_string() + ", " +
                           prior.shape_string() + " do not match D=" + std::to_string(dim) +
                           ", C=" + std::to_string(classes));
    }
  }

  Matrix probabilities(const Matrix& x, const Matrix& z, const Matrix& prior) const {
    check(x, z, prior);
    ad::Tape t;
    return softmax_rows(logits(t, *this, t.constant(x), t.constant(z), t.constant(prior)).value());
  }
};

/// Last-stage classifier. balsoftmax adds log n_j to the logits during
/// training only; cosine scores are the scaled cosine between the feature
/// and each class embedding.
struct ResidualClassifier {
  ClassifierKind kind = ClassifierKind::linear;
  std::size_t dim = 0;
  std::size_t classes = 0;
  double cosine_scale = 16.0;
  ad::Parameter weight;  // C x D
  ad::Parameter bias;    // 1 x C, unused by cosine
  std::vector<double> train_log_counts;  // balsoftmax training offsets

  std::vector<ad::Parameter*> parameters() {
    if (kind == ClassifierKind::cosine) return {&weight};
    return {&weight, &bias};
  }

  template <class Self>
  static ad::Var logits(ad::Tape& t, Self& self, ad::Var x) {
    auto bind = [&t](auto& p) {
      if constexpr (std::is_const_v<std::remove_reference_t<decltype(p)>>) {
        return t.constant(p.value);
      } else {
        return t.param(p);
      }
    };
    if (self.kind == ClassifierKind::cosine) {
      ad::Var xn = ad::normalize_rows(x);
      ad::Var wn = ad::normalize_rows(bind(self.weight));
      ad::Var cos = ad::affine(xn, wn, t.constant(Matrix(1, self.classes)));
      return ad::scale(cos, self.cosine_scale);
    }
    return ad::affine(x, bind(self.weight), bind(self.bias));
  }

  Matrix inference_logits(const Matrix& x) const {
    if (x.cols() != dim) throw DimensionError("ResidualClassifier: feature width mismatch");
    ad::Tape t;
    return logits(t, *this, t.constant(x)).value();
  }

  Matrix probabilities(const Matrix& x) const { return softmax_rows(inference_logits(x)); }

  std::vector<std::size_t> predict(const Matrix& x) const {
    const Matrix l = inference_logits(x);
    std::vector<std::size_t> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = argmax(l.row(r));
    return out;
  }
};

}  // namespace dlsa
