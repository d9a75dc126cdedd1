#pragma once

// Feature datasets: synthetic long-tailed generation, the DLFT container,
// and per-class statistics.
//
// DLFT layout (little-endian):
//   "DLFT" | version u32 = 1 | N u64 | D u32 | C u32        header
//   N*D f32 features, row-major | N u32 labels (1-based)    payload
//   CRC-32 of payload u32                                   footer

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dlsa/binary_io.hpp"
#include "dlsa/error.hpp"
#include "dlsa/matrix.hpp"

namespace dlsa {

/// Features are stored as 32-bit floats and widened to double on access.
/// Labels are 0-based in memory and 1-based on disk.
struct FeatureDataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<float> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<const float> row(std::size_t i) const { return {features.data() + i * dim, dim}; }

  std::vector<std::uint64_t> counts() const {
    std::vector<std::uint64_t> c(classes, 0);
    for (auto y : labels) ++c[y];
    return c;
  }

  std::vector<std::size_t> label_indices() const { return {labels.begin(), labels.end()}; }

  Matrix to_matrix() const {
    Matrix m(size(), dim);
    for (std::size_t i = 0; i < features.size(); ++i) m[i] = static_cast<double>(features[i]);
    return m;
  }

  Matrix rows(std::span<const std::size_t> idx) const {
    Matrix m(idx.size(), dim);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto src = row(idx[r]);
      for (std::size_t c = 0; c < dim; ++c) m(r, c) = static_cast<double>(src[c]);
    }
    return m;
  }

  FeatureDataset subset(std::span<const std::size_t> idx) const {
    FeatureDataset out;
    out.dim = dim;
    out.classes = classes;
    out.features.reserve(idx.size() * dim);
    out.labels.reserve(idx.size());
    for (auto i : idx) {
      const auto r = row(i);
      out.features.insert(out.features.end(), r.begin(), r.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  void validate() const {
    if (features.size() != labels.size() * dim) throw ContractError("FeatureDataset: feature buffer size mismatch");
    for (auto y : labels)
      if (y >= classes) throw ContractError("FeatureDataset: label " + std::to_string(y + 1) + " exceeds C");
  }
};

/// max(n_i) / min(n_i) over classes with at least one sample.
inline double imbalance_factor(std::span<const std::uint64_t> counts) {
  std::uint64_t lo = 0, hi = 0;
  for (auto c : counts) {
    if (c == 0) continue;
    lo = lo == 0 ? c : std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (lo == 0) throw ContractError("imbalance_factor: no populated class");
  return static_cast<double>(hi) / static_cast<double>(lo);
}

enum class ClassGeometry { isotropic, head_tail };

struct SyntheticSpec {
  std::size_t classes = 50;
  double beta = 100.0;
  std::size_t dim = 32;
  std::size_t n_max = 500;
  double center_scale = 1.0;
  double spread = 1.0;
  std::size_t test_per_class = 20;
  std::uint64_t seed = 0;
  ClassGeometry geometry = ClassGeometry::isotropic;
  // head_tail geometry: centers of classes with n_i <= head_threshold are
  // moved by tail_shift along one random unit direction.
  double tail_shift = 0.0;
  std::size_t head_threshold = 50;
};

/// n_i = round(n_max * i^-gamma), gamma = log(beta) / log(C), i = 1..C.
inline std::vector<std::uint64_t> power_law_counts(std::size_t classes, double beta, std::size_t n_max) {
  if (classes < 2) throw ContractError("power_law_counts: need at least 2 classes");
  if (!(beta >= 1.0)) throw ContractError("power_law_counts: imbalance factor must be >= 1");
  if (static_cast<double>(n_max) < beta) {
    throw ContractError("power_law_counts: n_max " + std::to_string(n_max) + " below imbalance factor " +
                        std::to_string(beta) + " leaves the smallest class empty");
  }
  const double gamma = std::log(beta) / std::log(static_cast<double>(classes));
  std::vector<std::uint64_t> counts(classes);
  for (std::size_t i = 0; i < classes; ++i) {
    const double n = static_cast<double>(n_max) * std::pow(static_cast<double>(i + 1), -gamma);
    counts[i] = static_cast<std::uint64_t>(std::llround(n));
    if (counts[i] < 1) throw ContractError("power_law_counts: class " + std::to_string(i + 1) + " would be empty");
  }
  return counts;
}

struct DatasetSplits {
  FeatureDataset train;
  FeatureDataset test;
};

/// Power-law training set with Gaussian class clusters and a balanced test set.
inline DatasetSplits gen_synthetic(const SyntheticSpec& spec) {
  const auto counts = power_law_counts(spec.classes, spec.beta, spec.n_max);
  if (spec.dim < 1) throw ContractError("gen_synthetic: dimension must be positive");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Matrix centers(spec.classes, spec.dim);
  for (double& v : centers.data()) v = spec.center_scale * unit(rng);
  if (spec.geometry == ClassGeometry::head_tail) {
    std::vector<double> dir(spec.dim);
    double norm = 0.0;
    for (double& v : dir) {
      v = unit(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      if (counts[c] > spec.head_threshold) continue;
      for (std::size_t j = 0; j < spec.dim; ++j) centers(c, j) += spec.tail_shift * dir[j] / norm;
    }
  }

  auto draw = [&](FeatureDataset& d, std::size_t cls, std::uint64_t n) {
    for (std::uint64_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < spec.dim; ++j)
        d.features.push_back(static_cast<float>(centers(cls, j) + spec.spread * unit(rng)));
      d.labels.push_back(static_cast<std::uint32_t>(cls));
    }
  };

  DatasetSplits out;
  for (auto* d : {&out.train, &out.test}) {
    d->dim = spec.dim;
    d->classes = spec.classes;
  }
  for (std::size_t c = 0; c < spec.classes; ++c) draw(out.train, c, counts[c]);
  for (std::size_t c = 0; c < spec.classes; ++c) draw(out.test, c, spec.test_per_class);
  return out;
}

// ---------------------------------------------------------------------------
// DLFT container

inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 4 + 8 + 4 + 4;

inline std::vector<std::uint8_t> serialize_dataset(const FeatureDataset& d) {
  d.validate();
  io::Writer w;
  w.magic("DLFT");
  w.u32(kFeatureFormatVersion);
  w.u64(d.size());
  w.u32(static_cast<std::uint32_t>(d.dim));
  w.u32(static_cast<std::uint32_t>(d.classes));
  const std::size_t payload = w.size();
  for (float v : d.features) w.f32(v);
  for (auto y : d.labels) w.u32(y + 1);
  io::seal(w, payload);
  return std::move(w.buffer());
}

inline FeatureDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic("DLFT");
  const auto version = r.u32("version");
  if (version != kFeatureFormatVersion) {
    throw FormatError("unsupported DLFT version " + std::to_string(version) + " at offset 4");
  }
  FeatureDataset d;
  const auto n = r.u64("sample count");
  d.dim = r.u32("dimension");
  d.classes = r.u32("class count");
  const std::size_t end = io::verify_seal(bytes, r.offset());
  const std::uint64_t expect = (n * d.dim + n) * 4;
  if (end - r.offset() != expect) {
    throw FormatError("payload at offset " + std::to_string(r.offset()) + " holds " +
                      std::to_string(end - r.offset()) + " bytes, header implies " + std::to_string(expect));
  }
  d.features.resize(n * d.dim);
  for (float& v : d.features) v = r.f32("features");
  d.labels.resize(n);
  for (auto& y : d.labels) {
    const auto off = r.offset();
    const auto raw = r.u32("labels");
    if (raw < 1 || raw > d.classes) {
      throw FormatError("label " + std::to_string(raw) + " out of range at offset " + std::to_string(off));
    }
    y = raw - 1;
  }
  return d;
}

inline void save_dataset(const std::string& path, const FeatureDataset& d) {
  io::write_file(path, serialize_dataset(d));
}

inline FeatureDataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Class statistics

enum class ShotGroup { many, medium, few };

inline const char* to_string(ShotGroup g) {
  switch (g) {
    case ShotGroup::many: return "many";
    case ShotGroup::medium: return "medium";
    case ShotGroup::few: return "few";
  }
  return "?";
}

/// Many: n > 100, Medium: 20 <= n <= 100, Few: n < 20.
inline ShotGroup shot_group(std::uint64_t n) {
  if (n > 100) return ShotGroup::many;
  if (n >= 20) return ShotGroup::medium;
  return ShotGroup::few;
}

inline constexpr std::uint64_t kDefaultHeadThreshold = 50;

struct ClassStats {
  std::vector<std::uint64_t> counts;
  double beta = 1.0;
  std::vector<bool> head;  // n_i > threshold
  std::vector<ShotGroup> groups;
  std::uint64_t head_threshold = kDefaultHeadThreshold;
};

inline ClassStats class_stats(std::span<const std::uint64_t> counts, std::uint64_t head_threshold = kDefaultHeadThreshold) {
  ClassStats s;
  s.counts.assign(counts.begin(), counts.end());
  s.beta = imbalance_factor(counts);
  s.head_threshold = head_threshold;
  for (auto n : counts) {
    s.head.push_back(n > head_threshold);
    s.groups.push_back(shot_group(n));
  }
  return s;
}

inline ClassStats class_stats(const FeatureDataset& d, std::uint64_t head_threshold = kDefaultHeadThreshold) {
  if (d.empty()) throw ContractError("class_stats: empty dataset");
  const auto c = d.counts();
  return class_stats(c, head_threshold);
}

}  // namespace dlsa
