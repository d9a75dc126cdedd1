#pragma once

// Evaluation: grouped accuracy, MCC, NMI, cluster purity and balance,
// head/tail separation, frequency-binned confusion, and the oracle split
// used by the separation probe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlsa/data_io.hpp"
#include "dlsa/error.hpp"
#include "dlsa/matrix.hpp"

namespace dlsa {

struct GroupedAccuracy {
  double overall = 0.0;
  std::optional<double> many, medium, few;  // nullopt: no test sample in the group
};

/// `groups` is indexed by class id (see class_stats).
inline GroupedAccuracy grouped_accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                                        std::span<const ShotGroup> groups) {
  if (preds.size() != labels.size()) throw ContractError("grouped_accuracy: predictions and labels differ in length");
  if (labels.empty()) throw ContractError("grouped_accuracy: no samples");
  std::size_t hit[3] = {0, 0, 0}, tot[3] = {0, 0, 0}, all_hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= groups.size()) throw ContractError("grouped_accuracy: label without a shot group");
    const auto g = static_cast<std::size_t>(groups[labels[i]]);
    const bool ok = preds[i] == labels[i];
    ++tot[g];
    hit[g] += ok;
    all_hit += ok;
  }
  auto frac = [&](std::size_t g) -> std::optional<double> {
    if (tot[g] == 0) return std::nullopt;
    return static_cast<double>(hit[g]) / static_cast<double>(tot[g]);
  };
  GroupedAccuracy a;
  a.overall = static_cast<double>(all_hit) / static_cast<double>(labels.size());
  a.many = frac(0);
  a.medium = frac(1);
  a.few = frac(2);
  return a;
}

/// Multiclass Matthews correlation (Gorodkin's R_K); 0 when a marginal is degenerate.
inline double mcc(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) throw ContractError("mcc: predictions and labels differ in length");
  std::size_t k = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) k = std::max({k, preds[i] + 1, labels[i] + 1});
  std::vector<double> p(k, 0.0), t(k, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p[preds[i]] += 1.0;
    t[labels[i]] += 1.0;
    correct += preds[i] == labels[i] ? 1.0 : 0.0;
  }
  const double s = static_cast<double>(preds.size());
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    pt += p[j] * t[j];
    pp += p[j] * p[j];
    tt += t[j] * t[j];
  }
  const double denom = (s * s - pp) * (s * s - tt);
  if (denom <= 0.0) return 0.0;
  return (correct * s - pt) / std::sqrt(denom);
}

enum class NmiNorm { geometric, arithmetic };

inline double nmi(std::span<const std::size_t> a, std::span<const std::size_t> b, NmiNorm norm = NmiNorm::geometric) {
  if (a.size() != b.size()) throw ContractError("nmi: labelings differ in length");
  if (a.empty()) throw ContractError("nmi: empty labelings");
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ma, mb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ma[a[i]] += 1.0;
    mb[b[i]] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  auto entropy = [n](const std::map<std::size_t, double>& m) {
    double h = 0.0;
    for (const auto& [_, c] : m) h -= c / n * std::log(c / n);
    return h;
  };
  const double ha = entropy(ma), hb = entropy(mb);
  if (ha == 0.0 || hb == 0.0) return ha == 0.0 && hb == 0.0 ? 1.0 : 0.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (ma[key.first] * mb[key.second]));
  const double denom = norm == NmiNorm::geometric ? std::sqrt(ha * hb) : 0.5 * (ha + hb);
  return std::clamp(mi / denom, 0.0, 1.0);
}

struct PurityResult {
  std::vector<std::optional<double>> per_cluster;  // nullopt for empty clusters
  std::vector<std::uint64_t> sizes;
  double mean = 0.0;  // weighted by cluster size
};

inline PurityResult cluster_purity(std::span<const std::size_t> clusters, std::span<const std::size_t> labels,
                                   std::size_t k = 0) {
  if (clusters.size() != labels.size()) throw ContractError("cluster_purity: assignments and labels differ in length");
  if (clusters.empty()) throw ContractError("cluster_purity: no assignments");
  for (auto h : clusters) k = std::max(k, h + 1);
  std::vector<std::map<std::size_t, std::uint64_t>> hist(k);
  for (std::size_t i = 0; i < clusters.size(); ++i) ++hist[clusters[i]][labels[i]];
  PurityResult r;
  r.per_cluster.resize(k);
  r.sizes.assign(k, 0);
  std::uint64_t majority_total = 0;
  for (std::size_t h = 0; h < k; ++h) {
    std::uint64_t size = 0, top = 0;
    for (const auto& [_, c] : hist[h]) {
      size += c;
      top = std::max(top, c);
    }
    r.sizes[h] = size;
    if (size == 0) continue;
    r.per_cluster[h] = static_cast<double>(top) / static_cast<double>(size);
    majority_total += top;
  }
  r.mean = static_cast<double>(majority_total) / static_cast<double>(clusters.size());
  return r;
}

/// Largest over smallest size among occupied clusters.
inline double cluster_balance_ratio(std::span<const std::uint64_t> sizes) {
  std::uint64_t lo = 0, hi = 0;
  for (auto s : sizes) {
    if (s == 0) continue;
    lo = lo == 0 ? s : std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (lo == 0) throw ContractError("cluster_balance_ratio: no occupied cluster");
  return static_cast<double>(hi) / static_cast<double>(lo);
}

/// Fraction of filtered samples that belong to tail classes.
inline std::optional<double> separation_accuracy(const std::vector<bool>& filtered, const std::vector<bool>& is_tail) {
  if (filtered.size() != is_tail.size()) throw ContractError("separation_accuracy: masks differ in length");
  std::size_t n = 0, tail = 0;
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    if (!filtered[i]) continue;
    ++n;
    tail += is_tail[i];
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(tail) / static_cast<double>(n);
}

/// Bin index of each class: classes sorted by descending training count
/// (ties by id), cut into `bins` groups of C / bins, the first C % bins
/// groups taking one extra class.
inline std::vector<std::size_t> frequency_bins(std::span<const std::uint64_t> counts, std::size_t bins) {
  const std::size_t c = counts.size();
  if (bins < 2) throw ContractError("frequency_bins: need at least 2 bins");
  if (bins > c) {
    throw ContractError("frequency_bins: " + std::to_string(bins) + " bins exceed " + std::to_string(c) + " classes");
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<std::size_t> bin_of(c);
  const std::size_t base = c / bins, extra = c % bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t width = base + (b < extra ? 1 : 0);
    for (std::size_t i = 0; i < width; ++i) bin_of[order[pos++]] = b;
  }
  return bin_of;
}

/// Misclassifications aggregated by (true bin, predicted bin). Correctly
/// classified samples are left out, so the total equals the error count.
inline Matrix binned_confusion(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                               std::span<const std::uint64_t> train_counts, std::size_t bins) {
  if (preds.size() != labels.size()) throw ContractError("binned_confusion: predictions and labels differ in length");
  const auto bin_of = frequency_bins(train_counts, bins);
  Matrix m(bins, bins);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) continue;
    if (preds[i] >= bin_of.size() || labels[i] >= bin_of.size()) throw ContractError("binned_confusion: class out of range");
    m(bin_of[labels[i]], bin_of[preds[i]]) += 1.0;
  }
  return m;
}

/// Group assignment of the separation probe: 0 is the head-side group, 1 the
/// tail-side group. Head samples land in group 0 with probability p, tail
/// samples in group 1 with probability p.
inline std::vector<std::uint8_t> oracle_split(std::span<const std::size_t> labels,
                                              std::span<const std::uint64_t> train_counts, double p,
                                              std::uint64_t head_threshold, std::uint64_t seed) {
  if (!(p >= 0.5 && p <= 1.0)) throw ContractError("oracle_split: p must lie in [0.5, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> group(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= train_counts.size()) throw ContractError("oracle_split: label out of range");
    const bool head = train_counts[labels[i]] > head_threshold;
    const bool keep = u(rng) < p;
    group[i] = head ? (keep ? 0 : 1) : (keep ? 1 : 0);
  }
  return group;
}

// ---------------------------------------------------------------------------
// Report

struct StageReport {
  std::size_t stage = 0;
  std::size_t routed = 0;
  std::optional<double> separation_accuracy;
  std::optional<double> mean_purity;
  std::vector<std::uint64_t> cluster_sizes;
};

struct MetricReport {
  std::string split = "test";
  std::size_t samples = 0;
  GroupedAccuracy accuracy;
  double mcc = 0.0;
  double nmi = 0.0;
  std::string nmi_norm = "geometric";
  std::size_t residual_routed = 0;
  std::vector<StageReport> stages;
  Matrix confusion;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json j;
    j["split"] = split;
    j["samples"] = samples;
    j["accuracy"] = {{"overall", accuracy.overall},
                     {"many", opt(accuracy.many)},
                     {"medium", opt(accuracy.medium)},
                     {"few", opt(accuracy.few)}};
    j["mcc"] = mcc;
    j["nmi"] = nmi;
    j["nmi_norm"] = nmi_norm;
    j["residual_routed"] = residual_routed;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : stages) {
      j["stages"].push_back({{"stage", s.stage + 1},
                             {"routed", s.routed},
                             {"separation_accuracy", opt(s.separation_accuracy)},
                             {"mean_purity", opt(s.mean_purity)},
                             {"cluster_sizes", s.cluster_sizes}});
    }
    j["confusion_bins"] = confusion.rows();
    return j;
  }
};

inline std::string matrix_csv(const Matrix& m) {
  std::ostringstream out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << '\n';
  }
  return out.str();
}

inline std::string cluster_histogram_csv(std::span<const StageReport> stages) {
  std::ostringstream out;
  out << "stage,cluster,size\n";
  for (const auto& s : stages)
    for (std::size_t k = 0; k < s.cluster_sizes.size(); ++k) out << s.stage + 1 << ',' << k << ',' << s.cluster_sizes[k] << '\n';
  return out.str();
}

}  // namespace dlsa
