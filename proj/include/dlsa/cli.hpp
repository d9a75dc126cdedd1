#pragma once

// The `dlsa` command line: gen / train / eval / probe driven by a JSON
// experiment config. Exit codes: 0 ok, 2 input or config error, 3 numeric
// or training failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dlsa/binary_io.hpp"
#include "dlsa/cascade.hpp"
#include "dlsa/data_io.hpp"
#include "dlsa/error.hpp"
#include "dlsa/metrics.hpp"
#include "dlsa/trainer.hpp"

namespace dlsa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

struct DatasetSource {
  std::string name = "synthetic";
  std::optional<SyntheticSpec> synthetic;
  std::string train_path;  // empty: <out>/train.dlft
  std::string test_path;   // empty: <out>/test.dlft
};

struct MetricOptions {
  std::size_t bins = 20;
  NmiNorm nmi = NmiNorm::geometric;
  std::uint64_t head_threshold = kDefaultHeadThreshold;
};

struct ExperimentConfig {
  DatasetSource dataset;
  CascadeConfig cascade;
  MetricOptions metrics;
  std::vector<double> probe_p = {0.5, 0.7, 0.9, 1.0};
  std::string out = "run";
  std::uint64_t seed = 0;
};

namespace detail {

/// Rejects keys outside `allowed`, naming the JSON path.
inline void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError("unknown config key '" + path + "." + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key + ": " + e.what());
  }
}

template <class T>
void read(const json& j, const char* key, std::optional<T>& out, const std::string& path) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v, path);
  out = v;
}

inline SyntheticSpec parse_synthetic(const json& j) {
  check_keys(j, "dataset.synthetic",
             {"classes", "beta", "dim", "n_max", "center_scale", "spread", "test_per_class", "seed", "geometry",
              "tail_shift", "head_threshold"});
  SyntheticSpec s;
  const std::string p = "dataset.synthetic";
  read(j, "classes", s.classes, p);
  read(j, "beta", s.beta, p);
  read(j, "dim", s.dim, p);
  read(j, "n_max", s.n_max, p);
  read(j, "center_scale", s.center_scale, p);
  read(j, "spread", s.spread, p);
  read(j, "test_per_class", s.test_per_class, p);
  read(j, "seed", s.seed, p);
  read(j, "tail_shift", s.tail_shift, p);
  read(j, "head_threshold", s.head_threshold, p);
  std::string geometry = "isotropic";
  read(j, "geometry", geometry, p);
  if (geometry == "isotropic") s.geometry = ClassGeometry::isotropic;
  else if (geometry == "head_tail") s.geometry = ClassGeometry::head_tail;
  else throw ConfigError("dataset.synthetic.geometry: expected isotropic|head_tail, got '" + geometry + "'");
  return s;
}

inline void parse_train(const json& j, TrainConfig& t) {
  check_keys(j, "train",
             {"learning_rate", "momentum", "batch_size", "epochs", "lambda_bal", "lambda_pure", "q", "eta",
              "clusters", "filter_fraction", "flow_blocks", "hidden", "center_sigma", "grad_clip",
              "classifier_epochs", "classifier_lr", "classifier_batch", "residual_on_full_set"});
  const std::string p = "train";
  read(j, "learning_rate", t.learning_rate, p);
  read(j, "momentum", t.momentum, p);
  read(j, "batch_size", t.batch_size, p);
  read(j, "epochs", t.epochs, p);
  read(j, "lambda_bal", t.lambda_bal, p);
  read(j, "lambda_pure", t.lambda_pure, p);
  read(j, "q", t.q, p);
  read(j, "eta", t.eta, p);
  read(j, "clusters", t.clusters, p);
  read(j, "filter_fraction", t.filter_fraction, p);
  read(j, "flow_blocks", t.flow_blocks, p);
  read(j, "hidden", t.hidden, p);
  read(j, "center_sigma", t.center_sigma, p);
  read(j, "grad_clip", t.grad_clip, p);
  read(j, "classifier_epochs", t.classifier_epochs, p);
  read(j, "classifier_lr", t.classifier_lr, p);
  read(j, "classifier_batch", t.classifier_batch, p);
  read(j, "residual_on_full_set", t.residual_on_full_set, p);
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  check_keys(j, "", {"dataset", "train", "cascade", "metrics", "probe", "out", "seed"});
  ExperimentConfig c;
  read(j, "seed", c.seed, "");
  read(j, "out", c.out, "");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "dataset", {"name", "synthetic", "train", "test"});
    read(d, "name", c.dataset.name, "dataset");
    read(d, "train", c.dataset.train_path, "dataset");
    read(d, "test", c.dataset.test_path, "dataset");
    if (d.contains("synthetic")) {
      c.dataset.synthetic = parse_synthetic(d.at("synthetic"));
      if (!d.at("synthetic").contains("seed")) c.dataset.synthetic->seed = c.seed;
    }
  }
  if (j.contains("train")) parse_train(j.at("train"), c.cascade.train);
  c.cascade.train.seed = c.seed;
  if (j.contains("cascade")) {
    const auto& cc = j.at("cascade");
    check_keys(cc, "cascade", {"stages", "classifier", "overrides"});
    read(cc, "stages", c.cascade.stages, "cascade");
    std::string kind = to_string(c.cascade.residual_kind);
    read(cc, "classifier", kind, "cascade");
    c.cascade.residual_kind = parse_classifier_kind(kind);
    if (cc.contains("overrides")) {
      if (!cc.at("overrides").is_array()) throw ConfigError("cascade.overrides: expected an array");
      for (const auto& o : cc.at("overrides")) {
        check_keys(o, "cascade.overrides[]", {"clusters", "filter_fraction", "epochs"});
        StageOverride so;
        read(o, "clusters", so.clusters, "cascade.overrides[]");
        read(o, "filter_fraction", so.filter_fraction, "cascade.overrides[]");
        read(o, "epochs", so.epochs, "cascade.overrides[]");
        c.cascade.overrides.push_back(so);
      }
    }
  }
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    check_keys(m, "metrics", {"bins", "nmi", "head_threshold"});
    read(m, "bins", c.metrics.bins, "metrics");
    read(m, "head_threshold", c.metrics.head_threshold, "metrics");
    std::string norm = "geometric";
    read(m, "nmi", norm, "metrics");
    if (norm == "geometric") c.metrics.nmi = NmiNorm::geometric;
    else if (norm == "arithmetic") c.metrics.nmi = NmiNorm::arithmetic;
    else throw ConfigError("metrics.nmi: expected geometric|arithmetic, got '" + norm + "'");
  }
  if (j.contains("probe")) {
    const auto& p = j.at("probe");
    check_keys(p, "probe", {"p"});
    read(p, "p", c.probe_p, "probe");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string hex32(std::uint32_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << v;
  return s.str();
}

/// Writes `bytes` under the run directory and records its CRC in manifest.json.
class RunDir {
 public:
  explicit RunDir(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    const auto mpath = root_ / "manifest.json";
    if (fs::exists(mpath)) {
      std::ifstream in(mpath);
      try {
        in >> manifest_;
      } catch (const json::exception&) {
        manifest_ = json::object();
      }
    }
    if (!manifest_.is_object()) manifest_ = json::object();
    if (!manifest_.contains("artifacts")) manifest_["artifacts"] = json::object();
  }

  const fs::path& root() const { return root_; }

  fs::path write(const std::string& name, std::span<const std::uint8_t> bytes) {
    const fs::path p = root_ / name;
    io::write_file(p.string(), bytes);
    manifest_["artifacts"][name] = {{"crc32", hex32(io::crc32(bytes))}, {"bytes", bytes.size()}};
    return p;
  }

  fs::path write_text(const std::string& name, const std::string& text) {
    return write(name, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }

  void note(const std::string& key, json value) { manifest_[key] = std::move(value); }

  void save() {
    const std::string text = manifest_.dump(2) + "\n";
    io::write_file((root_ / "manifest.json").string(),
                   {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }

 private:
  fs::path root_;
  json manifest_;
};

inline std::size_t thread_cap() {
  const char* env = std::getenv("DLSA_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("DLSA_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

inline json dataset_sidecar(const std::string& name, const std::string& split, const FeatureDataset& d,
                            const DatasetSplits& splits, std::uint64_t seed) {
  return {{"name", name},
          {"split", split},
          {"classes", d.classes},
          {"dim", d.dim},
          {"beta", imbalance_factor(splits.train.counts())},
          {"seed", seed},
          {"sizes", {{"train", splits.train.size()}, {"test", splits.test.size()}}}};
}

/// Split recorded in the sidecar next to a dataset file, if any.
inline std::string sidecar_split(const std::string& data_path) {
  const fs::path side = data_path + ".json";
  if (!fs::exists(side)) return "unknown";
  std::ifstream in(side);
  try {
    json j;
    in >> j;
    return j.value("split", "unknown");
  } catch (const json::exception&) {
    return "unknown";
  }
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen(const ExperimentConfig& cfg, std::ostream& out) {
  if (!cfg.dataset.synthetic) throw ConfigError("gen: config has no dataset.synthetic section");
  const SyntheticSpec& spec = *cfg.dataset.synthetic;
  const DatasetSplits splits = gen_synthetic(spec);
  RunDir run(cfg.out);
  for (const auto& [split, data] : {std::pair<std::string, const FeatureDataset*>{"train", &splits.train},
                                    std::pair<std::string, const FeatureDataset*>{"test", &splits.test}}) {
    run.write(split + ".dlft", serialize_dataset(*data));
    run.write_text(split + ".dlft.json",
                   dataset_sidecar(cfg.dataset.name, split, *data, splits, spec.seed).dump(2) + "\n");
  }
  run.note("threads", thread_cap());
  run.save();
  const auto counts = splits.train.counts();
  json summary = {{"beta", imbalance_factor(counts)},
                  {"classes", spec.classes},
                  {"dim", spec.dim},
                  {"train", splits.train.size()},
                  {"test", splits.test.size()},
                  {"counts", counts}};
  out << summary.dump() << '\n';
  return 0;
}

inline std::string trace_csv(const std::vector<EpochTrace>& trace) {
  std::ostringstream s;
  s << std::setprecision(17) << "epoch,mle,bal,pure,total\n";
  for (const auto& t : trace) s << t.epoch << ',' << t.mle << ',' << t.bal << ',' << t.pure << ',' << t.total << '\n';
  return s.str();
}

inline std::string train_path(const ExperimentConfig& cfg) {
  return cfg.dataset.train_path.empty() ? (fs::path(cfg.out) / "train.dlft").string() : cfg.dataset.train_path;
}

inline std::string test_path(const ExperimentConfig& cfg) {
  return cfg.dataset.test_path.empty() ? (fs::path(cfg.out) / "test.dlft").string() : cfg.dataset.test_path;
}

inline int cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
  const FeatureDataset data = load_dataset(train_path(cfg));
  const DlsaCascade model = fit_cascade(data, cfg.cascade);
  RunDir run(cfg.out);
  run.write("model.dlsa", serialize_cascade(model));
  json summary = {{"stages", model.stages.size()},
                  {"classifier", to_string(model.residual.kind)},
                  {"residual", model.residual_indices.size()},
                  {"train", data.size()}};
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    const auto& st = model.stages[s];
    run.write_text("trace_stage" + std::to_string(s + 1) + ".csv", trace_csv(st.filter.trace));
    summary["filtered"].push_back(st.filtered_indices.size());
    summary["alpha"].push_back(st.filter.alpha);
  }
  run.note("threads", thread_cap());
  run.save();
  out << summary.dump() << '\n';
  return 0;
}

/// Report for `model` on `data`.
inline MetricReport evaluate(const DlsaCascade& model, const FeatureDataset& data, const MetricOptions& opt,
                             std::vector<Prediction>* predictions = nullptr) {
  if (data.dim != model.dim || data.classes != model.classes) {
    throw DimensionError("model expects D=" + std::to_string(model.dim) + ", C=" + std::to_string(model.classes) +
                         " but data has D=" + std::to_string(data.dim) + ", C=" + std::to_string(data.classes));
  }
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  auto preds = predict_batch(model, data.to_matrix());
  const auto labels = data.label_indices();
  const auto yhat = predicted_labels(preds);
  const auto stats = class_stats(model.train_counts, opt.head_threshold);

  MetricReport r;
  r.samples = data.size();
  r.accuracy = grouped_accuracy(yhat, labels, stats.groups);
  r.mcc = mcc(yhat, labels);
  r.nmi = nmi(yhat, labels, opt.nmi);
  r.nmi_norm = opt.nmi == NmiNorm::geometric ? "geometric" : "arithmetic";
  const std::size_t bins = std::min(opt.bins, model.classes);
  r.confusion = binned_confusion(yhat, labels, model.train_counts, bins);

  std::vector<bool> is_tail(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) is_tail[i] = !stats.head[labels[i]];
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    StageReport sr;
    sr.stage = s;
    std::vector<bool> routed(data.size(), false);
    std::vector<std::size_t> h, y;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i].route.stage != s) continue;
      routed[i] = true;
      h.push_back(*preds[i].route.cluster);
      y.push_back(labels[i]);
    }
    sr.routed = h.size();
    sr.separation_accuracy = separation_accuracy(routed, is_tail);
    sr.cluster_sizes.assign(model.stages[s].filter.latent.clusters(), 0);
    if (!h.empty()) {
      const auto pur = cluster_purity(h, y, model.stages[s].filter.latent.clusters());
      sr.mean_purity = pur.mean;
      sr.cluster_sizes = pur.sizes;
    }
    r.stages.push_back(std::move(sr));
  }
  for (const auto& p : preds) r.residual_routed += !p.route.stage.has_value();
  if (predictions) *predictions = std::move(preds);
  return r;
}

inline std::string routing_csv(const std::vector<Prediction>& preds, std::span<const std::uint32_t> labels) {
  std::ostringstream s;
  s << std::setprecision(17) << "index,label,prediction,stage,cluster,loglik\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    s << i << ',' << labels[i] + 1 << ',' << p.label + 1 << ',';
    if (p.route.stage) s << *p.route.stage + 1;
    else s << "residual";
    s << ',';
    if (p.route.cluster) s << *p.route.cluster;
    s << ',';
    for (std::size_t k = 0; k < p.route.loglik.size(); ++k) s << (k ? ";" : "") << p.route.loglik[k];
    s << '\n';
  }
  return s.str();
}

inline int cmd_eval(const ExperimentConfig& cfg, const std::string& model_path, const std::string& data_path,
                    const std::string& split_flag, std::ostream& out) {
  const DlsaCascade model = load_cascade(model_path);
  const FeatureDataset data = load_dataset(data_path);
  std::vector<Prediction> preds;
  MetricReport report = evaluate(model, data, cfg.metrics, &preds);
  report.split = split_flag.empty() ? sidecar_split(data_path) : split_flag;
  RunDir run(cfg.out);
  const std::string tag = report.split;
  const std::string text = report.to_json().dump(2) + "\n";
  run.write_text("report_" + tag + ".json", text);
  run.write_text("confusion_" + tag + ".csv", matrix_csv(report.confusion));
  run.write_text("clusters_" + tag + ".csv", cluster_histogram_csv(report.stages));
  run.write_text("routing_" + tag + ".csv", routing_csv(preds, data.labels));
  run.note("threads", thread_cap());
  run.save();
  out << text;
  return 0;
}

struct ProbeRow {
  double p = 0.0;
  std::optional<double> accuracy;
  std::string status = "ok";
};

/// Oracle-separation probe: for each p, split train and test by
/// oracle_split, fit one classifier per group on that group's training
/// samples, and score the union of both groups' test predictions.
inline std::vector<ProbeRow> run_probe(const FeatureDataset& train, const FeatureDataset& test,
                                       const ExperimentConfig& cfg) {
  if (train.dim != test.dim || train.classes != test.classes) throw DimensionError("probe: train/test shape mismatch");
  const auto counts = train.counts();
  const auto ytr = train.label_indices();
  const auto yte = test.label_indices();
  std::vector<ProbeRow> rows;
  for (std::size_t pi = 0; pi < cfg.probe_p.size(); ++pi) {
    ProbeRow row;
    row.p = cfg.probe_p[pi];
    const auto gtr = oracle_split(ytr, counts, row.p, cfg.metrics.head_threshold, derive_seed(cfg.seed, 200 + pi));
    const auto gte = oracle_split(yte, counts, row.p, cfg.metrics.head_threshold, derive_seed(cfg.seed, 300 + pi));
    std::size_t correct = 0;
    for (std::uint8_t g = 0; g < 2 && row.status == "ok"; ++g) {
      std::vector<std::size_t> tr_idx, te_idx;
      for (std::size_t i = 0; i < gtr.size(); ++i)
        if (gtr[i] == g) tr_idx.push_back(i);
      for (std::size_t i = 0; i < gte.size(); ++i)
        if (gte[i] == g) te_idx.push_back(i);
      if (tr_idx.empty()) {
        row.status = "failed: empty group " + std::to_string(g + 1);
        break;
      }
      if (te_idx.empty()) continue;
      const auto clf = train_residual_classifier(train.rows(tr_idx), gather(ytr, tr_idx), train.classes,
                                                 cfg.cascade.residual_kind, cfg.cascade.train,
                                                 derive_seed(cfg.seed, 400 + 2 * pi + g))
                           .classifier;
      const auto pred = clf.predict(test.rows(te_idx));
      for (std::size_t r = 0; r < te_idx.size(); ++r) correct += pred[r] == yte[te_idx[r]];
    }
    if (row.status == "ok") row.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    rows.push_back(row);
  }
  return rows;
}

inline std::string probe_csv(const std::vector<ProbeRow>& rows) {
  std::ostringstream s;
  s << std::setprecision(17) << "p,overall_accuracy,status\n";
  for (const auto& r : rows) {
    s << r.p << ',';
    if (r.accuracy) s << *r.accuracy;
    s << ',' << r.status << '\n';
  }
  return s.str();
}

inline int cmd_probe(const ExperimentConfig& cfg, std::ostream& out) {
  for (double p : cfg.probe_p)
    if (!(p >= 0.5 && p <= 1.0)) throw ConfigError("probe: p values must lie in [0.5, 1]");
  const FeatureDataset train = load_dataset(train_path(cfg));
  const FeatureDataset test = load_dataset(test_path(cfg));
  const auto rows = run_probe(train, test, cfg);
  const std::string text = probe_csv(rows);
  RunDir run(cfg.out);
  run.write_text("probe.csv", text);
  run.note("threads", thread_cap());
  run.save();
  out << text;
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline std::vector<double> parse_p_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--p: cannot parse '" + item + "'");
    }
  }
  return out;
}

/// Runs one invocation; `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Dynamic label space adjustment for long-tailed classification"};
  app.require_subcommand(1);

  std::string config_path, out_dir, classifier, model_path, data_path, split, p_list;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> stages, clusters;
  std::optional<double> filter_frac;
  bool no_bal = false, no_pure = false, no_mle_weight = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)");
    sub->add_option("--seed", seed, "global seed");
    sub->add_option("--out", out_dir, "output directory");
  };
  auto* gen = app.add_subcommand("gen", "write a synthetic long-tailed dataset");
  common(gen);
  auto* train = app.add_subcommand("train", "fit a cascade and write model.dlsa");
  common(train);
  train->add_option("--stages", stages, "number of Flow Filter stages (0: baseline only)");
  train->add_option("--clusters", clusters, "clusters per Flow Filter");
  train->add_option("--filter-frac", filter_frac, "fraction of samples each filter keeps");
  train->add_option("--classifier", classifier, "residual classifier")->check(CLI::IsMember({"linear", "balsoftmax", "cosine"}));
  train->add_option("--train", data_path, "training DLFT file");
  train->add_flag("--no-bal", no_bal, "drop the balancedness loss");
  train->add_flag("--no-pure", no_pure, "drop the purity loss");
  train->add_flag("--no-mle-weight", no_mle_weight, "uniform likelihood weights (q = 0)");
  auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset");
  common(eval);
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--data", data_path, "DLFT dataset")->required();
  eval->add_option("--split", split, "split tag for the report (default: from the dataset sidecar)");
  auto* probe = app.add_subcommand("probe", "oracle head/tail separation probe");
  common(probe);
  probe->add_option("--p", p_list, "comma-separated p grid");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.cascade.train.seed = *seed;
      if (cfg.dataset.synthetic) cfg.dataset.synthetic->seed = *seed;
    }
    if (!out_dir.empty()) cfg.out = out_dir;
    thread_cap();

    if (gen->parsed()) return cmd_gen(cfg, out);
    if (train->parsed()) {
      if (stages) cfg.cascade.stages = *stages;
      if (clusters) cfg.cascade.train.clusters = *clusters;
      if (filter_frac) cfg.cascade.train.filter_fraction = *filter_frac;
      if (!classifier.empty()) cfg.cascade.residual_kind = parse_classifier_kind(classifier);
      if (!data_path.empty()) cfg.dataset.train_path = data_path;
      if (no_bal) cfg.cascade.train.lambda_bal = 0.0;
      if (no_pure) cfg.cascade.train.lambda_pure = 0.0;
      if (no_mle_weight) cfg.cascade.train.q = 0.0;
      return cmd_train(cfg, out);
    }
    if (eval->parsed()) return cmd_eval(cfg, model_path, data_path, split, out);
    if (probe->parsed()) {
      if (!p_list.empty()) cfg.probe_p = parse_p_list(p_list);
      return cmd_probe(cfg, out);
    }
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace dlsa::cli
