#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gradmatch/metrics.hpp"

namespace gradmatch {

using Json = nlohmann::ordered_json;

inline Json to_json(const Selection& sel) {
  Json j;
  j["strategy"] = sel.strategy_tag;
  j["indices"] = sel.indices;
  j["weights"] = std::vector<double>(sel.weights.begin(), sel.weights.end());
  j["residual"] = sel.residual;
  j["elapsed_s"] = sel.elapsed_s;
  return j;
}

inline Json to_json(const EpochRecord& rec) {
  Json j;
  j["epoch"] = rec.epoch;
  j["train_loss"] = rec.train_loss;
  j["test_accuracy"] = rec.test_accuracy;
  j["lr"] = rec.lr;
  j["selection_time_s"] = rec.selection_time_s;
  j["train_time_s"] = rec.train_time_s;
  j["grad_error"] = rec.grad_error ? Json(*rec.grad_error) : Json(nullptr);
  j["alignment_cos"] = rec.alignment_cos ? Json(*rec.alignment_cos) : Json(nullptr);
  j["lr_bound"] = rec.lr_bound ? Json(*rec.lr_bound) : Json(nullptr);
  j["selection_round"] = rec.selection_round;
  return j;
}

inline EpochRecord epoch_from_json(const Json& j) {
  EpochRecord rec;
  rec.epoch = j.at("epoch").get<int>();
  rec.train_loss = j.at("train_loss").get<double>();
  rec.test_accuracy = j.at("test_accuracy").get<double>();
  rec.lr = j.at("lr").get<double>();
  rec.selection_time_s = j.at("selection_time_s").get<double>();
  rec.train_time_s = j.at("train_time_s").get<double>();
  if (!j.at("grad_error").is_null()) rec.grad_error = j.at("grad_error").get<double>();
  if (!j.at("alignment_cos").is_null())
    rec.alignment_cos = j.at("alignment_cos").get<double>();
  if (!j.at("lr_bound").is_null()) rec.lr_bound = j.at("lr_bound").get<double>();
  rec.selection_round = j.at("selection_round").get<int>();
  return rec;
}

// One epoch per line; readable back for reporting and determinism checks.
inline void write_run_record_jsonl(const RunRecord& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const EpochRecord& rec : run.epochs) out << to_json(rec).dump() << "\n";
}

inline std::vector<EpochRecord> read_run_record_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<EpochRecord> epochs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    epochs.push_back(epoch_from_json(Json::parse(line)));
  }
  return epochs;
}

inline Json run_summary_json(const RunRecord& run, int n_train) {
  Json j;
  j["strategy"] = run.strategy;
  j["budget_fraction"] = run.budget_fraction;
  j["seed"] = run.seed;
  j["epochs"] = run.epochs.size();
  j["selection_rounds"] = run.selections.size();
  j["final_accuracy"] = run.final_accuracy;
  j["final_train_loss"] = run.final_train_loss;
  j["total_time_s"] = run.total_time_s;
  j["mean_grad_error"] = run.mean_grad_error();
  // Runs without selection rounds consume the full set every epoch.
  j["redundancy_pct"] =
      run.selections.empty() ? 0.0 : redundancy_pct(run.selections, n_train);
  return j;
}

// Model checkpoints: a flat parameter array behind a versioned arch header.
inline void save_checkpoint(const ModelState& m, const std::string& path) {
  Json j;
  j["version"] = 1;
  j["arch"] = to_string(m.arch);
  j["n_features"] = m.n_features;
  j["hidden"] = m.hidden;
  j["class_count"] = m.class_count;
  j["theta"] = std::vector<double>(m.theta.begin(), m.theta.end());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const Json j = Json::parse(in);
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  const std::string arch = j.at("arch").get<std::string>();
  ModelState m = arch == "mlp"
                     ? ModelState::mlp(j.at("n_features").get<int>(),
                                       j.at("hidden").get<int>(),
                                       j.at("class_count").get<int>())
                     : ModelState::logistic(j.at("n_features").get<int>(),
                                            j.at("class_count").get<int>());
  const auto theta = j.at("theta").get<std::vector<double>>();
  if (static_cast<int>(theta.size()) != m.param_count())
    throw std::runtime_error(path + ": theta length does not match arch header");
  m.theta = Eigen::Map<const Vector>(theta.data(),
                                     static_cast<Eigen::Index>(theta.size()));
  return m;
}

// ---------------------------------------------------------------------------
// Experiment configuration (versioned JSON schema; flags override values).

struct DataSpec {
  std::string source = "blobs";  // blobs | mnist | csv
  // blobs
  int n_per_class = 500;
  int class_count = 2;
  int dim = 10;
  double class_sep = 4.0;
  std::uint64_t seed = 1;
  // files
  std::string images;
  std::string labels;
  std::string csv;
  // optional corruption
  double imbalance_affected = 0.0;
  double imbalance_removal = 0.0;
  std::uint64_t imbalance_seed = 0;
  // split
  SplitSpec split_spec{0.9, 0.1, 11};
};

struct ModelSpec {
  std::string arch = "logistic";  // logistic | mlp
  int hidden = 16;
  std::uint64_t init_seed = 5;
  double init_scale = 0.0;  // 0 = zero-initialized parameters
};

struct ExperimentConfig {
  int version = 1;
  DataSpec data;
  ModelSpec model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs/out";
};

inline Strategy strategy_from_string(std::string name, bool* per_batch) {
  std::transform(name.begin(), name.end(), name.begin(), ::tolower);
  bool pb = false;
  if (name.size() > 2 && name.substr(name.size() - 2) == "pb") {
    pb = true;
    name = name.substr(0, name.size() - 2);
  }
  if (per_batch) *per_batch = pb;
  if (name == "full") return Strategy::full;
  if (name == "random") return Strategy::random;
  if (name == "gradmatch" || name == "grad-match") return Strategy::grad_match;
  if (name == "craig") return Strategy::craig;
  if (name == "glister") return Strategy::glister;
  throw std::invalid_argument("unknown strategy: " + name);
}

inline Json to_json(const ExperimentConfig& cfg) {
  Json j;
  j["version"] = cfg.version;
  Json d;
  d["source"] = cfg.data.source;
  d["n_per_class"] = cfg.data.n_per_class;
  d["class_count"] = cfg.data.class_count;
  d["dim"] = cfg.data.dim;
  d["class_sep"] = cfg.data.class_sep;
  d["seed"] = cfg.data.seed;
  d["images"] = cfg.data.images;
  d["labels"] = cfg.data.labels;
  d["csv"] = cfg.data.csv;
  d["imbalance_affected"] = cfg.data.imbalance_affected;
  d["imbalance_removal"] = cfg.data.imbalance_removal;
  d["imbalance_seed"] = cfg.data.imbalance_seed;
  d["train_fraction"] = cfg.data.split_spec.train_fraction;
  d["validation_fraction"] = cfg.data.split_spec.validation_fraction;
  d["split_seed"] = cfg.data.split_spec.seed;
  j["dataset"] = d;
  Json m;
  m["arch"] = cfg.model.arch;
  m["hidden"] = cfg.model.hidden;
  m["init_seed"] = cfg.model.init_seed;
  m["init_scale"] = cfg.model.init_scale;
  j["model"] = m;
  Json t;
  t["epochs"] = cfg.train.total_epochs;
  t["selection_interval"] = cfg.train.selection_interval;
  t["budget_fraction"] = cfg.train.budget_fraction;
  t["strategy"] = cfg.train.strategy_name();
  t["per_class"] = cfg.train.per_class;
  t["warm_kappa"] = cfg.train.warm_kappa;
  t["lr0"] = cfg.train.lr0;
  t["batch_size"] = cfg.train.batch_size;
  t["is_valid"] = cfg.train.is_valid;
  t["lambda"] = cfg.train.lambda;
  t["epsilon"] = cfg.train.epsilon;
  t["diagnostics"] = cfg.train.diagnostics;
  j["train"] = t;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  cfg.version = j.at("version").get<int>();
  if (cfg.version != 1)
    throw std::invalid_argument("unsupported config version " +
                                std::to_string(cfg.version));
  const Json& d = j.at("dataset");
  cfg.data.source = d.value("source", cfg.data.source);
  cfg.data.n_per_class = d.value("n_per_class", cfg.data.n_per_class);
  cfg.data.class_count = d.value("class_count", cfg.data.class_count);
  cfg.data.dim = d.value("dim", cfg.data.dim);
  cfg.data.class_sep = d.value("class_sep", cfg.data.class_sep);
  cfg.data.seed = d.value("seed", cfg.data.seed);
  cfg.data.images = d.value("images", cfg.data.images);
  cfg.data.labels = d.value("labels", cfg.data.labels);
  cfg.data.csv = d.value("csv", cfg.data.csv);
  cfg.data.imbalance_affected = d.value("imbalance_affected", 0.0);
  cfg.data.imbalance_removal = d.value("imbalance_removal", 0.0);
  cfg.data.imbalance_seed = d.value("imbalance_seed", std::uint64_t{0});
  cfg.data.split_spec.train_fraction = d.value("train_fraction", 0.9);
  cfg.data.split_spec.validation_fraction = d.value("validation_fraction", 0.1);
  cfg.data.split_spec.seed = d.value("split_seed", std::uint64_t{11});
  const Json& m = j.at("model");
  cfg.model.arch = m.value("arch", cfg.model.arch);
  cfg.model.hidden = m.value("hidden", cfg.model.hidden);
  cfg.model.init_seed = m.value("init_seed", cfg.model.init_seed);
  cfg.model.init_scale = m.value("init_scale", cfg.model.init_scale);
  const Json& t = j.at("train");
  cfg.train.total_epochs = t.value("epochs", cfg.train.total_epochs);
  cfg.train.selection_interval = t.value("selection_interval", 20);
  cfg.train.budget_fraction = t.value("budget_fraction", 0.1);
  cfg.train.strategy =
      strategy_from_string(t.value("strategy", std::string("gradmatch")),
                           &cfg.train.per_batch);
  cfg.train.per_class = t.value("per_class", false);
  cfg.train.warm_kappa = t.value("warm_kappa", 0.0);
  cfg.train.lr0 = t.value("lr0", 0.01);
  cfg.train.batch_size = t.value("batch_size", 20);
  cfg.train.is_valid = t.value("is_valid", false);
  cfg.train.lambda = t.value("lambda", 0.5);
  cfg.train.epsilon = t.value("epsilon", 0.01);
  cfg.train.diagnostics = t.value("diagnostics", true);
  cfg.seeds = j.value("seeds", std::vector<std::uint64_t>{1});
  cfg.output_dir = j.value("output_dir", std::string("runs/out"));
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return config_from_json(Json::parse(in));
}

// Materialize the dataset splits named by the config. Imbalance is applied to
// the training split only; validation and test stay clean.
inline std::array<Dataset, 3> build_datasets(const DataSpec& spec) {
  Dataset base;
  if (spec.source == "blobs") {
    base = make_gaussian_blobs(spec.n_per_class, spec.class_count, spec.dim,
                               spec.class_sep, spec.seed);
  } else if (spec.source == "mnist") {
    base = load_mnist_idx(spec.images, spec.labels);
  } else if (spec.source == "csv") {
    base = load_csv(spec.csv);
  } else {
    throw std::invalid_argument("unknown dataset source: " + spec.source);
  }
  auto splits = split(base, spec.split_spec);
  if (spec.imbalance_affected > 0.0 && spec.imbalance_removal > 0.0)
    splits[0] = induce_class_imbalance(splits[0], spec.imbalance_affected,
                                       spec.imbalance_removal, spec.imbalance_seed);
  return splits;
}

// Logistic regression starts from zeros unless init_scale asks otherwise;
// the MLP always draws a random init to break hidden-unit symmetry.
inline ModelState build_model(const ModelSpec& spec, int n_features,
                              int class_count) {
  if (spec.arch == "mlp") {
    return ModelState::mlp(n_features, spec.hidden, class_count)
        .with_random_init(spec.init_seed, spec.init_scale);
  }
  ModelState m = ModelState::logistic(n_features, class_count);
  if (spec.init_scale > 0.0) m = m.with_random_init(spec.init_seed, spec.init_scale);
  return m;
}

}  // namespace gradmatch
