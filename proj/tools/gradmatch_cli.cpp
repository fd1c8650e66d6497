// Command-line front end: configure, run, and report gradient-matching
// subset-selection experiments.
//
// Exit codes: 0 ok, 1 usage, 2 config error, 3 numeric failure,
//             4 missing/corrupt records (report).

#include <filesystem>
#include <iostream>
#include <set>

#include "CLI11.hpp"

#include "gradmatch/io.hpp"

namespace fs = std::filesystem;
using namespace gradmatch;

namespace {

struct Overrides {
  std::string strategy;
  double budget = -1.0;
  double warm_kappa = -1.0;
  std::int64_t seed = -1;
  bool per_batch = false;
  bool is_valid = false;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
  if (!ov.strategy.empty())
    cfg.train.strategy = strategy_from_string(ov.strategy, &cfg.train.per_batch);
  if (ov.per_batch) cfg.train.per_batch = true;
  if (ov.is_valid) cfg.train.is_valid = true;
  if (ov.budget >= 0.0) cfg.train.budget_fraction = ov.budget;
  if (ov.warm_kappa >= 0.0) cfg.train.warm_kappa = ov.warm_kappa;
  if (ov.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(ov.seed)};
}

int cmd_select(const std::string& config_path, const std::string& checkpoint_path,
               const std::string& out_path, const Overrides& ov) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
    apply_overrides(cfg, ov);
    cfg.train.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto [train_set, val_set, test_set] = build_datasets(cfg.data);
    (void)test_set;
    ModelState model =
        checkpoint_path.empty()
            ? build_model(cfg.model, train_set.dim(), train_set.class_count)
            : load_checkpoint(checkpoint_path);

    SelectorConfig scfg;
    scfg.budget_k = std::max(
        1, static_cast<int>(std::llround(cfg.train.budget_fraction * train_set.n())));
    scfg.lambda = cfg.train.lambda;
    scfg.epsilon = cfg.train.epsilon;
    scfg.per_batch = cfg.train.per_batch;
    scfg.batch_B = cfg.train.batch_size;
    scfg.per_class = cfg.train.per_class;
    scfg.is_valid = cfg.train.is_valid;
    scfg.seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();

    const Dataset& target_set =
        cfg.train.is_valid && val_set.n() > 0 ? val_set : train_set;
    const Selection sel =
        select(cfg.train.strategy, model, train_set, target_set, scfg);

    Json j = to_json(sel);
    Json diag;
    diag["relative_residual"] =
        sel.residual /
        std::max(1e-300, build_per_sample(model, train_set, target_set,
                                          cfg.train.is_valid)
                             .target.squaredNorm());
    diag["selected_elements"] = sel.indices.size();
    diag["covered_samples"] = sel.sample_indices.size();
    if (!sel.indices.empty() && !cfg.train.per_class) {
      const GradientBank bank =
          cfg.train.per_batch
              ? build_per_batch(model, train_set, cfg.train.batch_size,
                                cfg.train.is_valid, target_set,
                                derive_seed(scfg.seed, "bank"))
              : build_per_sample(model, train_set, target_set, cfg.train.is_valid);
      try {
        const AlignmentDiagnostic a = alignment_diagnostic(bank, sel);
        diag["alignment_dot"] = a.dot;
        diag["alignment_cos"] = a.cos_angle;
        diag["lr_bound"] = a.lr_bound;
      } catch (const ZeroGradient&) {
        diag["alignment_cos"] = nullptr;
      }
    }
    j["diagnostics"] = diag;

    fs::path out = out_path.empty() ? fs::path("selection.json") : fs::path(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream file(out);
    file << j.dump(2) << "\n";
    std::cout << "wrote " << out.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "selection failed: " << e.what() << "\n";
    return 3;
  }
}

int cmd_train(const std::string& config_path, const Overrides& ov,
              bool save_checkpoints) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
    apply_overrides(cfg, ov);
    cfg.train.validate();
    if (cfg.seeds.empty()) throw std::invalid_argument("seeds list is empty");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto [train_set, val_set, test_set] = build_datasets(cfg.data);
    const ModelState init =
        build_model(cfg.model, train_set.dim(), train_set.class_count);

    fs::create_directories(cfg.output_dir);
    std::vector<double> accuracies;
    std::vector<double> times;
    std::size_t total_rounds = 0;
    Json per_seed = Json::array();

    for (const std::uint64_t seed : cfg.seeds) {
      TrainConfig tcfg = cfg.train;
      tcfg.seed = seed;
      SelectionHook hook;
      if (save_checkpoints) {
        hook = [&, seed](int epoch, const ModelState& model) {
          const fs::path ck = fs::path(cfg.output_dir) /
                              ("seed_" + std::to_string(seed) + "_epoch_" +
                               std::to_string(epoch) + ".ckpt.json");
          save_checkpoint(model, ck.string());
        };
      }
      const TrainResult result =
          train(tcfg, train_set, val_set, test_set, init, hook);

      const fs::path record_path =
          fs::path(cfg.output_dir) / ("seed_" + std::to_string(seed) + ".jsonl");
      write_run_record_jsonl(result.record, record_path.string());
      if (save_checkpoints) {
        const fs::path ck =
            fs::path(cfg.output_dir) / ("seed_" + std::to_string(seed) + "_final.ckpt.json");
        save_checkpoint(result.model, ck.string());
      }

      accuracies.push_back(result.record.final_accuracy);
      times.push_back(result.record.total_time_s);
      total_rounds += result.record.selections.size();
      per_seed.push_back(run_summary_json(result.record, train_set.n()));
      std::cout << "seed " << seed << ": accuracy " << result.record.final_accuracy
                << ", time " << result.record.total_time_s << "s\n";
    }

    const double mean_acc =
        std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / accuracies.size();
    double var = 0.0;
    for (double a : accuracies) var += (a - mean_acc) * (a - mean_acc);
    const double std_acc =
        accuracies.size() > 1 ? std::sqrt(var / (accuracies.size() - 1)) : 0.0;
    const double mean_time =
        std::accumulate(times.begin(), times.end(), 0.0) / times.size();

    Json summary;
    summary["strategy"] = cfg.train.strategy_name();
    summary["budget_fraction"] = cfg.train.budget_fraction;
    summary["seeds"] = cfg.seeds;
    summary["mean_accuracy"] = mean_acc;
    summary["std_accuracy"] = std_acc;
    summary["mean_time_s"] = mean_time;
    summary["no_selection_performed"] = total_rounds == 0;
    summary["runs"] = per_seed;
    summary["config"] = to_json(cfg);

    std::ofstream out(fs::path(cfg.output_dir) / "summary.json");
    out << summary.dump(2) << "\n";
    std::cout << "mean accuracy " << mean_acc << " +- " << std_acc << " over "
              << cfg.seeds.size() << " seeds\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return 3;
  }
}

int cmd_report(std::vector<std::string> run_dirs, const std::string& out_dir) {
  // Deduplicate while preserving order.
  std::vector<std::string> dirs;
  std::set<std::string> seen;
  for (auto& d : run_dirs) {
    const std::string canon = fs::weakly_canonical(d).string();
    if (seen.insert(canon).second) dirs.push_back(d);
  }

  struct Loaded {
    Json summary;
    std::string dir;
  };
  std::vector<Loaded> runs;
  for (const std::string& dir : dirs) {
    const fs::path path = fs::path(dir) / "summary.json";
    std::ifstream in(path);
    if (!in) {
      std::cerr << "missing summary: " << path.string() << "\n";
      return 4;
    }
    try {
      runs.push_back({Json::parse(in), dir});
    } catch (const std::exception& e) {
      std::cerr << "corrupt summary " << path.string() << ": " << e.what() << "\n";
      return 4;
    }
  }

  // Baseline: the full-training run (budget 1.0 or strategy full).
  const Loaded* full = nullptr;
  for (const Loaded& r : runs) {
    const std::string strat = r.summary.value("strategy", std::string());
    if (strat == "full" || r.summary.value("budget_fraction", 0.0) >= 1.0) {
      full = &r;
      break;
    }
  }
  if (!full) {
    std::cerr << "no full-training baseline among the run dirs\n";
    return 4;
  }
  const double full_acc = full->summary.value("mean_accuracy", 0.0);
  const double full_time = full->summary.value("mean_time_s", 0.0);

  std::vector<ExperimentSummary> table;
  std::vector<RunRecord> records;
  for (const Loaded& r : runs) {
    ExperimentSummary row;
    row.strategy = r.summary.value("strategy", std::string("?"));
    row.budget_fraction = r.summary.value("budget_fraction", 0.0);
    row.final_accuracy = r.summary.value("mean_accuracy", 0.0);
    row.relative_error_vs_full = 100.0 * (full_acc - row.final_accuracy);
    const double t = r.summary.value("mean_time_s", 0.0);
    row.speedup = t > 0.0 ? full_time / t : 1.0;
    double mge = 0.0, red = 0.0;
    int count = 0;
    for (const Json& run : r.summary.value("runs", Json::array())) {
      mge += run.value("mean_grad_error", 0.0);
      red += run.value("redundancy_pct", 0.0);
      ++count;
      RunRecord rec;
      rec.strategy = row.strategy;
      rec.budget_fraction = row.budget_fraction;
      const fs::path jsonl =
          fs::path(r.dir) / ("seed_" + std::to_string(run.value("seed", std::uint64_t{0})) + ".jsonl");
      if (fs::exists(jsonl)) rec.epochs = read_run_record_jsonl(jsonl.string());
      records.push_back(std::move(rec));
    }
    if (count) {
      row.mean_grad_error = mge / count;
      row.redundancy_pct = red / count;
    }
    table.push_back(row);
  }

  const fs::path out = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  fs::create_directories(out);
  {
    std::ofstream f(out / "report.csv");
    f << to_csv(table);
  }
  {
    std::ofstream f(out / "scatter.csv");
    f << scatter_csv(table);
  }
  {
    std::ofstream f(out / "gradient_error.md");
    f << to_markdown(gradient_error_table(records));
  }
  std::cout << to_csv(table);
  std::cout << "wrote " << (out / "report.csv").string() << ", "
            << (out / "scatter.csv").string() << ", "
            << (out / "gradient_error.md").string() << "\n";
  return 0;
}

int cmd_verify(int instances, std::uint64_t base_seed) {
  int failures = 0;
  auto check = [&](const std::string& name, bool ok) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "\n";
    if (!ok) ++failures;
  };

  try {
    Rng rng(derive_seed(base_seed, "verify"));
    bool approx_ok = true, gamma_ok = true, setcover_ok = true, craig_ok = true;

    for (int t = 0; t < instances; ++t) {
      // Small normalized instance shaped like a real bank.
      const int n = 5 + static_cast<int>(rng.next_below(2));  // 5..6
      const int k = 2 + static_cast<int>(rng.next_below(2));  // 2..3
      GradientBank bank;
      bank.rows.resize(n, 4);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 4; ++j) bank.rows(i, j) = rng.next_gaussian();
        bank.rows.row(i) /= bank.rows.row(i).norm();
      }
      bank.target = bank.rows.colwise().sum();
      bank.element_map.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) bank.element_map[static_cast<std::size_t>(i)] = {i};

      const double lambda = 0.5;
      const BruteForceReport report = brute_force_verifier(bank, k, lambda);
      if (report.omp_F < (1.0 - std::exp(-report.bound)) * report.optimum_F - 1e-9)
        approx_ok = false;
      if (report.gamma_hat < report.bound - 1e-9) gamma_ok = false;

      // Set-cover bound with an achievable tolerance.
      std::vector<int> everything(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) everything[static_cast<std::size_t>(i)] = i;
      const double e_full = brute::eval_E_exact(bank, everything, lambda);
      const double l_max = bank.target.squaredNorm();
      const double eps_abs = std::sqrt(std::max(e_full, 1e-12) * l_max);
      SelectorConfig scfg;
      scfg.budget_k = n;
      scfg.lambda = lambda;
      scfg.epsilon = eps_abs / l_max;
      const Selection stopped = omp_select(bank, scfg);
      int best_size = n;
      for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        std::vector<int> sub;
        for (int i = 0; i < n; ++i)
          if (mask & (1u << i)) sub.push_back(i);
        if (brute::eval_E_exact(bank, sub, lambda) < eps_abs)
          best_size = std::min<int>(best_size, static_cast<int>(sub.size()));
      }
      const double grad_max = bank.rows.rowwise().norm().maxCoeff();
      const double gamma_bound = lambda / (lambda + n * grad_max * grad_max);
      const double rhs = best_size / gamma_bound * std::log(l_max / eps_abs);
      if (static_cast<double>(stopped.indices.size()) > rhs + 1e-9)
        setcover_ok = false;

      // CRAIG upper bound dominates sqrt(E_0).
      const Selection craig = craig_select(bank, k);
      const double e0 = eval_E_lambda(bank, craig.indices, 0.0);
      if (std::sqrt(e0) > craig_upper_bound(bank, craig.indices) + 1e-9)
        craig_ok = false;
    }

    check("omp approximation factor vs exhaustive optimum", approx_ok);
    check("weak-submodularity ratio above the spectral bound", gamma_ok);
    check("epsilon-stopped omp within the set-cover bound", setcover_ok);
    check("medoid bound dominates the matching error", craig_ok);
  } catch (const std::exception& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return 3;
  }
  return failures == 0 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient-matching data subset selection"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path, checkpoint_path, out_path, out_dir;
  std::vector<std::string> run_dirs;
  bool save_checkpoints = false;
  int verify_instances = 50;
  std::uint64_t verify_seed = 7;

  auto add_override_flags = [&](CLI::App* sub) {
    sub->add_option("--seed", ov.seed, "replace the seed list with one seed");
    sub->add_option("--strategy", ov.strategy,
                    "full|random|gradmatch|gradmatchpb|craig|craigpb|glister");
    sub->add_option("--budget", ov.budget, "budget fraction override");
    sub->add_flag("--per-batch", ov.per_batch, "force per-batch selection");
    sub->add_option("--warm-kappa", ov.warm_kappa, "warm-start fraction override");
    sub->add_flag("--is-valid", ov.is_valid, "match validation gradients");
  };

  CLI::App* sel = app.add_subcommand("select", "run a single selection round");
  sel->add_option("config", config_path, "experiment config JSON")->required();
  sel->add_option("--checkpoint", checkpoint_path, "model checkpoint to select at");
  sel->add_option("--out", out_path, "output JSON path (default selection.json)");
  add_override_flags(sel);

  CLI::App* tr = app.add_subcommand("train", "train with adaptive selection");
  tr->add_option("config", config_path, "experiment config JSON")->required();
  tr->add_flag("--save-checkpoints", save_checkpoints,
               "write a final checkpoint per seed");
  add_override_flags(tr);

  CLI::App* rep = app.add_subcommand("report", "summarize finished run dirs");
  rep->add_option("dirs", run_dirs, "run directories")->required();
  rep->add_option("--out", out_dir, "directory for report files");

  CLI::App* ver = app.add_subcommand("verify", "run the brute-force theory suite");
  ver->add_option("--instances", verify_instances, "random instances per check");
  ver->add_option("--seed", verify_seed, "instance generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (sel->parsed()) return cmd_select(config_path, checkpoint_path, out_path, ov);
  if (tr->parsed()) return cmd_train(config_path, ov, save_checkpoints);
  if (rep->parsed()) return cmd_report(run_dirs, out_dir);
  if (ver->parsed()) return cmd_verify(verify_instances, verify_seed);
  return 1;
}
