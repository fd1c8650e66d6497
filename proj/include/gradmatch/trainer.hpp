#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradmatch/selectors.hpp"

namespace gradmatch {

struct TrainConfig {
  int total_epochs = 100;
  int selection_interval = 20;  // R
  double budget_fraction = 0.1;
  Strategy strategy = Strategy::grad_match;
  bool per_batch = false;
  bool per_class = false;
  double warm_kappa = 0.0;  // 0 = no warm start
  double lr0 = 0.01;
  int batch_size = 20;
  std::uint64_t seed = 0;
  bool is_valid = false;
  double lambda = 0.5;
  double epsilon = 0.01;
  bool diagnostics = true;  // per-round gradient error / alignment logging

  void validate() const {
    if (total_epochs < 1) throw std::invalid_argument("train: T >= 1 required");
    if (selection_interval < 1) throw std::invalid_argument("train: R >= 1 required");
    if (budget_fraction <= 0.0 || budget_fraction > 1.0)
      throw std::invalid_argument("train: budget_fraction in (0,1] required");
    if (warm_kappa < 0.0 || warm_kappa > 1.0)
      throw std::invalid_argument("train: warm_kappa in [0,1] required");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size >= 1 required");
    if (lr0 <= 0.0) throw std::invalid_argument("train: lr0 > 0 required");
  }

  std::string strategy_name() const {
    std::string name = gradmatch::to_string(strategy);
    if (per_batch && (strategy == Strategy::grad_match || strategy == Strategy::craig))
      name += "pb";
    return name;
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
  double selection_time_s = 0.0;
  double train_time_s = 0.0;
  std::optional<double> grad_error;     // ||sum w g - full train gradient||
  std::optional<double> alignment_cos;  // cosine against the selection target
  std::optional<double> lr_bound;       // mean-form descent step bound
  int selection_round = -1;             // -1 during the full-data phase
};

struct RunRecord {
  std::string strategy;
  double budget_fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::vector<Selection> selections;  // one entry per selection round
  double final_accuracy = 0.0;
  double final_train_loss = 0.0;
  double total_time_s = 0.0;  // selection + sgd wall time; eval excluded

  double mean_grad_error() const {
    double total = 0.0;
    int count = 0;
    for (const auto& e : epochs)
      if (e.grad_error) {
        total += *e.grad_error;
        ++count;
      }
    return count ? total / count : 0.0;
  }
};

// Warm-start split: T_s = round(kappa*T) subset epochs imply T_f =
// round(T_s * budget_fraction) initial full-data epochs.
inline std::pair<int, int> warm_schedule(int total_epochs, double kappa,
                                         double budget_fraction) {
  if (kappa < 0.0 || kappa > 1.0)
    throw std::invalid_argument("warm_schedule: kappa in [0,1] required");
  const int t_s = static_cast<int>(std::llround(kappa * total_epochs));
  const int t_f = static_cast<int>(std::llround(t_s * budget_fraction));
  return {t_f, t_s};
}

inline double cosine_lr(int epoch, int total_epochs, double lr0) {
  if (epoch < 0 || epoch >= total_epochs)
    throw std::invalid_argument("cosine_lr: epoch out of range");
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * double(epoch) / double(total_epochs)));
}

struct AlignmentDiagnostic {
  double dot = 0.0;
  double cos_angle = 0.0;
  double lr_bound = 0.0;
};

// Descent diagnostics for a selection in bank units: the weighted subset
// gradient against the target and the largest step size guaranteeing a loss
// decrease. Both constants default to the coarsest in-bank estimate (max row
// norm); callers tracking running maxima pass their own.
inline AlignmentDiagnostic alignment_diagnostic(const GradientBank& bank,
                                                const Selection& sel,
                                                double lipschitz_hat = 0.0,
                                                double sigma_hat = 0.0) {
  if (sel.indices.empty())
    throw std::invalid_argument("alignment_diagnostic: empty selection");
  Vector approx = Vector::Zero(bank.dim());
  for (std::size_t i = 0; i < sel.indices.size(); ++i)
    approx += sel.weights[static_cast<Eigen::Index>(i)] *
              bank.rows.row(sel.indices[i]).transpose();
  const double approx_norm = approx.norm();
  const double target_norm = bank.target.norm();
  if (approx_norm == 0.0 || target_norm == 0.0)
    throw ZeroGradient("alignment_diagnostic: zero gradient");

  AlignmentDiagnostic out;
  out.dot = approx.dot(bank.target);
  out.cos_angle = out.dot / (approx_norm * target_norm);
  if (sigma_hat <= 0.0) sigma_hat = bank.rows.rowwise().norm().maxCoeff();
  if (lipschitz_hat <= 0.0) lipschitz_hat = sigma_hat;
  out.lr_bound = 2.0 * target_norm * out.cos_angle / (lipschitz_hat * sigma_hat);
  return out;
}

struct TrainResult {
  ModelState model;
  RunRecord record;
};

namespace detail {

// One weighted pass over the sample set. PB selections arrive pre-batched and
// are consumed in selection order without reshuffling; otherwise the samples
// are shuffled and chunked to batch_size.
inline void batch_sgd_epoch(ModelState& model, SgdOptimizer& opt,
                            const Dataset& train, const std::vector<int>& samples,
                            const Vector& weights, int batch_size, double lr,
                            const std::vector<int>* batch_lengths,
                            std::uint64_t shuffle_seed) {
  std::vector<int> order(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) order[i] = static_cast<int>(i);
  if (!batch_lengths) {
    Rng rng(derive_seed(shuffle_seed, "epoch_shuffle"));
    rng.shuffle(order);
  }

  std::size_t pos = 0;
  std::size_t batch_idx = 0;
  while (pos < order.size()) {
    std::size_t len =
        batch_lengths
            ? static_cast<std::size_t>((*batch_lengths)[batch_idx++])
            : std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                    order.size() - pos);
    std::vector<int> chunk(len);
    Vector chunk_w(static_cast<Eigen::Index>(len));
    for (std::size_t i = 0; i < len; ++i) {
      const int local = order[pos + i];
      chunk[i] = samples[static_cast<std::size_t>(local)];
      chunk_w[static_cast<Eigen::Index>(i)] = weights[local];
    }
    opt.step(model, batch_grad(model, train, chunk, &chunk_w), lr);
    pos += len;
  }
}

}  // namespace detail

// Invoked with the current model right after each selection round; the CLI
// hangs checkpoint writing off it.
using SelectionHook = std::function<void(int epoch, const ModelState&)>;

// Adaptive training loop: optional warm full-data phase, then selection at the
// first subset epoch and every R epochs after it, weighted mini-batch SGD on
// the carried-forward subset in between. Banks are rebuilt from the current
// parameters at every selection epoch; stale gradients are never reused.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set,
                         const Dataset& val_set, const Dataset& test_set,
                         const ModelState& init,
                         const SelectionHook& on_selection = nullptr) {
  cfg.validate();
  if (train_set.n() == 0) throw std::invalid_argument("train: empty training set");

  const auto [t_full, t_subset] =
      cfg.strategy == Strategy::full
          ? std::pair<int, int>{cfg.total_epochs, 0}
          : warm_schedule(cfg.total_epochs, cfg.warm_kappa, cfg.budget_fraction);
  (void)t_subset;
  const int budget_k = std::max(
      1, static_cast<int>(std::llround(cfg.budget_fraction * train_set.n())));

  TrainResult result{init, {}};
  result.record.strategy = cfg.strategy_name();
  result.record.budget_fraction = cfg.budget_fraction;
  result.record.seed = cfg.seed;

  SgdOptimizer opt;
  std::vector<int> active_samples = all_indices(train_set);
  Vector active_weights = Vector::Ones(train_set.n());
  std::vector<int> batch_lengths;
  bool pre_batched = false;
  int selection_round = -1;

  // Running maxima feeding the descent-step diagnostic.
  const bool want_diag =
      cfg.diagnostics &&
      double(train_set.n()) * init.last_layer_dim() <= 5e7;
  double sigma_hat = 0.0;
  double lipschitz_hat = 0.0;
  Vector prev_mean_target;
  Vector prev_theta;

  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(epoch, cfg.total_epochs, cfg.lr0);

    const bool subset_phase = epoch >= t_full && cfg.strategy != Strategy::full;
    if (subset_phase && (epoch - t_full) % cfg.selection_interval == 0) {
      detail::StopWatch watch;
      ++selection_round;
      SelectorConfig scfg;
      scfg.budget_k = budget_k;
      scfg.lambda = cfg.lambda;
      scfg.epsilon = cfg.epsilon;
      scfg.per_batch = cfg.per_batch;
      scfg.batch_B = cfg.batch_size;
      scfg.per_class = cfg.per_class;
      scfg.is_valid = cfg.is_valid;
      scfg.seed = derive_seed(cfg.seed, "selection",
                              static_cast<std::uint64_t>(selection_round));
      Selection sel = select(cfg.strategy, result.model, train_set, val_set, scfg);
      if (sel.indices.empty())
        throw DegenerateBank("train: selection returned no elements");

      // Elements whose refit weight clipped to zero carry no gradient; prune
      // them so no mini-batch ends up with an all-zero weight vector.
      pre_batched = cfg.per_batch && (cfg.strategy == Strategy::grad_match ||
                                      cfg.strategy == Strategy::craig);
      active_samples.clear();
      batch_lengths.clear();
      std::vector<double> kept_weights;
      std::size_t cursor = 0;
      for (std::size_t e = 0; e < sel.indices.size(); ++e) {
        const int run = sel.element_sizes[e];
        const double w = sel.weights[static_cast<Eigen::Index>(e)];
        if (w > 0.0) {
          for (int i = 0; i < run; ++i) {
            active_samples.push_back(sel.sample_indices[cursor + i]);
            kept_weights.push_back(w);
          }
          if (pre_batched) batch_lengths.push_back(run);
        }
        cursor += static_cast<std::size_t>(run);
      }
      if (active_samples.empty())
        throw DegenerateBank("train: selection weights are all zero");
      active_weights = Eigen::Map<Vector>(kept_weights.data(),
                                          static_cast<Eigen::Index>(kept_weights.size()));
      rec.selection_time_s = watch.seconds();
      if (on_selection) on_selection(epoch, result.model);

      if (want_diag) {
        const GradientBank diag =
            build_per_sample(result.model, train_set, val_set, cfg.is_valid);
        const Vector train_target = diag.rows.colwise().sum();
        Vector approx = Vector::Zero(diag.dim());
        for (std::size_t i = 0; i < active_samples.size(); ++i)
          approx += active_weights[static_cast<Eigen::Index>(i)] *
                    diag.rows.row(active_samples[i]).transpose();
        rec.grad_error = (approx - train_target).norm();

        // Mean-form step bound: SGD consumes weight-renormalized gradients,
        // so the bound compares the per-sample means. Constants are running
        // maxima: sigma from observed subset-gradient norms, the smoothness
        // constant from secants between consecutive selection rounds.
        const double weight_total = active_weights.sum();
        const double target_count =
            cfg.is_valid ? std::max(1, val_set.n()) : train_set.n();
        const Vector mean_target = diag.target / target_count;
        const double tgt_norm = mean_target.norm();
        if (weight_total > 0.0 && tgt_norm > 0.0) {
          const Vector used = approx / weight_total;
          const double used_norm = used.norm();
          if (used_norm > 0.0) {
            rec.alignment_cos = used.dot(mean_target) / (used_norm * tgt_norm);
            sigma_hat = std::max(sigma_hat, used_norm);
            if (prev_theta.size() == result.model.theta.size()) {
              const double dtheta = (result.model.theta - prev_theta).norm();
              if (dtheta > 0.0)
                lipschitz_hat = std::max(
                    lipschitz_hat, (mean_target - prev_mean_target).norm() / dtheta);
            }
            if (lipschitz_hat > 0.0 && *rec.alignment_cos > 0.0)
              rec.lr_bound = 2.0 * tgt_norm * *rec.alignment_cos /
                             (lipschitz_hat * sigma_hat);
            prev_mean_target = mean_target;
            prev_theta = result.model.theta;
          }
        }
      }
      result.record.selections.push_back(std::move(sel));
    }
    rec.selection_round = subset_phase ? selection_round : -1;

    detail::StopWatch sgd_watch;
    try {
      detail::batch_sgd_epoch(result.model, opt, train_set, active_samples,
                              active_weights, cfg.batch_size, rec.lr,
                              pre_batched ? &batch_lengths : nullptr,
                              derive_seed(cfg.seed, "shuffle",
                                          static_cast<std::uint64_t>(epoch)));
    } catch (const NonFiniteGradient& e) {
      throw NonFiniteLoss("train: " + std::string(e.what()) + " at epoch " +
                          std::to_string(epoch) + " (strategy " +
                          result.record.strategy + ", lr " + std::to_string(rec.lr) +
                          ")");
    }
    rec.train_time_s = sgd_watch.seconds();

    const auto loss = forward_loss(result.model, train_set, all_indices(train_set));
    if (!std::isfinite(loss.loss))
      throw NonFiniteLoss("train: non-finite loss at epoch " + std::to_string(epoch));
    rec.train_loss = loss.loss;
    rec.test_accuracy = test_set.n() > 0 ? accuracy(result.model, test_set) : 0.0;

    result.record.total_time_s += rec.selection_time_s + rec.train_time_s;
    result.record.epochs.push_back(rec);
  }

  result.record.final_accuracy =
      result.record.epochs.empty() ? 0.0 : result.record.epochs.back().test_accuracy;
  result.record.final_train_loss =
      result.record.epochs.empty() ? 0.0 : result.record.epochs.back().train_loss;
  return result;
}

// Full-data training halted at the first epoch whose cumulative wall time
// exceeds the budget measured from a completed subset run.
inline TrainResult full_early_stop_baseline(const TrainConfig& cfg,
                                            double budget_time_s,
                                            const Dataset& train_set,
                                            const Dataset& val_set,
                                            const Dataset& test_set,
                                            const ModelState& init) {
  TrainConfig full_cfg = cfg;
  full_cfg.strategy = Strategy::full;
  full_cfg.budget_fraction = 1.0;
  full_cfg.validate();

  TrainResult result{init, {}};
  result.record.strategy = "full-earlystop";
  result.record.budget_fraction = 1.0;
  result.record.seed = cfg.seed;
  if (budget_time_s <= 0.0) return result;

  SgdOptimizer opt;
  const std::vector<int> samples = all_indices(train_set);
  const Vector weights = Vector::Ones(train_set.n());
  (void)val_set;

  for (int epoch = 0; epoch < full_cfg.total_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(epoch, full_cfg.total_epochs, full_cfg.lr0);
    detail::StopWatch sgd_watch;
    detail::batch_sgd_epoch(result.model, opt, train_set, samples, weights,
                            full_cfg.batch_size, rec.lr, nullptr,
                            derive_seed(cfg.seed, "shuffle",
                                        static_cast<std::uint64_t>(epoch)));
    rec.train_time_s = sgd_watch.seconds();
    rec.train_loss =
        forward_loss(result.model, train_set, all_indices(train_set)).loss;
    rec.test_accuracy = test_set.n() > 0 ? accuracy(result.model, test_set) : 0.0;
    result.record.total_time_s += rec.train_time_s;
    result.record.epochs.push_back(rec);
    if (result.record.total_time_s > budget_time_s) break;
  }
  result.record.final_accuracy =
      result.record.epochs.empty() ? 0.0 : result.record.epochs.back().test_accuracy;
  result.record.final_train_loss =
      result.record.epochs.empty() ? 0.0 : result.record.epochs.back().train_loss;
  return result;
}

}  // namespace gradmatch
