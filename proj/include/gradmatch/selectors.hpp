#pragma once

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <future>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "gradmatch/matching.hpp"

namespace gradmatch {

struct Selection {
  std::vector<int> indices;  // element ids (samples, batches, or class-local)
  Vector weights;            // aligned to indices, nonnegative
  // Squared matching error at the reported weights: E_lambda for OMP,
  // unregularized ||sum w g - target||^2 for the fixed-weight baselines.
  double residual = 0.0;
  double elapsed_s = 0.0;
  std::string strategy_tag;
  std::vector<int> sample_indices;       // element_map expansion, element order
  std::vector<int> element_sizes;        // samples covered per element
  std::vector<double> residual_history;  // E_lambda after each OMP refit

  // Per-sample weights: each covered sample inherits its element's weight.
  Vector expanded_weights() const {
    Vector out(static_cast<Eigen::Index>(sample_indices.size()));
    Eigen::Index pos = 0;
    for (std::size_t e = 0; e < indices.size(); ++e)
      for (int i = 0; i < element_sizes[e]; ++i)
        out[pos++] = weights[static_cast<Eigen::Index>(e)];
    return out;
  }
};

struct SelectorConfig {
  int budget_k = 1;      // sample budget
  double lambda = 0.5;
  double epsilon = 0.01;  // relative: stop once E/||target||^2 drops below
  bool per_batch = false;
  int batch_B = 20;
  bool per_class = false;
  bool is_valid = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (budget_k < 1) throw std::invalid_argument("selector: budget_k >= 1 required");
    if (epsilon <= 0.0) throw std::invalid_argument("selector: epsilon > 0 required");
    if (lambda < 0.0) throw std::invalid_argument("selector: lambda >= 0 required");
  }
};

namespace detail {

class StopWatch {
 public:
  StopWatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline void expand_samples(const GradientBank& bank, Selection& sel) {
  sel.sample_indices.clear();
  sel.element_sizes.clear();
  for (int e : sel.indices) {
    const auto& members = bank.element_map[static_cast<std::size_t>(e)];
    sel.element_sizes.push_back(static_cast<int>(members.size()));
    for (int s : members) sel.sample_indices.push_back(s);
  }
}

inline void mark_samplewise(Selection& sel) {
  sel.sample_indices = sel.indices;
  sel.element_sizes.assign(sel.indices.size(), 1);
}

}  // namespace detail

// Orthogonal matching pursuit over the bank: repeatedly pick the element with
// the strongest descent direction on Err_lambda, refit all weights by
// nonnegative ridge, and stop at the budget or once the relative residual
// drops below epsilon. Because weights are constrained nonnegative, only
// elements with a negative residual gradient can reduce the error, so the
// argmax over |r_j| is taken over the descent side; an element with r_j >= 0
// would be zeroed by the refit and waste budget. Selected elements are masked
// so the budget is never spent on repeats.
inline Selection omp_select(const GradientBank& bank, const SelectorConfig& cfg) {
  cfg.validate();
  if (cfg.budget_k > bank.n_elements())
    throw std::invalid_argument("omp_select: budget exceeds ground set");
  detail::StopWatch watch;

  Selection sel;
  sel.strategy_tag = "gradmatch-omp";
  const double target_sq = bank.target.squaredNorm();
  if (target_sq == 0.0) {
    sel.weights.resize(0);
    sel.elapsed_s = watch.seconds();
    return sel;
  }
  if (bank.rows.rowwise().norm().maxCoeff() == 0.0)
    throw DegenerateBank("omp_select: all gradient rows are zero");

  std::vector<char> picked(static_cast<std::size_t>(bank.n_elements()), 0);
  Vector r = residual_gradient(bank, {}, Vector(), cfg.lambda);
  double energy = target_sq;  // E_lambda(empty)

  while (static_cast<int>(sel.indices.size()) < cfg.budget_k &&
         energy / target_sq >= cfg.epsilon) {
    int best = -1;
    double best_r = 0.0;
    for (int j = 0; j < bank.n_elements(); ++j) {
      if (picked[static_cast<std::size_t>(j)]) continue;
      if (r[j] < best_r) {
        best_r = r[j];
        best = j;
      }
    }
    if (best < 0) break;  // no descent direction left under w >= 0

    picked[static_cast<std::size_t>(best)] = 1;
    sel.indices.push_back(best);
    Vector warm = Vector::Zero(static_cast<Eigen::Index>(sel.indices.size()));
    warm.head(sel.weights.size()) = sel.weights;
    const WeightSolution fit =
        solve_nnls_ridge(bank, sel.indices, cfg.lambda, {}, &warm);
    sel.weights = fit.weights;
    energy = fit.objective_value;
    sel.residual_history.push_back(energy);
    r = residual_gradient(bank, sel.indices, sel.weights, cfg.lambda);
  }

  sel.residual = energy;
  detail::expand_samples(bank, sel);
  sel.elapsed_s = watch.seconds();
  return sel;
}

// Sum of nearest-selected-gradient distances; the quantity facility-location
// greedy minimizes and an upper bound on sqrt(E_0).
inline double craig_upper_bound(const GradientBank& bank, std::span<const int> subset) {
  double total = 0.0;
  for (int i = 0; i < bank.n_elements(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j : subset)
      best = std::min(best, (bank.rows.row(i) - bank.rows.row(j)).norm());
    total += best;
  }
  return total;
}

// Facility-location greedy over gradient distances. Weights are cluster
// sizes: element j gets the count of ground-set rows whose nearest selected
// gradient is j (distance ties go to the lower element index). The lazy path
// returns the same set as naive greedy, only cheaper.
inline Selection craig_select(const GradientBank& bank, int budget_k,
                              bool lazy = true) {
  if (budget_k < 1) throw std::invalid_argument("craig_select: budget >= 1 required");
  detail::StopWatch watch;
  const int n = bank.n_elements();
  const int k = std::min(budget_k, n);

  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double d = (bank.rows.row(i) - bank.rows.row(j)).norm();
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  // Only the ordering matters for greedy; any constant above max distance works.
  const double l_max = dist.maxCoeff() + 1.0;

  Selection sel;
  sel.strategy_tag = "craig";
  Vector coverage = Vector::Zero(n);  // current max similarity per row
  std::vector<char> picked(static_cast<std::size_t>(n), 0);

  auto gain_of = [&](int e) {
    double g = 0.0;
    for (int i = 0; i < n; ++i)
      g += std::max(0.0, (l_max - dist(i, e)) - coverage[i]);
    return g;
  };
  auto commit = [&](int e) {
    for (int i = 0; i < n; ++i)
      coverage[i] = std::max(coverage[i], l_max - dist(i, e));
    picked[static_cast<std::size_t>(e)] = 1;
    sel.indices.push_back(e);
  };

  if (lazy) {
    // CELF queue: (gain, -index) so ties resolve to the lower index.
    using Entry = std::pair<double, int>;
    auto cmp = [](const Entry& a, const Entry& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second < b.second;  // -index: larger means smaller index
    };
    std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> heap(cmp);
    std::vector<int> fresh_round(static_cast<std::size_t>(n), 0);
    for (int e = 0; e < n; ++e) heap.emplace(gain_of(e), -e);

    int round = 0;
    while (static_cast<int>(sel.indices.size()) < k && !heap.empty()) {
      const auto [g, neg] = heap.top();
      heap.pop();
      const int e = -neg;
      if (picked[static_cast<std::size_t>(e)]) continue;
      if (fresh_round[static_cast<std::size_t>(e)] == round) {
        commit(e);
        ++round;
      } else {
        fresh_round[static_cast<std::size_t>(e)] = round;
        heap.emplace(gain_of(e), neg);
      }
    }
  } else {
    for (int step = 0; step < k; ++step) {
      int best = -1;
      double best_gain = -1.0;
      for (int e = 0; e < n; ++e) {
        if (picked[static_cast<std::size_t>(e)]) continue;
        const double g = gain_of(e);
        if (g > best_gain) {
          best_gain = g;
          best = e;
        }
      }
      commit(best);
    }
  }

  // Medoid weights: count of rows assigned to each selected element.
  sel.weights = Vector::Zero(static_cast<Eigen::Index>(sel.indices.size()));
  for (int i = 0; i < n; ++i) {
    int assigned = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < sel.indices.size(); ++s) {
      const int j = sel.indices[s];
      const double d = dist(i, j);
      if (d < best || (d == best && j < sel.indices[static_cast<std::size_t>(assigned)])) {
        best = d;
        assigned = static_cast<int>(s);
      }
    }
    sel.weights[assigned] += 1.0;
  }

  Vector approx = Vector::Zero(bank.dim());
  for (std::size_t s = 0; s < sel.indices.size(); ++s)
    approx += sel.weights[static_cast<Eigen::Index>(s)] *
              bank.rows.row(sel.indices[s]).transpose();
  sel.residual = (approx - bank.target).squaredNorm();

  detail::expand_samples(bank, sel);
  sel.elapsed_s = watch.seconds();
  return sel;
}

// Taylor-approximation baseline: top-k elements by dot product with the
// target gradient, all weights one.
inline Selection glister_taylor_select(const GradientBank& bank,
                                       const Vector& val_target, int budget_k) {
  detail::StopWatch watch;
  const int n = bank.n_elements();
  const int k = std::min(budget_k, n);
  const Vector dots = bank.rows * val_target;

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dots[a] > dots[b]; });

  Selection sel;
  sel.strategy_tag = "glister";
  sel.indices.assign(order.begin(), order.begin() + k);
  sel.weights = Vector::Ones(k);

  Vector approx = Vector::Zero(bank.dim());
  for (int e : sel.indices) approx += bank.rows.row(e).transpose();
  sel.residual = (approx - bank.target).squaredNorm();
  detail::expand_samples(bank, sel);
  sel.elapsed_s = watch.seconds();
  return sel;
}

// Uniform without replacement, weights one; indices reported sorted so the
// full-budget case is the identity selection.
inline Selection random_select(int n_elements, int budget_k, std::uint64_t seed) {
  if (budget_k < 1 || budget_k > n_elements)
    throw std::invalid_argument("random_select: budget out of range");
  detail::StopWatch watch;
  Rng rng(derive_seed(seed, "random_select"));
  Selection sel;
  sel.strategy_tag = "random";
  sel.indices = rng.sample_without_replacement(n_elements, budget_k);
  std::sort(sel.indices.begin(), sel.indices.end());
  sel.weights = Vector::Ones(budget_k);
  detail::mark_samplewise(sel);
  sel.elapsed_s = watch.seconds();
  return sel;
}

// Proportional per-class budgets k_c = max(1, round(k * n_c / n)).
inline std::vector<int> per_class_budgets(const std::vector<int>& class_counts,
                                          int budget_k) {
  const long long total =
      std::accumulate(class_counts.begin(), class_counts.end(), 0LL);
  std::vector<int> budgets(class_counts.size());
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    const double share = double(budget_k) * class_counts[c] / double(total);
    budgets[c] = std::max(1, static_cast<int>(std::llround(share)));
    budgets[c] = std::min(budgets[c], class_counts[c]);
  }
  return budgets;
}

enum class Strategy { full, random, grad_match, craig, glister };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::full: return "full";
    case Strategy::random: return "random";
    case Strategy::grad_match: return "gradmatch";
    case Strategy::craig: return "craig";
    case Strategy::glister: return "glister";
  }
  return "?";
}

inline int env_thread_count() {
  const char* raw = std::getenv("GRADMATCH_THREADS");
  if (!raw) return 1;
  const int v = std::atoi(raw);
  return v > 0 ? v : 1;
}

// Strategy dispatch. budget_k counts samples; per-batch modes convert it to a
// batch budget of max(1, round(k/B)) and report batch ids as indices with the
// member samples expanded into sample_indices.
inline Selection select(Strategy strategy, const ModelState& model,
                        const Dataset& train, const Dataset& validation,
                        const SelectorConfig& cfg) {
  cfg.validate();
  detail::StopWatch watch;

  auto make_bank = [&]() {
    return cfg.per_batch
               ? build_per_batch(model, train, cfg.batch_B, cfg.is_valid,
                                 validation, derive_seed(cfg.seed, "bank"))
               : build_per_sample(model, train, validation, cfg.is_valid);
  };
  auto batch_budget = [&](int n_batches) {
    const int b = static_cast<int>(std::llround(double(cfg.budget_k) / cfg.batch_B));
    return std::min(n_batches, std::max(1, b));
  };

  Selection sel;
  switch (strategy) {
    case Strategy::full: {
      sel.strategy_tag = "full";
      sel.indices = all_indices(train);
      sel.weights = Vector::Ones(train.n());
      detail::mark_samplewise(sel);
      break;
    }
    case Strategy::random: {
      sel = random_select(train.n(), std::min(cfg.budget_k, train.n()), cfg.seed);
      break;
    }
    case Strategy::grad_match: {
      if (cfg.per_class && !cfg.per_batch) {
        const std::vector<int> counts = train.class_counts();
        const std::vector<int> budgets = per_class_budgets(counts, cfg.budget_k);
        std::vector<Selection> parts(static_cast<std::size_t>(train.class_count));
        auto run_class = [&](int c) {
          if (counts[static_cast<std::size_t>(c)] == 0) return Selection{};
          const GradientBank bank =
              build_per_class(model, train, c, cfg.is_valid, validation);
          SelectorConfig sub = cfg;
          sub.budget_k = budgets[static_cast<std::size_t>(c)];
          Selection part = omp_select(bank, sub);
          // Map class-local rows to global sample ids.
          for (int& e : part.indices)
            e = bank.element_map[static_cast<std::size_t>(e)][0];
          return part;
        };
        const int threads = env_thread_count();
        if (threads > 1) {
          std::vector<std::future<Selection>> futs;
          futs.reserve(parts.size());
          for (int c = 0; c < train.class_count; ++c)
            futs.push_back(std::async(std::launch::async, run_class, c));
          for (int c = 0; c < train.class_count; ++c)
            parts[static_cast<std::size_t>(c)] = futs[static_cast<std::size_t>(c)].get();
        } else {
          for (int c = 0; c < train.class_count; ++c)
            parts[static_cast<std::size_t>(c)] = run_class(c);
        }
        sel.strategy_tag = "gradmatch-omp";
        std::vector<double> weights;
        for (const Selection& part : parts) {  // merge in class-id order
          sel.indices.insert(sel.indices.end(), part.indices.begin(),
                             part.indices.end());
          for (Eigen::Index i = 0; i < part.weights.size(); ++i)
            weights.push_back(part.weights[i]);
          sel.residual += part.residual;
          for (double e : part.residual_history) sel.residual_history.push_back(e);
        }
        sel.weights = Eigen::Map<Vector>(weights.data(),
                                         static_cast<Eigen::Index>(weights.size()));
        detail::mark_samplewise(sel);
      } else {
        const GradientBank bank = make_bank();
        SelectorConfig sub = cfg;
        if (cfg.per_batch) sub.budget_k = batch_budget(bank.n_elements());
        else sub.budget_k = std::min(cfg.budget_k, bank.n_elements());
        sel = omp_select(bank, sub);
      }
      break;
    }
    case Strategy::craig: {
      const GradientBank bank = make_bank();
      const int k = cfg.per_batch ? batch_budget(bank.n_elements())
                                  : std::min(cfg.budget_k, bank.n_elements());
      sel = craig_select(bank, k);
      break;
    }
    case Strategy::glister: {
      const GradientBank bank = make_bank();
      const int k = cfg.per_batch ? batch_budget(bank.n_elements())
                                  : std::min(cfg.budget_k, bank.n_elements());
      sel = glister_taylor_select(bank, bank.target, k);
      break;
    }
  }
  if (cfg.per_batch && strategy != Strategy::full && strategy != Strategy::random)
    sel.strategy_tag += "-pb";
  sel.elapsed_s = watch.seconds();
  return sel;
}

}  // namespace gradmatch
