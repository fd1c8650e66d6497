#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradmatch/trainer.hpp"

namespace gradmatch {

struct ExperimentSummary {
  std::string strategy;
  double budget_fraction = 1.0;
  double final_accuracy = 0.0;
  double relative_error_vs_full = 0.0;  // accuracy percentage points
  double speedup = 1.0;                 // full_time / run_time
  double mean_grad_error = 0.0;
  double redundancy_pct = 0.0;
};

// Fraction of the training set never covered by any selection round.
inline double redundancy_pct(const std::vector<Selection>& selections, int n) {
  if (n <= 0) return 0.0;
  std::set<int> used;
  for (const Selection& sel : selections)
    used.insert(sel.sample_indices.begin(), sel.sample_indices.end());
  return 100.0 * double(n - static_cast<int>(used.size())) / double(n);
}

struct GradientErrorRow {
  std::string strategy;
  double budget_fraction = 0.0;
  double mean_error = 0.0;  // mean sqrt-form error over selection epochs
  int runs = 0;
};

// Mean gradient error per (strategy, budget) over the rounds of each run.
inline std::vector<GradientErrorRow> gradient_error_table(
    const std::vector<RunRecord>& records) {
  std::map<std::pair<std::string, double>, std::pair<double, int>> acc;
  for (const RunRecord& run : records) {
    double total = 0.0;
    int count = 0;
    for (const EpochRecord& e : run.epochs)
      if (e.grad_error) {
        total += *e.grad_error;
        ++count;
      }
    if (!count) continue;
    auto& slot = acc[{run.strategy, run.budget_fraction}];
    slot.first += total / count;
    slot.second += 1;
  }
  std::vector<GradientErrorRow> rows;
  for (const auto& [key, value] : acc)
    rows.push_back({key.first, key.second, value.first / value.second, value.second});
  return rows;
}

inline std::string to_markdown(const std::vector<GradientErrorRow>& rows) {
  std::ostringstream out;
  out << "| strategy | budget | mean gradient error | runs |\n";
  out << "|---|---|---|---|\n";
  for (const auto& r : rows)
    out << "| " << r.strategy << " | " << r.budget_fraction << " | " << r.mean_error
        << " | " << r.runs << " |\n";
  return out.str();
}

inline std::string to_csv(const std::vector<ExperimentSummary>& rows) {
  std::ostringstream out;
  out << "strategy,budget_fraction,final_accuracy,relative_error_pct,speedup,"
         "mean_grad_error,redundancy_pct\n";
  for (const auto& r : rows)
    out << r.strategy << "," << r.budget_fraction << "," << r.final_accuracy << ","
        << r.relative_error_vs_full << "," << r.speedup << "," << r.mean_grad_error
        << "," << r.redundancy_pct << "\n";
  return out.str();
}

// Scatter data in the trade-off plot convention: x speedup, y relative error.
inline std::string scatter_csv(const std::vector<ExperimentSummary>& rows) {
  std::ostringstream out;
  out << "speedup,relative_error_pct,strategy,budget_fraction\n";
  for (const auto& r : rows)
    out << r.speedup << "," << r.relative_error_vs_full << "," << r.strategy << ","
        << r.budget_fraction << "\n";
  return out.str();
}

namespace brute {

// Exact E_lambda for tiny instances by enumerating active sets: the optimum's
// support shows up among the candidate equality solves, every feasible
// candidate is an upper bound, so the feasible minimum is the global minimum.
inline double eval_E_exact(const GradientBank& bank, const std::vector<int>& subset,
                           double lambda) {
  if (subset.empty()) return bank.target.squaredNorm();
  const int m = static_cast<int>(subset.size());
  if (m > 20) throw TooLarge("eval_E_exact: subset too large to enumerate");
  Matrix cols(bank.dim(), m);
  for (int i = 0; i < m; ++i) cols.col(i) = bank.rows.row(subset[static_cast<std::size_t>(i)]).transpose();
  const double empty_value = bank.target.squaredNorm();

  double best = empty_value;
  for (std::uint32_t active = 1; active < (1u << m); ++active) {
    std::vector<int> support;
    for (int i = 0; i < m; ++i)
      if (active & (1u << i)) support.push_back(i);
    Matrix sub(bank.dim(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t i = 0; i < support.size(); ++i)
      sub.col(static_cast<Eigen::Index>(i)) = cols.col(support[i]);
    Matrix h = sub.transpose() * sub;
    h.diagonal().array() += lambda;
    const Vector w = h.ldlt().solve(sub.transpose() * bank.target);
    if (!w.allFinite() || w.minCoeff() < -1e-12) continue;
    const Vector wc = w.cwiseMax(0.0);
    const double value =
        (sub * wc - bank.target).squaredNorm() + lambda * wc.squaredNorm();
    best = std::min(best, value);
  }
  return best;
}

}  // namespace brute

struct BruteForceReport {
  double optimum_F = 0.0;
  double omp_F = 0.0;
  double gamma_hat = 1.0;
  double bound = 0.0;  // lambda / (lambda + k * grad_max^2)
  double l_max = 0.0;
  std::vector<int> optimum_set;
};

// Exhaustive verification harness for the weak-submodularity machinery:
// exact optimum over |X| <= k, the OMP value, the empirical submodularity
// ratio, and the spectral lower bound it must dominate.
inline BruteForceReport brute_force_verifier(const GradientBank& bank, int k,
                                             double lambda) {
  const int n = bank.n_elements();
  if (n > 12) throw TooLarge("brute_force_verifier: n_elements must be <= 12");
  if (k < 1 || k > n) throw std::invalid_argument("brute_force_verifier: bad k");

  BruteForceReport report;
  report.l_max = bank.target.squaredNorm();
  const double grad_max = bank.rows.rowwise().norm().maxCoeff();
  report.bound = lambda / (lambda + k * grad_max * grad_max);

  // Memoize E over every queried subset mask (|L u S| <= 2k, singletons k+1).
  const int max_pop = std::min(n, 2 * k + 1);
  std::vector<double> energy(1u << n, 0.0);
  std::vector<int> members;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    members.clear();
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) members.push_back(i);
    if (static_cast<int>(members.size()) > max_pop) continue;  // never queried
    energy[mask] = brute::eval_E_exact(bank, members, lambda);
  }
  auto value_f = [&](std::uint32_t mask) { return report.l_max - energy[mask]; };

  // Optimum over |X| <= k.
  double best_f = 0.0;
  std::uint32_t best_mask = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) > k) continue;
    const double f = value_f(mask);
    if (f > best_f) {
      best_f = f;
      best_mask = mask;
    }
  }
  report.optimum_F = best_f;
  for (int i = 0; i < n; ++i)
    if (best_mask & (1u << i)) report.optimum_set.push_back(i);

  SelectorConfig cfg;
  cfg.budget_k = k;
  cfg.lambda = lambda;
  cfg.epsilon = 1e-12;  // no early stop: exhaust the budget
  const Selection omp = omp_select(bank, cfg);
  report.omp_F = report.l_max - omp.residual;

  // Empirical submodularity ratio in the sum-vs-group form the restricted
  // strong concavity argument bounds:
  //   gamma_hat = min over disjoint (L, S), |L| <= k, 1 <= |S| <= k of
  //     sum_{j in S} F(j|L) / (F(L u S) - F(L)),
  // skipping vanishing denominators.
  double gamma = std::numeric_limits<double>::infinity();
  for (std::uint32_t l_mask = 0; l_mask < (1u << n); ++l_mask) {
    if (__builtin_popcount(l_mask) > k) continue;
    const std::uint32_t rest = ((1u << n) - 1) & ~l_mask;
    for (std::uint32_t s_mask = rest; s_mask; s_mask = (s_mask - 1) & rest) {
      if (__builtin_popcount(s_mask) > k) continue;
      const double group_gain = value_f(l_mask | s_mask) - value_f(l_mask);
      if (group_gain <= 1e-12) continue;
      double singleton_sum = 0.0;
      for (int j = 0; j < n; ++j)
        if (s_mask & (1u << j))
          singleton_sum += value_f(l_mask | (1u << j)) - value_f(l_mask);
      gamma = std::min(gamma, singleton_sum / group_gain);
    }
  }
  report.gamma_hat = std::isfinite(gamma) ? gamma : 1.0;
  return report;
}

}  // namespace gradmatch
