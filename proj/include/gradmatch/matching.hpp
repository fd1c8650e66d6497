#pragma once

#include <Eigen/Dense>
#include <limits>
#include <span>
#include <vector>

#include "gradmatch/errors.hpp"
#include "gradmatch/gradient_bank.hpp"

namespace gradmatch {

// Nonnegative ridge weights over a column subset:
//   min_{w >= 0} || sum_i w_i g_i - target ||^2 + lambda ||w||^2
struct WeightSolution {
  Vector weights;          // aligned to the subset, nonnegative
  Vector residual_vector;  // sum_i w_i g_i - target
  double objective_value = 0.0;
  int iterations = 0;
};

struct SolverOptions {
  double tol = 1e-8;  // KKT tolerance on dErr/dw, relative to the gradient scale
  int max_iters = 0;  // 0 -> 10 * |X| + 30 active-set steps
  bool allow_negative = false;  // unconstrained ridge (deviation flag)
};

namespace detail {

// Restricted equality solve on the passive set. LDLT first; a rank-revealing
// fallback covers lambda = 0 with linearly dependent columns.
inline Vector passive_solve(const Matrix& hess, const Vector& corr,
                            const std::vector<int>& passive) {
  const int p = static_cast<int>(passive.size());
  Matrix sub(p, p);
  Vector rhs(p);
  for (int a = 0; a < p; ++a) {
    rhs[a] = corr[passive[static_cast<std::size_t>(a)]];
    for (int b = 0; b < p; ++b)
      sub(a, b) = hess(passive[static_cast<std::size_t>(a)],
                       passive[static_cast<std::size_t>(b)]);
  }
  Vector z = sub.ldlt().solve(rhs);
  if (!z.allFinite() || (sub * z - rhs).lpNorm<Eigen::Infinity>() >
                            1e-9 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) {
    z = sub.completeOrthogonalDecomposition().solve(rhs);
  }
  return z;
}

}  // namespace detail

// Active-set (Lawson-Hanson) solve of the nonnegative ridge problem, with an
// optional warm start. The passive-set systems are solved exactly, so the
// KKT residual on selected coordinates is at machine precision and the zero
// coordinates are checked against tol scaled by the gradient magnitude.
inline WeightSolution solve_nnls_ridge(const GradientBank& bank,
                                       std::span<const int> subset, double lambda,
                                       SolverOptions opts = {},
                                       const Vector* warm_start = nullptr) {
  const int m = static_cast<int>(subset.size());
  if (m == 0) throw std::invalid_argument("solve_nnls_ridge: empty subset");
  if (lambda < 0.0) throw std::invalid_argument("solve_nnls_ridge: lambda >= 0 required");

  Matrix sel(m, bank.dim());
  for (int i = 0; i < m; ++i) sel.row(i) = bank.rows.row(subset[static_cast<std::size_t>(i)]);
  const Vector& b = bank.target;

  Matrix hess = sel * sel.transpose();
  hess.diagonal().array() += lambda;
  const Vector corr = sel * b;

  WeightSolution out;
  if (opts.allow_negative) {
    out.weights = hess.ldlt().solve(corr);
    out.residual_vector = sel.transpose() * out.weights - b;
    out.objective_value =
        out.residual_vector.squaredNorm() + lambda * out.weights.squaredNorm();
    out.iterations = 1;
    return out;
  }

  const double tol_eff =
      opts.tol * std::max(1.0, 2.0 * corr.cwiseAbs().maxCoeff());
  const int max_iters = opts.max_iters > 0 ? opts.max_iters : 10 * m + 30;

  Vector w = Vector::Zero(m);
  std::vector<char> in_passive(static_cast<std::size_t>(m), 0);
  std::vector<int> passive;
  if (warm_start && warm_start->size() == m) {
    for (int i = 0; i < m; ++i)
      if ((*warm_start)[i] > 0.0) {
        in_passive[static_cast<std::size_t>(i)] = 1;
        passive.push_back(i);
        w[i] = (*warm_start)[i];
      }
  }

  int iters = 0;
  auto restore_feasibility = [&]() {
    while (!passive.empty()) {
      ++iters;
      const Vector z = detail::passive_solve(hess, corr, passive);
      double min_z = std::numeric_limits<double>::infinity();
      for (int a = 0; a < static_cast<int>(passive.size()); ++a)
        min_z = std::min(min_z, z[a]);
      if (min_z > 0.0) {
        for (int a = 0; a < static_cast<int>(passive.size()); ++a)
          w[passive[static_cast<std::size_t>(a)]] = z[a];
        return;
      }
      // Step to the boundary and drop the coordinates that hit zero.
      double alpha = 1.0;
      for (int a = 0; a < static_cast<int>(passive.size()); ++a) {
        if (z[a] > 0.0) continue;
        const double wi = w[passive[static_cast<std::size_t>(a)]];
        if (wi - z[a] > 0.0) alpha = std::min(alpha, wi / (wi - z[a]));
      }
      std::vector<int> next;
      for (int a = 0; a < static_cast<int>(passive.size()); ++a) {
        const int i = passive[static_cast<std::size_t>(a)];
        const double stepped = w[i] + alpha * (z[a] - w[i]);
        if (z[a] <= 0.0 && stepped <= 1e-14) {
          w[i] = 0.0;
          in_passive[static_cast<std::size_t>(i)] = 0;
        } else {
          w[i] = stepped;
          next.push_back(i);
        }
      }
      passive = std::move(next);
      if (iters > max_iters)
        throw NoConvergence("solve_nnls_ridge: feasibility loop exceeded budget",
                            max_iters);
    }
  };

  restore_feasibility();
  while (true) {
    if (++iters > max_iters)
      throw NoConvergence("solve_nnls_ridge: active-set loop exceeded budget",
                          max_iters);
    const Vector q = hess * w - corr;  // half the objective gradient
    int worst = -1;
    double worst_q = -0.5 * tol_eff;
    for (int i = 0; i < m; ++i) {
      if (in_passive[static_cast<std::size_t>(i)]) continue;
      if (q[i] < worst_q) {
        worst_q = q[i];
        worst = i;
      }
    }
    if (worst < 0) break;  // KKT satisfied
    in_passive[static_cast<std::size_t>(worst)] = 1;
    passive.push_back(worst);
    restore_feasibility();
  }

  out.weights = w;
  out.residual_vector = sel.transpose() * w - b;
  out.objective_value =
      std::max(0.0, out.residual_vector.squaredNorm() + lambda * w.squaredNorm());
  out.iterations = iters;
  return out;
}

// Per-coordinate KKT partials 2(g_i . residual + lambda w_i) at a solution;
// the on-request diagnostic dump for solver post-mortems.
inline Vector kkt_residuals(const GradientBank& bank, std::span<const int> subset,
                            const WeightSolution& sol, double lambda) {
  const int m = static_cast<int>(subset.size());
  Vector partials(m);
  for (int i = 0; i < m; ++i)
    partials[i] = 2.0 * (bank.rows.row(subset[static_cast<std::size_t>(i)])
                             .dot(sol.residual_vector) +
                         lambda * sol.weights[i]);
  return partials;
}

// E_lambda(X) = min_{w>=0} ||A_X w - b||^2 + lambda ||w||^2, squared-norm form.
// E_lambda(empty) = ||b||^2 (the empty weighted sum).
inline double eval_E_lambda(const GradientBank& bank, std::span<const int> subset,
                            double lambda, SolverOptions opts = {}) {
  if (subset.empty()) return bank.target.squaredNorm();
  return solve_nnls_ridge(bank, subset, lambda, opts).objective_value;
}

// Gradient of Err_lambda with respect to w, over the whole ground set:
//   r_j = 2 g_j . (sum_i w_i g_i - target) + 2 lambda w_j
// Unselected elements carry w_j = 0.
inline Vector residual_gradient(const GradientBank& bank,
                                std::span<const int> subset, const Vector& weights,
                                double lambda) {
  Vector resid = -bank.target;
  for (int i = 0; i < static_cast<int>(subset.size()); ++i)
    resid += weights[i] * bank.rows.row(subset[static_cast<std::size_t>(i)]).transpose();
  Vector r = 2.0 * (bank.rows * resid);
  for (int i = 0; i < static_cast<int>(subset.size()); ++i)
    r[subset[static_cast<std::size_t>(i)]] += 2.0 * lambda * weights[i];
  return r;
}

// Maximization view F_lambda(X) = l_max - E_lambda(X); the default l_max is
// E_lambda(empty) = ||target||^2 so F is nonnegative and F(empty) = 0.
struct MatchObjective {
  const GradientBank* bank = nullptr;
  double lambda = 0.5;
  double l_max = 0.0;  // 0 -> ||target||^2

  double upper_bound() const {
    return l_max > 0.0 ? l_max : bank->target.squaredNorm();
  }
  double E(std::span<const int> subset) const {
    return eval_E_lambda(*bank, subset, lambda);
  }
  double F(std::span<const int> subset) const { return upper_bound() - E(subset); }
};

}  // namespace gradmatch
