// Test-only oracles, kept independent of the library solver paths so they can
// referee them.
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include "gradmatch/gradient_bank.hpp"
#include "gradmatch/model.hpp"
#include "gradmatch/rng.hpp"

namespace oracle {

using gradmatch::Matrix;
using gradmatch::Vector;

// Plain fixed-step projected gradient on the nonnegative ridge problem, run
// far past convergence. Deliberately naive: no line search, no coordinate
// sweeps, nothing shared with the production solver.
inline double nnls_ridge_pg(const Matrix& columns /* d x m */, const Vector& b,
                            double lambda, Vector* w_out = nullptr,
                            int iters = 200000) {
  const int m = static_cast<int>(columns.cols());
  const Matrix gram = columns.transpose() * columns;
  const Vector corr = columns.transpose() * b;
  double lip = 2.0 * (gram.cwiseAbs().rowwise().sum().maxCoeff() + lambda);
  if (lip <= 0.0) lip = 1.0;
  const double step = 1.0 / lip;
  Vector w = Vector::Zero(m);
  for (int it = 0; it < iters; ++it) {
    const Vector grad = 2.0 * (gram * w + lambda * w - corr);
    const Vector next = (w - step * grad).cwiseMax(0.0);
    if ((next - w).lpNorm<Eigen::Infinity>() < 1e-15 && it > 100) {
      w = next;
      break;
    }
    w = next;
  }
  if (w_out) *w_out = w;
  return (columns * w - b).squaredNorm() + lambda * w.squaredNorm();
}

inline double nnls_ridge_pg(const gradmatch::GradientBank& bank,
                            std::span<const int> subset, double lambda,
                            Vector* w_out = nullptr) {
  Matrix cols(bank.dim(), static_cast<int>(subset.size()));
  for (int i = 0; i < static_cast<int>(subset.size()); ++i)
    cols.col(i) = bank.rows.row(subset[static_cast<std::size_t>(i)]).transpose();
  return nnls_ridge_pg(cols, bank.target, lambda, w_out);
}

// Closed-form ridge (A'A + lambda I)^-1 A'b; valid reference whenever the
// unconstrained optimum is already nonnegative.
inline Vector ridge_closed_form(const Matrix& columns, const Vector& b,
                                double lambda) {
  Matrix h = columns.transpose() * columns;
  h.diagonal().array() += lambda;
  return h.ldlt().solve(columns.transpose() * b).eval();
}

// Best single-column fit: w = max(0, g.b / (g.g + lambda)).
inline double singleton_energy(const Vector& g, const Vector& b, double lambda) {
  const double denom = g.squaredNorm() + lambda;
  const double w = denom > 0.0 ? std::max(0.0, g.dot(b) / denom) : 0.0;
  return (w * g - b).squaredNorm() + lambda * w * w;
}

// Central differences of a scalar function of theta.
inline Vector central_difference(const std::function<double(const Vector&)>& f,
                                 const Vector& theta, double eps = 1e-5) {
  Vector grad(theta.size());
  Vector probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + eps;
    const double hi = f(probe);
    probe[i] = theta[i] - eps;
    const double lo = f(probe);
    probe[i] = theta[i];
    grad[i] = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

// Random bank shaped like the real ones: unit-norm gradient rows whose sum is
// the target, resampled until every row has positive alignment with it.
inline gradmatch::GradientBank random_bank(int n, int d, std::uint64_t seed,
                                           bool normalize_rows = true) {
  gradmatch::Rng rng(gradmatch::derive_seed(seed, "oracle_bank"));
  gradmatch::GradientBank bank;
  bank.rows.resize(n, d);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) bank.rows(i, j) = rng.next_gaussian();
      if (normalize_rows) bank.rows.row(i) /= bank.rows.row(i).norm();
    }
    bank.target = bank.rows.colwise().sum();
    if ((bank.rows * bank.target).minCoeff() > 1e-9) break;
  }
  bank.element_map.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) bank.element_map[static_cast<std::size_t>(i)] = {i};
  return bank;
}

// Fully unstructured variant for solver stress tests.
inline gradmatch::GradientBank scrambled_bank(int n, int d, std::uint64_t seed) {
  gradmatch::Rng rng(gradmatch::derive_seed(seed, "oracle_scrambled"));
  gradmatch::GradientBank bank;
  bank.rows.resize(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) bank.rows(i, j) = 2.0 * rng.next_gaussian();
  bank.target.resize(d);
  for (int j = 0; j < d; ++j) bank.target[j] = 3.0 * rng.next_gaussian();
  bank.element_map.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) bank.element_map[static_cast<std::size_t>(i)] = {i};
  return bank;
}

}  // namespace oracle
