#include "doctest.h"
#include "gradmatch/metrics.hpp"
#include "oracles.hpp"

using namespace gradmatch;

namespace {

Selection samplewise_selection(std::vector<int> indices, double weight = 1.0) {
  Selection sel;
  sel.indices = std::move(indices);
  sel.weights = Vector::Constant(static_cast<Eigen::Index>(sel.indices.size()), weight);
  sel.sample_indices = sel.indices;
  sel.element_sizes.assign(sel.indices.size(), 1);
  return sel;
}

}  // namespace

TEST_CASE("redundancy percentages") {
  std::vector<int> everything(20);
  for (int i = 0; i < 20; ++i) everything[static_cast<std::size_t>(i)] = i;
  CHECK(redundancy_pct({samplewise_selection(everything)}, 20) == doctest::Approx(0.0));

  CHECK(redundancy_pct({samplewise_selection({3})}, 10) == doctest::Approx(90.0));

  // Accumulating random half-selections never increases redundancy.
  std::vector<Selection> rounds;
  double prev = 100.0;
  for (int round = 0; round < 12; ++round) {
    rounds.push_back(random_select(40, 20, static_cast<std::uint64_t>(round)));
    const double red = redundancy_pct(rounds, 40);
    CHECK(red <= prev + 1e-12);
    prev = red;
  }
  CHECK(prev < 10.0);  // coupon-collector style decay
}

TEST_CASE("gradient error table groups by strategy and budget") {
  RunRecord a;
  a.strategy = "gradmatch";
  a.budget_fraction = 0.1;
  EpochRecord e1;
  e1.grad_error = 2.0;
  EpochRecord e2;
  e2.grad_error = 4.0;
  a.epochs = {e1, e2};
  RunRecord b = a;
  b.epochs[0].grad_error = 6.0;
  b.epochs[1].grad_error = 8.0;
  RunRecord c;
  c.strategy = "random";
  c.budget_fraction = 0.1;
  c.epochs = {e1};

  const auto rows = gradient_error_table({a, b, c});
  REQUIRE(rows.size() == 2);
  for (const auto& row : rows) {
    if (row.strategy == "gradmatch") {
      CHECK(row.mean_error == doctest::Approx(5.0));  // (3 + 7) / 2
      CHECK(row.runs == 2);
    } else {
      CHECK(row.mean_error == doctest::Approx(2.0));
    }
  }
  const std::string md = to_markdown(rows);
  CHECK(md.find("gradmatch") != std::string::npos);
}

TEST_CASE("full-set selection with exact weights has zero gradient error") {
  const Dataset d = make_gaussian_blobs(15, 2, 4, 3.0, 3);
  const ModelState m = ModelState::logistic(4, 2).with_random_init(9);
  const GradientBank bank = build_per_sample(m, d, d, false);
  Vector approx = bank.rows.colwise().sum();
  CHECK((approx - bank.target).norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("omp beats unit-weight random on a frozen checkpoint") {
  const Dataset d = make_gaussian_blobs(50, 2, 5, 3.0, 17);
  ModelState m = ModelState::logistic(5, 2);
  SgdOptimizer opt;
  const auto idx = all_indices(d);
  for (int epoch = 0; epoch < 5; ++epoch)
    opt.step(m, batch_grad(m, d, idx), 0.1);  // frozen partially-trained model

  const GradientBank bank = build_per_sample(m, d, d, false);
  SelectorConfig cfg;
  cfg.budget_k = 10;
  cfg.lambda = 0.5;
  cfg.epsilon = 1e-12;
  const Selection omp = omp_select(bank, cfg);
  const Selection rnd = random_select(d.n(), 10, 4);

  auto sqrt_error = [&](const Selection& sel) {
    Vector approx = Vector::Zero(bank.dim());
    for (std::size_t i = 0; i < sel.indices.size(); ++i)
      approx += sel.weights[static_cast<Eigen::Index>(i)] *
                bank.rows.row(sel.indices[i]).transpose();
    return (approx - bank.target).norm();
  };
  CHECK(sqrt_error(omp) < sqrt_error(rnd));
}

TEST_CASE("exact enumeration solver agrees with the production solver") {
  for (int trial = 0; trial < 25; ++trial) {
    const auto bank = oracle::scrambled_bank(6, 4, 600 + trial);
    const std::vector<int> subset = {0, 1, 2, 3, 4, 5};
    for (const double lambda : {0.0, 0.5}) {
      const double exact = brute::eval_E_exact(bank, subset, lambda);
      const double solved = eval_E_lambda(bank, subset, lambda);
      CHECK(solved == doctest::Approx(exact).epsilon(1e-8));
    }
  }
}

TEST_CASE("brute-force verifier report fields") {
  // Normalized rows make grad_max = 1 so the bound is lambda/(lambda + k).
  const auto bank = oracle::random_bank(6, 4, 77);
  const BruteForceReport report = brute_force_verifier(bank, 2, 0.5);
  CHECK(report.bound == doctest::Approx(0.5 / 2.5));
  CHECK(report.l_max == doctest::Approx(bank.target.squaredNorm()));
  CHECK(report.omp_F <= report.optimum_F + 1e-9);
  CHECK(report.gamma_hat >= report.bound - 1e-9);

  const auto single = oracle::random_bank(1, 3, 5);
  const BruteForceReport one = brute_force_verifier(single, 1, 0.5);
  CHECK(one.omp_F == doctest::Approx(one.optimum_F));

  const auto big = oracle::random_bank(13, 3, 5);
  CHECK_THROWS_AS(brute_force_verifier(big, 2, 0.5), TooLarge);
}

TEST_CASE("omp respects the greedy approximation factor on random instances") {
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 6 + trial % 3;
    const int k = 2 + trial % 2;
    const auto bank = oracle::random_bank(n, 4, 8800 + trial);
    const BruteForceReport report = brute_force_verifier(bank, k, 0.5);
    CHECK(report.omp_F >=
          (1.0 - std::exp(-report.bound)) * report.optimum_F - 1e-9);
  }
}

TEST_CASE("summary csv emitters") {
  ExperimentSummary full{"full", 1.0, 0.95, 0.0, 1.0, 0.0, 0.0};
  ExperimentSummary sub{"gradmatchpb", 0.1, 0.93, 2.0, 6.5, 1.2, 40.0};
  const std::string csv = to_csv({full, sub});
  CHECK(csv.find("gradmatchpb,0.1,0.93,2,6.5,1.2,40") != std::string::npos);
  const std::string scatter = scatter_csv({full, sub});
  CHECK(scatter.rfind("speedup,relative_error_pct", 0) == 0);
  CHECK(scatter.find("6.5,2,gradmatchpb,0.1") != std::string::npos);
}
