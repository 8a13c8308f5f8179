#include <doctest.h>

#include <cmath>
#include <vector>

#include "mgmf/losses.hpp"
#include "fd_check.hpp"

using namespace mgmf;

namespace {

std::vector<double> random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// brute-force cross-pair InfoNCE on plain doubles
double symmetric_oracle(const std::vector<double>& t, const std::vector<double>& im,
                        std::size_t n, std::size_t d, double tau) {
  auto norm_row = [&](const std::vector<double>& v, std::size_t i) {
    std::vector<double> r(d);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += v[i * d + c] * v[i * d + c];
    s = std::sqrt(s);
    for (std::size_t c = 0; c < d; ++c) r[c] = v[i * d + c] / s;
    return r;
  };
  std::vector<double> sims(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = norm_row(t, i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto b = norm_row(im, j);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += a[c] * b[c];
      sims[i * n + j] = s / tau;
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row += std::exp(sims[i * n + j]);
      col += std::exp(sims[j * n + i]);
    }
    total += -std::log(std::exp(sims[i * n + i]) / row);
    total += -std::log(std::exp(sims[i * n + i]) / col);
  }
  return total / (2.0 * n);
}

}  // namespace

TEST_CASE("cross entropy at a certain prediction is zero") {
  Tape tape;
  // combined scores summing to 3, all mass on the label
  Tensor scores = tape.constant({2, 3}, std::vector<double>{3, 0.0, 0.0, 0.0, 3, 0.0});
  // avoid log(0) on other entries: only the label entry is read
  std::vector<int> labels{0, 1};
  Tensor l = task_ce_loss(tape, scores, labels, 3, {}, 0.0);
  CHECK(l.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform scores is ln C") {
  Tape tape;
  for (std::size_t c : {std::size_t{2}, std::size_t{3}, std::size_t{5}}) {
    std::vector<double> uniform(2 * c, 3.0 / static_cast<double>(c));
    Tensor scores = tape.constant({2, c}, uniform);
    std::vector<int> labels{0, static_cast<int>(c - 1)};
    Tensor l = task_ce_loss(tape, scores, labels, 3, {}, 0.0);
    CHECK(l.item() == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
  }
}

TEST_CASE("head regularizer arithmetic") {
  ParamStore ps;
  Parameter& w = ps.create_const("head.w", {10}, 1.0);
  Tape tape;
  Tensor scores = tape.constant({1, 2}, std::vector<double>{1.5, 1.5});
  std::vector<int> labels{0};
  Parameter* group[] = {&w};
  Tensor with = task_ce_loss(tape, scores, labels, 3, group, 0.01);
  Tensor without = task_ce_loss(tape, scores, labels, 3, {}, 0.0);
  CHECK(with.item() - without.item() == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("labels outside the class range are rejected") {
  Tape tape;
  Tensor scores = tape.constant({1, 3}, std::vector<double>{1, 1, 1});
  std::vector<int> bad{3};
  CHECK_THROWS_AS(task_ce_loss(tape, scores, bad, 3, {}, 0.0), ContractError);
  std::vector<int> neg{-1};
  CHECK_THROWS_AS(task_ce_loss(tape, scores, neg, 3, {}, 0.0), ContractError);
}

TEST_CASE("cross entropy stays positive off the one-hot optimum") {
  Tape tape;
  SplitMix64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> row(4);
    double sum = 0.0;
    for (double& v : row) {
      v = rng.uniform(0.05, 1.0);
      sum += v;
    }
    for (double& v : row) v *= 3.0 / sum;
    Tensor scores = tape.constant({1, 4}, row);
    std::vector<int> labels{static_cast<int>(rng.below(4))};
    CHECK(task_ce_loss(tape, scores, labels, 3, {}, 0.0).item() > 0.0);
  }
}

TEST_CASE("literal contrastive mode: equal similarities give ln(2N-1)") {
  for (std::size_t n : {std::size_t{2}, std::size_t{4}, std::size_t{8}}) {
    Tape tape;
    // every row identical in both modalities: every pair similarity is 1
    std::vector<double> rows(n * 4);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 4; ++c) rows[i * 4 + c] = 0.5 + 0.25 * c;
    Tensor t = tape.constant({n, 4}, rows);
    Tensor im = tape.constant({n, 4}, rows);
    Tensor l = dual_semantic_loss(tape, t, im, 0.3, ContrastiveMode::Literal);
    CHECK(l.item() ==
          doctest::Approx(std::log(static_cast<double>(2 * n - 1))).epsilon(1e-12));
  }
}

TEST_CASE("symmetric contrastive mode matches the brute-force oracle") {
  Tape tape;
  const std::size_t n = 4, d = 8;
  const auto tv = random_rows(n, d, 31);
  const auto iv = random_rows(n, d, 32);
  for (double tau : {1.0, 0.25}) {
    Tensor l = dual_semantic_loss(tape, tape.constant({n, d}, tv),
                                  tape.constant({n, d}, iv), tau,
                                  ContrastiveMode::Symmetric);
    CHECK(l.item() == doctest::Approx(symmetric_oracle(tv, iv, n, d, tau)).epsilon(1e-12));
  }

  // the printed two-pair case: unit positives, orthogonal negatives
  std::vector<double> e1{1, 0, 0, 0, 0, 1, 0, 0};
  Tensor t = tape.constant({2, 4}, e1);
  Tensor im = tape.constant({2, 4}, e1);
  Tensor l = dual_semantic_loss(tape, t, im, 1.0, ContrastiveMode::Symmetric);
  CHECK(l.item() == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(l.item() == doctest::Approx(symmetric_oracle(e1, e1, 2, 4, 1.0)).epsilon(1e-12));
}

TEST_CASE("contrastive loss ignores positive rescaling") {
  Tape tape;
  const std::size_t n = 3, d = 6;
  const auto tv = random_rows(n, d, 41);
  const auto iv = random_rows(n, d, 42);
  std::vector<double> ts(tv), is(iv);
  for (double& v : ts) v *= 3.7;
  for (double& v : is) v *= 0.02;
  for (ContrastiveMode mode : {ContrastiveMode::Symmetric, ContrastiveMode::Literal}) {
    Tensor a = dual_semantic_loss(tape, tape.constant({n, d}, tv),
                                  tape.constant({n, d}, iv), 0.5, mode);
    Tensor b = dual_semantic_loss(tape, tape.constant({n, d}, ts),
                                  tape.constant({n, d}, is), 0.5, mode);
    CHECK(a.item() == doctest::Approx(b.item()).epsilon(1e-9));
  }
}

TEST_CASE("lower temperature sharpens a dominant positive") {
  Tape tape;
  const std::size_t n = 4, d = 8;
  const auto tv = random_rows(n, d, 51);
  // identical modalities: diagonal similarity is exactly 1, strictly largest
  double prev = 1e300;
  for (double tau : {1.0, 0.5, 0.1}) {
    Tensor l = dual_semantic_loss(tape, tape.constant({n, d}, tv),
                                  tape.constant({n, d}, tv), tau,
                                  ContrastiveMode::Symmetric);
    CHECK(l.item() <= prev + 1e-12);
    prev = l.item();
  }
}

TEST_CASE("contrastive loss contract violations") {
  Tape tape;
  Tensor one = tape.constant({1, 4}, std::vector<double>{1, 0, 0, 0});
  CHECK_THROWS_AS(dual_semantic_loss(tape, one, one, 0.1, ContrastiveMode::Symmetric),
                  ContractError);
  std::vector<double> with_zero{1, 0, 0, 0, 0, 0, 0, 0};
  Tensor z = tape.constant({2, 4}, with_zero);
  CHECK_THROWS_AS(dual_semantic_loss(tape, z, z, 0.1, ContrastiveMode::Symmetric),
                  ContractError);
  Tensor ok = tape.constant({2, 4}, std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0});
  CHECK_THROWS_AS(dual_semantic_loss(tape, ok, ok, 0.0, ContrastiveMode::Symmetric),
                  ConfigError);
}

TEST_CASE("contrastive gradients match finite differences") {
  ParamStore ps;
  Parameter& pt = ps.create_uniform("pool.t", {4, 8}, 0.8, 61);
  Parameter& pi = ps.create_uniform("pool.i", {4, 8}, 0.8, 62);
  for (ContrastiveMode mode : {ContrastiveMode::Symmetric, ContrastiveMode::Literal}) {
    auto loss = [&] {
      Tape tape;
      Tensor l = dual_semantic_loss(tape, tape.param(pt), tape.param(pi), 0.4, mode);
      tape.backward(l);
      return l.item();
    };
    testutil::FdResult r = testutil::fd_vs_analytic(ps, loss, loss, 8);
    CHECK(r.checked == 16);
    CHECK(r.max_rel < 1e-4);
  }
}

TEST_CASE("total loss sums components and flags non-finite ones") {
  Tape tape;
  std::vector<std::pair<std::string, Tensor>> parts;
  double expect = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double v = 0.25 * (i + 1);
    parts.emplace_back("task" + std::to_string(i),
                       tape.constant({1, 1}, std::vector<double>{v}));
    expect += v;
  }
  CHECK(total_loss(parts).item() == doctest::Approx(expect).epsilon(1e-12));

  // dropping one component drops exactly its contribution
  std::vector<std::pair<std::string, Tensor>> fewer(parts.begin(), parts.end() - 1);
  CHECK(total_loss(parts).item() - total_loss(fewer).item() ==
        doctest::Approx(1.0).epsilon(1e-12));

  parts.emplace_back("dg", tape.constant({1, 1}, std::vector<double>{
                               std::numeric_limits<double>::quiet_NaN()}));
  try {
    total_loss(parts);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("dg") != std::string::npos);
  }
}

TEST_CASE("task CE gradients flow to scores and heads") {
  ParamStore ps;
  Parameter& head = ps.create_uniform("head.w", {3, 3}, 0.5, 71);
  Parameter& raw = ps.create_uniform("raw", {2, 3}, 0.5, 72);
  std::vector<int> labels{2, 0};
  auto loss = [&] {
    Tape tape;
    // positive scores via softmax, scaled to sum 3 like combined predictions
    Tensor probs = softmax_rows(matmul(tape.param(raw), tape.param(head)));
    Tensor scores = scale(probs, 3.0);
    Parameter* group[] = {&head};
    Tensor l = task_ce_loss(tape, scores, labels, 3, group, 0.05);
    tape.backward(l);
    return l.item();
  };
  testutil::FdResult r = testutil::fd_vs_analytic(ps, loss, loss, 6);
  CHECK(r.checked > 10);
  CHECK(r.max_rel < 1e-4);
}
