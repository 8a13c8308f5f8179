#include <doctest.h>

#include <json.hpp>

#include "mgmf/harness.hpp"

using namespace mgmf;

TEST_CASE("gradient check passes on every module") {
  GradCheckReport report = run_grad_check();
  CHECK(report.all_pass());
  REQUIRE(report.modules.size() == 10);

  std::vector<std::string> names;
  for (const auto& m : report.modules) {
    names.push_back(m.module);
    INFO(m.module, " worst ", m.worst_param, " rel ", m.max_rel);
    CHECK(m.pass);
    CHECK(m.max_rel < 1e-3);
    // every entry of a small tensor, at least 32 of a large one;
    // task_loss is smallest with one [8,3] head and its bias
    CHECK(m.entries >= 27);
  }
  CHECK(names == std::vector<std::string>{
                     "encoder_block", "text_encoder", "image_encoder",
                     "promotion_block", "interaction_global",
                     "interaction_pairwise", "prediction_heads", "task_loss",
                     "contrastive_loss", "full_model"});

  const std::string table = grad_check_table(report);
  CHECK(table.find("full_model") != std::string::npos);
  CHECK(table.find("overall pass") != std::string::npos);
  auto j = nlohmann::json::parse(grad_check_json(report));
  CHECK(j["pass"] == true);
  CHECK(j["modules"].size() == 10);
}

TEST_CASE("a wrong gradient rule is reported as failure") {
  GradCheckOptions opts;
  opts.corrupt_gradients = true;
  opts.per_tensor = 8;
  GradCheckReport report = run_grad_check(opts);
  CHECK_FALSE(report.all_pass());
  for (const auto& m : report.modules) CHECK_FALSE(m.pass);
  const std::string table = grad_check_table(report);
  CHECK(table.find("FAIL") != std::string::npos);
}

TEST_CASE("attention entry counting formulas") {
  // one layer, both sequences length 8, two context rows
  CHECK(gl_cross_entries(8, 8, 2, 1) == 64);    // 2*2*(8+8)
  CHECK(gl_self_entries(8, 8, 2, 1) == 136);    // 64+64+8
  CHECK(ll_cross_entries(8, 8, 1) == 128);      // 2*8*8
  CHECK(ll_self_entries(8, 8, 1) == 128);
  // layers scale linearly
  CHECK(gl_cross_entries(8, 8, 2, 3) == 192);
  CHECK(ll_cross_entries(8, 8, 3) == 384);
  // the linear-vs-quadratic contrast at the top sweep length
  CHECK(gl_cross_entries(512, 512, 2, 1) == 4096);
  CHECK(ll_cross_entries(512, 512, 1) == 524288);
}

TEST_CASE("interaction benchmark counts and slopes at small lengths") {
  const std::size_t lengths[] = {8, 16, 32};
  BenchReport report = bench_interaction(lengths, 8, 1, 5);
  REQUIRE(report.points.size() == 3);
  CHECK(report.counts_match);
  for (const BenchPoint& p : report.points) {
    CHECK(p.gl_cross == gl_cross_entries(p.length, p.length, 2, 1));
    CHECK(p.ll_cross == ll_cross_entries(p.length, p.length, 1));
    CHECK(p.gl_ms > 0.0);
    CHECK(p.ll_ms > 0.0);
  }
  // counts follow exact power laws, so the fitted slopes are exact too
  CHECK(report.gl_cross_slope == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(report.ll_cross_slope == doctest::Approx(2.0).epsilon(1e-9));

  const std::string table = bench_table(report);
  CHECK(table.find("slope") != std::string::npos);
  CHECK(table.find("match the closed forms") != std::string::npos);
  auto j = nlohmann::json::parse(bench_json(report));
  CHECK(j["counts_match"] == true);
  CHECK(j["points"].size() == 3);

  const std::size_t too_few[] = {8};
  CHECK_THROWS_AS(bench_interaction(too_few, 8, 1, 5), ContractError);
}

TEST_CASE("ablation sweep shares data and seeds across variants") {
  RunConfig base;
  base.enc.vocab = 64;
  base.enc.width = 8;
  base.enc.heads = 2;
  base.enc.ff_hidden = 16;
  base.enc.max_text = 8;
  base.enc.image_side = 8;
  base.enc.patch_side = 4;
  base.layers = 1;
  base.class_counts = {2, 3, 2, 3};
  base.data.synth.class_counts = base.class_counts;
  base.data.synth_train = 8;
  base.data.synth_test = 4;
  base.steps = 2;
  base.batch = 2;
  base.eval_every = 0;

  const std::uint64_t seeds[] = {1, 2};
  const auto variants = standard_ablations();
  AblationReport report = run_ablation(base, seeds, variants);

  REQUIRE(report.rows.size() == 5);
  CHECK(report.rows[0].variant == "full");
  CHECK(report.rows[3].variant == "wo_gl");
  CHECK(report.train_count == 8);
  CHECK(report.test_count == 4);
  for (const AblationRow& row : report.rows) {
    REQUIRE(row.per_seed.size() == 2);
    double mean = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(row.accuracy[t] >= 0.0);
      CHECK(row.accuracy[t] <= 1.0);
      // the stored mean over seeds matches the per-seed rows
      CHECK(row.accuracy[t] ==
            doctest::Approx((row.per_seed[0][t] + row.per_seed[1][t]) / 2.0)
                .epsilon(1e-12));
      mean += row.accuracy[t] / 4.0;
    }
    CHECK(row.mean_accuracy == doctest::Approx(mean).epsilon(1e-12));
  }

  const std::string table = ablation_table(report);
  CHECK(table.find("full") != std::string::npos);
  CHECK(table.find("wo_dg") != std::string::npos);
  auto j = nlohmann::json::parse(ablation_json(report));
  CHECK(j["rows"].size() == 5);
  CHECK(j["rows"][0]["per_seed_accuracy"].size() == 2);

  CHECK_THROWS_AS(run_ablation(base, {}, variants), ContractError);
  CHECK_THROWS_AS(run_ablation(base, seeds, {}), ContractError);
}
