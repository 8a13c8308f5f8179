#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "mgmf/model.hpp"

using namespace mgmf;

namespace {

RunConfig tiny_cfg() {
  RunConfig cfg;
  cfg.enc.vocab = 64;
  cfg.enc.width = 8;
  cfg.enc.heads = 2;
  cfg.enc.ff_hidden = 16;
  cfg.enc.max_text = 8;
  cfg.enc.image_side = 8;
  cfg.enc.patch_side = 4;
  cfg.layers = 1;
  cfg.class_counts = {2, 3, 2, 3};
  cfg.batch = 2;
  return cfg;
}

std::vector<MemeSample> tiny_batch(std::size_t n, std::uint64_t seed = 99) {
  SynthConfig scfg;
  scfg.count = n;
  return synth_generate(scfg, seed);
}

double row_sum(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t.values()[r * t.cols() + c];
  return s;
}

}  // namespace

TEST_CASE("forward produces one combined distribution row per sample") {
  RunConfig cfg = tiny_cfg();
  Model model(cfg);
  const auto batch = tiny_batch(3);

  Tape tape;
  ModelOutput out = model.forward(tape, batch);
  CHECK(out.sources == 3);
  for (std::size_t t = 0; t < 4; ++t) {
    REQUIRE(out.scores[t].rows() == 3);
    REQUIRE(out.scores[t].cols() == static_cast<std::size_t>(cfg.class_counts[t]));
    // sum of three softmax outputs
    for (std::size_t r = 0; r < 3; ++r)
      CHECK(row_sum(out.scores[t], r) == doctest::Approx(3.0).epsilon(1e-12));
  }
  CHECK(out.pooled_t.rows() == 3);
  CHECK(out.pooled_t.cols() == 8);
  CHECK(out.pooled_i.rows() == 3);

  auto preds = model.predict(out);
  for (std::size_t t = 0; t < 4; ++t) {
    REQUIRE(preds[t].size() == 3);
    for (int p : preds[t]) {
      CHECK(p >= 0);
      CHECK(p < cfg.class_counts[t]);
    }
  }
}

TEST_CASE("dropping unimodal predictions leaves the fused head alone") {
  RunConfig cfg = tiny_cfg();
  cfg.drop.up = true;
  Model model(cfg);
  const auto batch = tiny_batch(2);

  Tape tape;
  ModelOutput out = model.forward(tape, batch);
  CHECK(out.sources == 1);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t r = 0; r < 2; ++r)
      CHECK(row_sum(out.scores[t], r) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("two instances of one config agree bitwise") {
  RunConfig cfg = tiny_cfg();
  Model a(cfg), b(cfg);
  const auto batch = tiny_batch(2);

  Tape ta, tb;
  ModelOutput oa = a.forward(ta, batch);
  ModelOutput ob = b.forward(tb, batch);
  for (std::size_t t = 0; t < 4; ++t) {
    auto va = oa.scores[t].values(), vb = ob.scores[t].values();
    REQUIRE(va.size() == vb.size());
    for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
  }
}

TEST_CASE("ablation flags never touch initialization") {
  RunConfig cfg = tiny_cfg();
  Model full(cfg);

  for (int which = 0; which < 4; ++which) {
    RunConfig ab = cfg;
    ab.drop.om = which == 0;
    ab.drop.up = which == 1;
    ab.drop.gl = which == 2;
    ab.drop.dg = which == 3;
    Model dropped(ab);
    REQUIRE(dropped.params().size() == full.params().size());
    for (std::size_t i = 0; i < full.params().size(); ++i) {
      CHECK(dropped.params()[i].name == full.params()[i].name);
      CHECK(dropped.params()[i].value == full.params()[i].value);
    }
  }
}

TEST_CASE("loss carries one named part per enabled component") {
  RunConfig cfg = tiny_cfg();
  const auto batch = tiny_batch(2);

  auto part_names = [&](const RunConfig& c) {
    Model m(c);
    Tape tape;
    ModelOutput out = m.forward(tape, batch);
    LossParts lp = m.loss(tape, out, batch);
    double sum = 0.0;
    std::vector<std::string> names;
    for (const auto& [name, val] : lp.parts) {
      names.push_back(name);
      sum += val.item();
    }
    CHECK(lp.total.item() == doctest::Approx(sum).epsilon(1e-12));
    return names;
  };

  CHECK(part_names(cfg) ==
        std::vector<std::string>{"ce.mr", "ce.sa", "ce.id", "ce.od", "dg"});

  RunConfig no_dg = cfg;
  no_dg.drop.dg = true;
  CHECK(part_names(no_dg) ==
        std::vector<std::string>{"ce.mr", "ce.sa", "ce.id", "ce.od"});

  RunConfig decayed = cfg;
  decayed.loss.trunk_decay = 1e-3;
  CHECK(part_names(decayed) == std::vector<std::string>{"ce.mr", "ce.sa", "ce.id",
                                                        "ce.od", "dg", "decay"});

  RunConfig one_task = cfg;
  one_task.loss.task_enabled = {true, false, false, true};
  CHECK(part_names(one_task) == std::vector<std::string>{"ce.mr", "ce.od", "dg"});
}

TEST_CASE("region ablation only matters when regions exist") {
  RunConfig cfg = tiny_cfg();
  RunConfig no_regions = cfg;
  no_regions.drop.om = true;
  Model full(cfg), dropped(no_regions);

  auto batch = tiny_batch(1);
  REQUIRE(!batch[0].regions.empty());

  // heads start at zero, so compare the pooled image embedding instead of
  // the head outputs
  Tape tf, td;
  ModelOutput of = full.forward(tf, batch);
  ModelOutput od = dropped.forward(td, batch);
  bool any_diff = false;
  for (std::size_t i = 0; i < of.pooled_i.values().size(); ++i)
    any_diff |= of.pooled_i.values()[i] != od.pooled_i.values()[i];
  CHECK(any_diff);

  // strip the boxes: with nothing to mine, both paths see one image row
  batch[0].regions.clear();
  Tape tf2, td2;
  ModelOutput of2 = full.forward(tf2, batch);
  ModelOutput od2 = dropped.forward(td2, batch);
  auto a = of2.pooled_i.values(), b = od2.pooled_i.values();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  for (std::size_t t = 0; t < 4; ++t) {
    auto sa = of2.scores[t].values(), sb = od2.scores[t].values();
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == sb[i]);
  }
}

TEST_CASE("interaction variants differ in promotion-block usage") {
  const auto batch = tiny_batch(1);

  RunConfig cfg = tiny_cfg();
  Model global(cfg);
  Tape tg;
  global.forward(tg, batch);
  CHECK(tg.attn_stats().cross_block_calls == 4);

  RunConfig local = cfg;
  local.interaction_global = false;
  Model pairwise(local);
  Tape tl;
  ModelOutput out = pairwise.forward(tl, batch);
  CHECK(tl.attn_stats().cross_block_calls == 2);
  for (std::size_t t = 0; t < 4; ++t) CHECK(out.scores[t].valid());

  // the gl ablation flag forces the same pairwise path
  RunConfig wo_gl = cfg;
  wo_gl.drop.gl = true;
  Model ablated(wo_gl);
  Tape ta;
  ablated.forward(ta, batch);
  CHECK(ta.attn_stats().cross_block_calls == 2);
}

TEST_CASE("alignment vectors follow the contrast placement flag") {
  const auto batch = tiny_batch(2);
  RunConfig cfg = tiny_cfg();
  Model post(cfg);
  RunConfig pre_cfg = cfg;
  pre_cfg.contrast_pre_stack = true;
  Model pre(pre_cfg);

  Tape tp, tq;
  ModelOutput op = post.forward(tp, batch);
  ModelOutput oq = pre.forward(tq, batch);
  bool any_diff = false;
  for (std::size_t i = 0; i < op.pooled_t.values().size(); ++i)
    any_diff |= op.pooled_t.values()[i] != oq.pooled_t.values()[i];
  CHECK(any_diff);
}

TEST_CASE("unimodal heads can read the post-stack sequences instead") {
  const auto batch = tiny_batch(2);
  RunConfig cfg = tiny_cfg();
  Model pre(cfg);
  RunConfig post_cfg = cfg;
  post_cfg.unimodal_post_fusion = true;
  Model post(post_cfg);

  // zero-initialized heads hide the placement change; give both models the
  // same nonzero text head so the moved input shows up in the scores
  for (Model* m : {&pre, &post}) {
    auto& w = m->params().at("head.text.mr").value;
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = 0.01 * (static_cast<double>(i) + 1.0);
  }

  Tape tp, tq;
  ModelOutput op = pre.forward(tp, batch);
  ModelOutput oq = post.forward(tq, batch);
  bool any_diff = false;
  for (std::size_t i = 0; i < op.scores[0].values().size(); ++i)
    any_diff |= op.scores[0].values()[i] != oq.scores[0].values()[i];
  CHECK(any_diff);
}

TEST_CASE("empty batch is rejected") {
  Model model(tiny_cfg());
  Tape tape;
  CHECK_THROWS_AS(model.forward(tape, {}), ContractError);
}

TEST_CASE("whole-model gradients match finite differences") {
  RunConfig cfg = tiny_cfg();
  cfg.loss.trunk_decay = 1e-3;  // exercise the decay term too
  Model model(cfg);
  const auto batch = tiny_batch(2, 123);

  auto loss = [&] {
    Tape tape;
    ModelOutput out = model.forward(tape, batch);
    LossParts lp = model.loss(tape, out, batch);
    tape.backward(lp.total);
    return lp.total.item();
  };
  testutil::FdResult r = testutil::fd_vs_analytic(model.params(), loss, loss, 2);
  CHECK(r.checked > 300);
  CHECK(r.max_rel < 1e-3);
}
