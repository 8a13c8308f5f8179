#include <doctest.h>

#include <vector>

#include "mgmf/fusion.hpp"
#include "fd_check.hpp"
#include "ref_eval.hpp"

using namespace mgmf;

namespace {

FusionConfig small_cfg(std::size_t layers = 1) {
  FusionConfig cfg;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.ff_hidden = 12;
  cfg.layers = layers;
  cfg.class_counts = {2, 3, 2, 3};
  return cfg;
}

std::vector<double> random_seq(std::size_t n, std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void zero_all_cap_outputs(ParamStore& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string& n = ps[i].name;
    const bool output_proj = n.ends_with(".wo") || n.ends_with(".bo") ||
                             n.ends_with(".ffn.w2") || n.ends_with(".ffn.b2");
    if (output_proj && (n.starts_with("gl.") || n.starts_with("ll.")))
      std::fill(ps[i].value.begin(), ps[i].value.end(), 0.0);
  }
}

}  // namespace

TEST_CASE("global context pools one row per modality") {
  ParamStore ps;
  GlobalLocal gl(ps, small_cfg(), 3);
  Tape tape;
  const std::size_t d = 8;
  // single-token text: g row 0 is that token
  const auto tv = random_seq(1, d, 1);
  std::vector<double> iv(3 * d);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < d; ++c) iv[r * d + c] = 0.25;  // constant rows
  Tensor g = gl.build_global_context(tape, tape.constant({1, d}, tv),
                                     tape.constant({3, d}, iv));
  REQUIRE(g.shape() == Shape{2, d});
  for (std::size_t c = 0; c < d; ++c) {
    CHECK(g.values()[c] == doctest::Approx(tv[c]).epsilon(1e-15));
    CHECK(g.values()[d + c] == doctest::Approx(0.25).epsilon(1e-15));
  }

  // permuting rows leaves the pooled context unchanged
  const auto big = random_seq(4, d, 2);
  std::vector<double> perm(big.size());
  const std::size_t order[] = {2, 0, 3, 1};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < d; ++c) perm[r * d + c] = big[order[r] * d + c];
  Tensor g1 = gl.build_global_context(tape, tape.constant({4, d}, big),
                                      tape.constant({1, d}, tv));
  Tensor g2 = gl.build_global_context(tape, tape.constant({4, d}, perm),
                                      tape.constant({1, d}, tv));
  for (std::size_t c = 0; c < d; ++c)
    CHECK(g1.values()[c] == doctest::Approx(g2.values()[c]).epsilon(1e-12));

  CHECK_THROWS_AS(gl.build_global_context(tape, Tensor{}, g1), ContractError);
}

TEST_CASE("full-concat context variant keeps whole sequences") {
  FusionConfig cfg = small_cfg();
  cfg.full_concat_context = true;
  ParamStore ps;
  GlobalLocal gl(ps, cfg, 3);
  Tape tape;
  Tensor g = gl.build_global_context(tape, tape.constant({4, 8}, random_seq(4, 8, 5)),
                                     tape.constant({3, 8}, random_seq(3, 8, 6)));
  CHECK(g.shape() == Shape{7, 8});
}

TEST_CASE("one interaction layer matches the straight-line reference") {
  ParamStore ps;
  GlobalLocal gl(ps, small_cfg(), 17);
  const std::size_t d = 8, nt = 3, ni = 3;
  const auto tv = random_seq(nt, d, 11);
  const auto iv = random_seq(ni, d, 12);

  Tape tape;
  GlState out = gl.gl_stack(tape, tape.constant({nt, d}, tv),
                            tape.constant({ni, d}, iv));

  // reference: pooled context, one promotion per direction, averaged refresh
  ref::Vec g0(2 * d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < nt; ++r) g0[c] += tv[r * d + c];
    g0[c] /= nt;
    for (std::size_t r = 0; r < ni; ++r) g0[d + c] += iv[r * d + c];
    g0[d + c] /= ni;
  }
  ParamStore& store = ps;
  auto capw = [&](const std::string& prefix) {
    CapParamRefs p;
    p.ln1 = {&store.at(prefix + ".ln1.gain"), &store.at(prefix + ".ln1.bias")};
    p.cross = {&store.at(prefix + ".cross.wq"), &store.at(prefix + ".cross.bq"),
               &store.at(prefix + ".cross.wk"), &store.at(prefix + ".cross.bk"),
               &store.at(prefix + ".cross.wv"), &store.at(prefix + ".cross.bv"),
               &store.at(prefix + ".cross.wo"), &store.at(prefix + ".cross.bo")};
    p.ln2 = {&store.at(prefix + ".ln2.gain"), &store.at(prefix + ".ln2.bias")};
    p.self = {&store.at(prefix + ".self.wq"), &store.at(prefix + ".self.bq"),
              &store.at(prefix + ".self.wk"), &store.at(prefix + ".self.bk"),
              &store.at(prefix + ".self.wv"), &store.at(prefix + ".self.bv"),
              &store.at(prefix + ".self.wo"), &store.at(prefix + ".self.bo")};
    p.ln3 = {&store.at(prefix + ".ln3.gain"), &store.at(prefix + ".ln3.bias")};
    p.ffn = {&store.at(prefix + ".ffn.w1"), &store.at(prefix + ".ffn.b1"),
             &store.at(prefix + ".ffn.w2"), &store.at(prefix + ".ffn.b2")};
    p.heads = 2;
    p.ln_eps = 1e-5;
    return ref::snapshot(p);
  };
  const ref::Vec ht = ref::cap(tv, nt, g0, 2, d, capw("gl.0.tg.fwd"));
  const ref::Vec gt = ref::cap(g0, 2, tv, nt, d, capw("gl.0.tg.rev"));
  const ref::Vec hi = ref::cap(iv, ni, g0, 2, d, capw("gl.0.ig.fwd"));
  const ref::Vec gi = ref::cap(g0, 2, iv, ni, d, capw("gl.0.ig.rev"));

  for (std::size_t k = 0; k < ht.size(); ++k)
    CHECK(out.h_t.values()[k] == doctest::Approx(ht[k]).epsilon(1e-12));
  for (std::size_t k = 0; k < hi.size(); ++k)
    CHECK(out.h_i.values()[k] == doctest::Approx(hi[k]).epsilon(1e-12));
  for (std::size_t k = 0; k < gt.size(); ++k)
    CHECK(out.g.values()[k] ==
          doctest::Approx(0.5 * (gt[k] + gi[k])).epsilon(1e-12));
}

TEST_CASE("zeroed promotion weights carry state through unchanged") {
  ParamStore ps;
  GlobalLocal gl(ps, small_cfg(3), 19);
  zero_all_cap_outputs(ps);
  Tape tape;
  const auto tv = random_seq(4, 8, 21);
  const auto iv = random_seq(2, 8, 22);
  Tensor ht = tape.constant({4, 8}, tv);
  Tensor hi = tape.constant({2, 8}, iv);
  GlState out = gl.gl_stack(tape, ht, hi);
  CHECK(out.h_t.shape() == Shape{4, 8});
  CHECK(out.h_i.shape() == Shape{2, 8});
  CHECK(out.g.shape() == Shape{2, 8});
  for (std::size_t k = 0; k < tv.size(); ++k) CHECK(out.h_t.values()[k] == tv[k]);
  for (std::size_t k = 0; k < iv.size(); ++k) CHECK(out.h_i.values()[k] == iv[k]);
  // g = avg of two identical residual copies of the initial context
  Tensor g0 = gl.build_global_context(tape, ht, hi);
  for (std::size_t k = 0; k < g0.numel(); ++k)
    CHECK(out.g.values()[k] == g0.values()[k]);

  auto [lt, li] = gl.local_local_stack(tape, ht, hi);
  for (std::size_t k = 0; k < tv.size(); ++k) CHECK(lt.values()[k] == tv[k]);
  for (std::size_t k = 0; k < iv.size(); ++k) CHECK(li.values()[k] == iv[k]);
}

TEST_CASE("promotion-call count is four per layer") {
  for (std::size_t layers : {std::size_t{1}, std::size_t{2}, std::size_t{4}}) {
    ParamStore ps;
    GlobalLocal gl(ps, small_cfg(layers), 23);
    Tape tape;
    gl.gl_stack(tape, tape.constant({3, 8}, random_seq(3, 8, 1)),
                tape.constant({2, 8}, random_seq(2, 8, 2)));
    CHECK(tape.attn_stats().cross_block_calls == 4 * layers);
  }
}

TEST_CASE("layer count zero is rejected") {
  ParamStore ps;
  CHECK_THROWS_AS(GlobalLocal(ps, small_cfg(0), 3), ConfigError);
}

TEST_CASE("interaction cost: global context is linear, pairwise quadratic") {
  const std::size_t d = 8;
  for (std::size_t n : {std::size_t{4}, std::size_t{8}}) {
    ParamStore ps;
    GlobalLocal gl(ps, small_cfg(), 29);
    Tape tape;
    Tensor ht = tape.constant({n, d}, random_seq(n, d, 3));
    Tensor hi = tape.constant({n, d}, random_seq(n, d, 4));
    gl.gl_stack(tape, ht, hi);
    // per pair: n*2 + 2*n cross entries; self runs over n and over 2
    CHECK(tape.attn_stats().cross_entries == 2 * (2 * n + 2 * n));
    CHECK(tape.attn_stats().self_entries == 2 * (n * n + 4));

    Tape tape2;
    Tensor ht2 = tape2.constant({n, d}, random_seq(n, d, 3));
    Tensor hi2 = tape2.constant({n, d}, random_seq(n, d, 4));
    gl.local_local_stack(tape2, ht2, hi2);
    CHECK(tape2.attn_stats().cross_entries == 2 * n * n);
    CHECK(tape2.attn_stats().self_entries == 2 * n * n);
  }
}

TEST_CASE("fusion head emits a distribution per task") {
  ParamStore ps;
  GlobalLocal gl(ps, small_cfg(), 31);
  Tape tape;
  Tensor ht = tape.constant({3, 8}, random_seq(3, 8, 7));
  Tensor hi = tape.constant({2, 8}, random_seq(2, 8, 8));
  GlState st = gl.gl_stack(tape, ht, hi);
  const std::array<int, 4> classes{2, 3, 2, 3};
  for (std::size_t task = 0; task < 4; ++task) {
    Tensor y = gl.fusion_head(tape, st.h_t, st.h_i, st.g, task);
    REQUIRE(y.shape() == Shape{1, static_cast<std::size_t>(classes[task])});
    double sum = 0.0;
    for (std::size_t c = 0; c < y.numel(); ++c) {
      CHECK(y.values()[c] > 0.0);
      sum += y.values()[c];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(gl.fusion_head(tape, st.h_t, st.h_i, st.g, 4), ContractError);

  // the local baseline feeds the same head without a context block
  auto [lt, li] = gl.local_local_stack(tape, ht, hi);
  Tensor y = gl.fusion_head(tape, lt, li, Tensor{}, 0);
  CHECK(y.shape() == Shape{1, 2});
}

TEST_CASE("zeroed head weights give the uniform distribution") {
  ParamStore ps;
  GlobalLocal gl(ps, small_cfg(), 37);
  for (const char* name : {"head.fused.sa", "head.text.sa", "head.image.sa"})
    std::fill(ps.at(name).value.begin(), ps.at(name).value.end(), 0.0);
  Tape tape;
  Tensor ht = tape.constant({3, 8}, random_seq(3, 8, 9));
  Tensor hi = tape.constant({2, 8}, random_seq(2, 8, 10));
  GlState st = gl.gl_stack(tape, ht, hi);
  Tensor ym = gl.fusion_head(tape, st.h_t, st.h_i, st.g, 1);
  Tensor yt = gl.unimodal_head(tape, ht, 1, Modality::Text);
  Tensor yi = gl.unimodal_head(tape, hi, 1, Modality::Image);
  for (const Tensor& y : {ym, yt, yi})
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(y.values()[c] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("unimodal head pools before projecting") {
  ParamStore ps;
  GlobalLocal gl(ps, small_cfg(), 41);
  Tape tape;
  const auto one = random_seq(1, 8, 11);
  Tensor y1 = gl.unimodal_head(tape, tape.constant({1, 8}, one), 0, Modality::Text);
  CHECK(y1.shape() == Shape{1, 2});

  // permuting the sequence leaves the pooled head output unchanged
  const auto seq = random_seq(3, 8, 12);
  std::vector<double> perm(seq.size());
  const std::size_t order[] = {2, 0, 1};
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) perm[r * 8 + c] = seq[order[r] * 8 + c];
  Tensor a = gl.unimodal_head(tape, tape.constant({3, 8}, seq), 2, Modality::Image);
  Tensor b = gl.unimodal_head(tape, tape.constant({3, 8}, perm), 2, Modality::Image);
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(a.values()[c] == doctest::Approx(b.values()[c]).epsilon(1e-12));
}

TEST_CASE("combined scores sum to three and keep the fused argmax") {
  Tape tape;
  Tensor ym = tape.constant({1, 3}, std::vector<double>{0.2, 0.5, 0.3});
  Tensor uniform = tape.constant({1, 3}, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3});
  const Tensor parts[] = {ym, uniform, uniform};
  Tensor y = combine_predictions(parts);
  double sum = 0.0;
  for (std::size_t c = 0; c < 3; ++c) sum += y.values()[c];
  CHECK(sum == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(argmax_class(y.values()) == 1);

  const Tensor all_uniform[] = {uniform, uniform, uniform};
  CHECK(argmax_class(combine_predictions(all_uniform).values()) == 0);

  const Tensor solo[] = {ym};
  CHECK(argmax_class(combine_predictions(solo).values()) == 1);

  Tensor wrong = tape.constant({1, 2}, std::vector<double>{0.5, 0.5});
  const Tensor bad[] = {ym, wrong};
  CHECK_THROWS_AS(combine_predictions(bad), ContractError);
}

TEST_CASE("fusion head gradients match finite differences") {
  ParamStore ps;
  GlobalLocal gl(ps, small_cfg(), 43);
  const auto tv = random_seq(3, 8, 13);
  const auto iv = random_seq(2, 8, 14);
  auto loss = [&] {
    Tape tape;
    GlState st = gl.gl_stack(tape, tape.constant({3, 8}, tv),
                             tape.constant({2, 8}, iv));
    Tensor ym = gl.fusion_head(tape, st.h_t, st.h_i, st.g, 1);
    Tensor yt = gl.unimodal_head(tape, tape.constant({3, 8}, tv), 1, Modality::Text);
    const Tensor parts[] = {ym, yt};
    Tensor y = combine_predictions(parts);
    Tensor l = sum_all(mul(y, y));
    tape.backward(l);
    return l.item();
  };
  testutil::FdResult r = testutil::fd_vs_analytic(ps, loss, loss, 2);
  CHECK(r.checked > 80);
  CHECK(r.max_rel < 1e-4);
}
