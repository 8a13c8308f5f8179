#include "mgmf/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <utility>

#include <json.hpp>

#include "mgmf/cross_attention.hpp"
#include "mgmf/model.hpp"

namespace mgmf {

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed,
                                  const std::string& label) {
  SplitMix64 rng = seeded_stream(seed, label);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Heads initialize to zero, which is a stationary point of several probe
// losses; move them to a generic point so the sweep has gradients to check.
void perturb_heads(ParamStore& ps, std::uint64_t seed) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter& p = ps[i];
    if (p.name.rfind("head.", 0) != 0) continue;
    p.value = random_values(p.numel(), seed, "gc.perturb." + p.name);
    for (double& x : p.value) x *= 0.5;
  }
}

// One module's finite-difference sweep against the analytic gradients the
// loss closure left in the store.
ModuleGradCheck probe_module(const std::string& name, ParamStore& ps,
                             const std::function<double()>& loss,
                             const GradCheckOptions& opts) {
  ModuleGradCheck result;
  result.module = name;

  ps.zero_grad();  // a shared store may carry another module's gradients
  loss();
  std::vector<std::vector<double>> analytic(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    analytic[i] = ps[i].has_grad ? ps[i].grad
                                 : std::vector<double>(ps[i].numel(), 0.0);

  if (opts.corrupt_gradients) {
    // negative control: a uniformly wrong gradient rule must be noticed on
    // whichever entries the sweep happens to probe
    for (std::vector<double>& g : analytic)
      for (double& x : g) x *= 1.5;
  }

  SplitMix64 rng = seeded_stream(opts.seed, "gradcheck." + name);
  const double h = opts.step;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter& p = ps[i];
    const std::size_t n = p.numel();
    std::vector<std::size_t> picks(n);
    for (std::size_t e = 0; e < n; ++e) picks[e] = e;
    if (n > opts.per_tensor) {
      // partial shuffle keeps the probed entries distinct
      for (std::size_t e = 0; e < opts.per_tensor; ++e)
        std::swap(picks[e], picks[e + rng.below(n - e)]);
      picks.resize(opts.per_tensor);
    }
    for (std::size_t e : picks) {
      const double keep = p.value[e];
      p.value[e] = keep + h;
      const double up = loss();
      p.value[e] = keep - h;
      const double dn = loss();
      p.value[e] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = analytic[i][e];
      const double rel =
          std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an));
      if (rel > result.max_rel) {
        result.max_rel = rel;
        result.worst_param = p.name;
      }
      ++result.entries;
    }
  }
  result.pass = result.max_rel < opts.threshold;
  return result;
}

double run_sum_squares(Tape& tape, Tensor y) {
  Tensor l = sum_all(mul(y, y));
  tape.backward(l);
  return l.item();
}

}  // namespace

bool GradCheckReport::all_pass() const {
  for (const ModuleGradCheck& m : modules)
    if (!m.pass) return false;
  return !modules.empty();
}

GradCheckReport run_grad_check(const GradCheckOptions& opts) {
  GradCheckReport report;
  report.threshold = opts.threshold;
  const std::uint64_t seed = opts.seed;

  {
    ParamStore ps;
    BlockParamRefs block = make_block_params(ps, "blk", 8, 16, seed);
    const auto x = random_values(3 * 8, seed, "gc.block.x");
    auto loss = [&] {
      Tape tape;
      Tensor y = encoder_block(tape, tape.constant({3, 8}, x), block, 2, 1e-5);
      return run_sum_squares(tape, y);
    };
    report.modules.push_back(probe_module("encoder_block", ps, loss, opts));
  }
  {
    ParamStore ps;
    EncoderConfig ec;
    ec.vocab = 16;
    ec.width = 8;
    ec.heads = 2;
    ec.ff_hidden = 16;
    ec.max_text = 6;
    Encoders enc(ps, ec, seed);
    const std::vector<int> toks{1, 5, 3, 2};
    const std::vector<int> src{7, 8};
    auto loss = [&] {
      Tape tape;
      Tensor a = enc.encode_text(tape, toks, TextRole::Text);
      Tensor b = enc.encode_text(tape, src, TextRole::Source);
      const Tensor parts[] = {a, b};
      return run_sum_squares(tape, concat_rows(parts));
    };
    report.modules.push_back(probe_module("text_encoder", ps, loss, opts));
  }
  {
    ParamStore ps;
    EncoderConfig ec;
    ec.vocab = 16;
    ec.width = 8;
    ec.heads = 2;
    ec.ff_hidden = 16;
    ec.max_text = 6;
    Encoders enc(ps, ec, seed);
    SynthConfig scfg;
    scfg.count = 1;
    auto sample = synth_generate(scfg, seed)[0];
    auto loss = [&] {
      Tape tape;
      return run_sum_squares(tape, enc.encode_image(tape, sample, {}).sequence);
    };
    report.modules.push_back(probe_module("image_encoder", ps, loss, opts));
  }
  {
    ParamStore ps;
    CapParamRefs ab = make_cap_params(ps, "cap.ab", 8, 16, 2, seed);
    CapParamRefs ba = make_cap_params(ps, "cap.ba", 8, 16, 2, seed + 1);
    const auto a = random_values(4 * 8, seed, "gc.cap.a");
    const auto b = random_values(3 * 8, seed, "gc.cap.b");
    auto loss = [&] {
      Tape tape;
      auto [pa, pb] = cap_pair(tape, tape.constant({4, 8}, a),
                               tape.constant({3, 8}, b), ab, ba);
      const Tensor parts[] = {pa, pb};
      return run_sum_squares(tape, concat_rows(parts));
    };
    report.modules.push_back(probe_module("promotion_block", ps, loss, opts));
  }
  {
    ParamStore ps;
    FusionConfig fc;
    fc.width = 8;
    fc.heads = 2;
    fc.ff_hidden = 16;
    fc.layers = 2;
    fc.class_counts = {2, 3, 2, 3};
    GlobalLocal gl(ps, fc, seed);
    perturb_heads(ps, seed);
    const auto tv = random_values(3 * 8, seed, "gc.gl.t");
    const auto iv = random_values(2 * 8, seed, "gc.gl.i");
    auto loss = [&] {
      Tape tape;
      GlState st = gl.gl_stack(tape, tape.constant({3, 8}, tv),
                               tape.constant({2, 8}, iv));
      const Tensor parts[] = {st.h_t, st.h_i, st.g};
      return run_sum_squares(tape, concat_rows(parts));
    };
    report.modules.push_back(probe_module("interaction_global", ps, loss, opts));

    auto loss_ll = [&] {
      Tape tape;
      auto [ht, hi] = gl.local_local_stack(tape, tape.constant({3, 8}, tv),
                                           tape.constant({2, 8}, iv));
      const Tensor parts[] = {ht, hi};
      return run_sum_squares(tape, concat_rows(parts));
    };
    report.modules.push_back(
        probe_module("interaction_pairwise", ps, loss_ll, opts));

    auto loss_heads = [&] {
      Tape tape;
      Tensor ht = tape.constant({3, 8}, tv);
      Tensor hi = tape.constant({2, 8}, iv);
      Tensor g = gl.build_global_context(tape, ht, hi);
      std::vector<std::pair<std::string, Tensor>> parts;
      for (std::size_t t = 0; t < 4; ++t) {
        const Tensor dists[] = {gl.fusion_head(tape, ht, hi, g, t),
                                gl.unimodal_head(tape, ht, t, Modality::Text),
                                gl.unimodal_head(tape, hi, t, Modality::Image)};
        Tensor y = combine_predictions(dists);
        parts.emplace_back("t", sum_all(mul(y, y)));
      }
      Tensor l = total_loss(parts);
      tape.backward(l);
      return l.item();
    };
    report.modules.push_back(
        probe_module("prediction_heads", ps, loss_heads, opts));
  }
  {
    ParamStore ps;
    Parameter& head = ps.create_fan("head", {8, 3}, seed);
    Parameter& head_b = ps.create_const("head.b", {3}, 0.0);
    const auto x = random_values(2 * 8, seed, "gc.ce.x");
    const std::vector<int> labels{1, 2};
    auto loss = [&] {
      Tape tape;
      Tensor scores = softmax_rows(add_rowwise(
          matmul(tape.constant({2, 8}, x), tape.param(head)), tape.param(head_b)));
      Parameter* group[] = {&head, &head_b};
      Tensor l = task_ce_loss(tape, scores, labels, 1, group, 0.01);
      tape.backward(l);
      return l.item();
    };
    report.modules.push_back(probe_module("task_loss", ps, loss, opts));
  }
  {
    ParamStore ps;
    Parameter& pt = ps.create_uniform("pool.t", {4, 8}, 0.8, seed);
    Parameter& pi = ps.create_uniform("pool.i", {4, 8}, 0.8, seed + 1);
    auto loss = [&] {
      Tape tape;
      Tensor a = tape.param(pt);
      Tensor b = tape.param(pi);
      Tensor l = add(dual_semantic_loss(tape, a, b, 0.4, ContrastiveMode::Symmetric),
                     dual_semantic_loss(tape, a, b, 0.4, ContrastiveMode::Literal));
      tape.backward(l);
      return l.item();
    };
    report.modules.push_back(probe_module("contrastive_loss", ps, loss, opts));
  }
  {
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
    cfg.loss.trunk_decay = 1e-3;
    cfg.seed = seed;
    Model model(cfg);
    perturb_heads(model.params(), seed);
    SynthConfig scfg;
    scfg.count = 2;
    const auto batch = synth_generate(scfg, seed + 2);
    auto loss = [&] {
      Tape tape;
      ModelOutput out = model.forward(tape, batch);
      LossParts lp = model.loss(tape, out, batch);
      tape.backward(lp.total);
      return lp.total.item();
    };
    report.modules.push_back(probe_module("full_model", model.params(), loss, opts));
  }
  return report;
}

std::string grad_check_table(const GradCheckReport& report) {
  std::string out = "module                 probes   max rel err  result\n";
  char line[128];
  for (const ModuleGradCheck& m : report.modules) {
    std::snprintf(line, sizeof line, "%-21s  %6zu   %.3e    %s\n",
                  m.module.c_str(), m.entries, m.max_rel,
                  m.pass ? "pass" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "threshold %.1e; overall %s\n",
                report.threshold, report.all_pass() ? "pass" : "FAIL");
  out += line;
  return out;
}

std::string grad_check_json(const GradCheckReport& report) {
  nlohmann::json j;
  j["threshold"] = report.threshold;
  j["pass"] = report.all_pass();
  nlohmann::json mods = nlohmann::json::array();
  for (const ModuleGradCheck& m : report.modules)
    mods.push_back({{"module", m.module},
                    {"entries", m.entries},
                    {"max_rel", m.max_rel},
                    {"worst_param", m.worst_param},
                    {"pass", m.pass}});
  j["modules"] = mods;
  return j.dump(2) + "\n";
}

// ---- ablation sweep ---------------------------------------------------------

std::vector<AblationFlags> standard_ablations() {
  std::vector<AblationFlags> v(5);
  v[1].om = true;
  v[2].up = true;
  v[3].gl = true;
  v[4].dg = true;
  return v;
}

AblationReport run_ablation(const RunConfig& base,
                            std::span<const std::uint64_t> seeds,
                            std::span<const AblationFlags> variants) {
  if (seeds.empty()) throw ContractError("ablation needs at least one seed");
  if (variants.empty()) throw ContractError("ablation needs at least one variant");
  AblationReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  for (const AblationFlags& v : variants)
    report.rows.push_back({v.tag(), {}, {}, {}, 0.0, {}});

  for (std::uint64_t seed : seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.out_dir.clear();
    const RunData data = load_run_data(cfg);
    report.train_count = data.train.size();
    report.test_count = data.test.size();

    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      cfg.drop = variants[vi];
      validate_run_config(cfg);
      Model model(cfg);
      TrainResult tr = train_run(cfg, model, data);
      std::array<double, 4> accs{};
      for (std::size_t t = 0; t < 4; ++t) {
        const TaskMetrics& m = tr.test_report.tasks[t];
        accs[t] = m.accuracy;
        report.rows[vi].accuracy[t] += m.accuracy;
        report.rows[vi].weighted_precision[t] += m.weighted_precision;
        report.rows[vi].weighted_recall[t] += m.weighted_recall;
      }
      report.rows[vi].per_seed.push_back(accs);
    }
  }

  const double ns = static_cast<double>(seeds.size());
  for (AblationRow& row : report.rows) {
    for (std::size_t t = 0; t < 4; ++t) {
      row.accuracy[t] /= ns;
      row.weighted_precision[t] /= ns;
      row.weighted_recall[t] /= ns;
      row.mean_accuracy += row.accuracy[t] / 4.0;
    }
  }
  return report;
}

std::string ablation_table(const AblationReport& report) {
  std::string out =
      "variant  acc:mr   acc:sa   acc:id   acc:od   mean\n";
  char line[128];
  for (const AblationRow& r : report.rows) {
    std::snprintf(line, sizeof line, "%-7s  %.4f   %.4f   %.4f   %.4f   %.4f\n",
                  r.variant.c_str(), r.accuracy[0], r.accuracy[1], r.accuracy[2],
                  r.accuracy[3], r.mean_accuracy);
    out += line;
  }
  std::snprintf(line, sizeof line,
                "%zu seed(s), %zu train / %zu test samples per run\n",
                report.seeds.size(), report.train_count, report.test_count);
  out += line;
  return out;
}

std::string ablation_json(const AblationReport& report) {
  nlohmann::json j;
  j["seeds"] = report.seeds;
  j["train_count"] = report.train_count;
  j["test_count"] = report.test_count;
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationRow& r : report.rows) {
    nlohmann::json row;
    row["variant"] = r.variant;
    for (std::size_t t = 0; t < 4; ++t) {
      row[kTaskNames[t]] = {{"accuracy", r.accuracy[t]},
                            {"weighted_precision", r.weighted_precision[t]},
                            {"weighted_recall", r.weighted_recall[t]}};
    }
    row["mean_accuracy"] = r.mean_accuracy;
    row["per_seed_accuracy"] = r.per_seed;
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

// ---- interaction cost benchmark ---------------------------------------------

std::size_t gl_cross_entries(std::size_t n, std::size_t m, std::size_t c,
                             std::size_t layers) {
  return layers * 2 * c * (n + m);
}

std::size_t gl_self_entries(std::size_t n, std::size_t m, std::size_t c,
                            std::size_t layers) {
  return layers * (n * n + m * m + 2 * c * c);
}

std::size_t ll_cross_entries(std::size_t n, std::size_t m, std::size_t layers) {
  return layers * 2 * n * m;
}

std::size_t ll_self_entries(std::size_t n, std::size_t m, std::size_t layers) {
  return layers * (n * n + m * m);
}

namespace {

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    num += dx * (std::log(y[i]) - my);
    den += dx * dx;
  }
  return num / den;
}

}  // namespace

BenchReport bench_interaction(std::span<const std::size_t> lengths,
                              std::size_t width, std::size_t layers,
                              std::uint64_t seed) {
  if (lengths.size() < 2)
    throw ContractError("benchmark needs at least two lengths");
  BenchReport report;
  report.layers = layers;
  report.width = width;
  report.context_rows = 2;

  ParamStore ps;
  FusionConfig fc;
  fc.width = width;
  fc.heads = 2;
  fc.ff_hidden = 2 * width;
  fc.layers = layers;
  fc.class_counts = {2, 3, 2, 3};
  GlobalLocal gl(ps, fc, seed);

  using clock = std::chrono::steady_clock;
  for (std::size_t n : lengths) {
    BenchPoint point;
    point.length = n;
    const auto tv = random_values(n * width, seed, "bench.t." + std::to_string(n));
    const auto iv = random_values(n * width, seed, "bench.i." + std::to_string(n));

    double best_gl = 0.0, best_ll = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
      {
        Tape tape;
        const auto t0 = clock::now();
        gl.gl_stack(tape, tape.constant({n, width}, tv),
                    tape.constant({n, width}, iv));
        const auto t1 = clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (rep == 0 || ms < best_gl) best_gl = ms;
        point.gl_cross = tape.attn_stats().cross_entries;
        point.gl_self = tape.attn_stats().self_entries;
      }
      {
        Tape tape;
        const auto t0 = clock::now();
        gl.local_local_stack(tape, tape.constant({n, width}, tv),
                             tape.constant({n, width}, iv));
        const auto t1 = clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (rep == 0 || ms < best_ll) best_ll = ms;
        point.ll_cross = tape.attn_stats().cross_entries;
        point.ll_self = tape.attn_stats().self_entries;
      }
    }
    point.gl_ms = best_gl;
    point.ll_ms = best_ll;
    report.points.push_back(point);
  }

  report.counts_match = true;
  std::vector<double> xs, gl_cross, ll_cross, gl_ms, ll_ms;
  for (const BenchPoint& p : report.points) {
    report.counts_match &=
        p.gl_cross == gl_cross_entries(p.length, p.length, 2, layers) &&
        p.gl_self == gl_self_entries(p.length, p.length, 2, layers) &&
        p.ll_cross == ll_cross_entries(p.length, p.length, layers) &&
        p.ll_self == ll_self_entries(p.length, p.length, layers);
    xs.push_back(static_cast<double>(p.length));
    gl_cross.push_back(static_cast<double>(p.gl_cross));
    ll_cross.push_back(static_cast<double>(p.ll_cross));
    gl_ms.push_back(p.gl_ms);
    ll_ms.push_back(p.ll_ms);
  }
  report.gl_cross_slope = loglog_slope(xs, gl_cross);
  report.ll_cross_slope = loglog_slope(xs, ll_cross);
  report.gl_time_slope = loglog_slope(xs, gl_ms);
  report.ll_time_slope = loglog_slope(xs, ll_ms);
  return report;
}

std::string bench_table(const BenchReport& report) {
  std::string out =
      "length   gl cross   gl self     ll cross    ll self     gl ms     ll ms\n";
  char line[160];
  for (const BenchPoint& p : report.points) {
    std::snprintf(line, sizeof line,
                  "%6zu   %8zu   %9zu   %9zu   %9zu   %7.2f   %7.2f\n",
                  p.length, p.gl_cross, p.gl_self, p.ll_cross, p.ll_self,
                  p.gl_ms, p.ll_ms);
    out += line;
  }
  std::snprintf(line, sizeof line,
                "cross-entry slopes: global-local %.3f, local-local %.3f\n",
                report.gl_cross_slope, report.ll_cross_slope);
  out += line;
  std::snprintf(line, sizeof line,
                "wall-time slopes:   global-local %.3f, local-local %.3f\n",
                report.gl_time_slope, report.ll_time_slope);
  out += line;
  out += std::string("counted entries ") +
         (report.counts_match ? "match" : "DO NOT match") + " the closed forms\n";
  return out;
}

std::string bench_json(const BenchReport& report) {
  nlohmann::json j;
  j["layers"] = report.layers;
  j["width"] = report.width;
  j["context_rows"] = report.context_rows;
  nlohmann::json pts = nlohmann::json::array();
  for (const BenchPoint& p : report.points)
    pts.push_back({{"length", p.length},
                   {"gl_cross", p.gl_cross},
                   {"gl_self", p.gl_self},
                   {"ll_cross", p.ll_cross},
                   {"ll_self", p.ll_self},
                   {"gl_ms", p.gl_ms},
                   {"ll_ms", p.ll_ms}});
  j["points"] = pts;
  j["gl_cross_slope"] = report.gl_cross_slope;
  j["ll_cross_slope"] = report.ll_cross_slope;
  j["gl_time_slope"] = report.gl_time_slope;
  j["ll_time_slope"] = report.ll_time_slope;
  j["counts_match"] = report.counts_match;
  return j.dump(2) + "\n";
}

}  // namespace mgmf
