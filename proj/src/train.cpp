#include "mgmf/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mgmf/blob.hpp"

namespace mgmf {

namespace {

DataLimits limits_from(const RunConfig& cfg) {
  DataLimits lim;
  lim.vocab = cfg.enc.vocab;
  lim.max_text = cfg.enc.max_text;
  lim.max_source = cfg.enc.max_text;
  lim.max_target = cfg.enc.max_text;
  lim.class_counts = cfg.class_counts;
  return lim;
}

// Parameters an ablation keeps off the tape have derivative zero.
void fill_missing_grads(ParamStore& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter& p = ps[i];
    if (!p.has_grad) {
      p.grad.assign(p.numel(), 0.0);
      p.has_grad = true;
    }
  }
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Checkpoints narrow to f32, so a parameter beyond that range is already
// lost even while still finite as a double.
bool all_storable(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x) ||
        std::abs(x) > static_cast<double>(std::numeric_limits<float>::max()))
      return false;
  return true;
}

// Epoch-shuffled index stream; reshuffles whenever a pass completes.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, std::uint64_t seed)
      : rng_(seeded_stream(seed, "batch.order")), order_(n) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    shuffle();
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle();
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i)
      std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  SplitMix64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

nlohmann::json task_json(const TaskMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"weighted_precision", m.weighted_precision},
          {"weighted_recall", m.weighted_recall},
          {"support", m.total},
          {"warnings", m.warnings}};
}

}  // namespace

RunData load_run_data(const RunConfig& cfg) {
  RunData data;
  if (cfg.data.use_synthetic) {
    SynthConfig scfg = cfg.data.synth;
    scfg.count = cfg.data.synth_train;
    data.train = synth_generate(scfg, seeded_stream(cfg.seed, "data.train").next());
    scfg.count = cfg.data.synth_test;
    data.test = synth_generate(scfg, seeded_stream(cfg.seed, "data.test").next());
    return data;
  }
  if (cfg.data.train_manifest.empty() || cfg.data.test_manifest.empty())
    throw ConfigError("data: manifest paths missing");
  const DataLimits lim = limits_from(cfg);
  data.train = load_manifest(cfg.data.train_manifest, lim);
  data.test = load_manifest(cfg.data.test_manifest, lim);
  data.base_dir = std::filesystem::path(cfg.data.train_manifest).parent_path();
  return data;
}

MetricsReport evaluate_model(Model& model, std::span<const MemeSample> data,
                             const std::filesystem::path& base_dir) {
  if (data.empty()) throw ContractError("evaluation needs at least one sample");
  constexpr std::size_t kChunk = 16;
  std::array<std::vector<int>, 4> labels, preds;
  for (std::size_t at = 0; at < data.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - at);
    Tape tape;
    ModelOutput out = model.forward(tape, data.subspan(at, n), base_dir);
    auto batch_preds = model.predict(out);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        labels[t].push_back(data[at + i].labels[t]);
        preds[t].push_back(batch_preds[t][i]);
      }
  }
  MetricsReport report;
  for (std::size_t t = 0; t < 4; ++t)
    report.tasks[t] = compute_task_metrics(
        labels[t], preds[t], model.config().class_counts[t]);
  return report;
}

TrainResult train_run(const RunConfig& cfg, Model& model, const RunData& data) {
  if (data.train.empty() || data.test.empty())
    throw ContractError("training needs nonempty train and test splits");
  ParamStore& ps = model.params();
  Optimizer opt(cfg.opt);
  BatchCycler cycler(data.train.size(), cfg.seed);
  const std::string fingerprint = config_fingerprint(cfg);

  const bool writing = !cfg.out_dir.empty();
  std::filesystem::path out_dir(cfg.out_dir);
  if (writing) std::filesystem::create_directories(out_dir);

  std::vector<std::vector<double>> last_good(ps.size());
  auto snapshot = [&] {
    for (std::size_t i = 0; i < ps.size(); ++i) last_good[i] = ps[i].value;
  };
  auto abort_run = [&](std::size_t step, const std::string& what) {
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value = last_good[i];
    std::string note;
    if (writing) {
      const auto path = out_dir / "last_good.ckpt";
      save_checkpoint(path, ps, fingerprint);
      note = "; last finite state written to " + path.string();
    }
    throw TrainError("training step " + std::to_string(step) + ": " + what + note);
  };
  snapshot();

  TrainResult result;
  result.eval_points.push_back(
      {0, evaluate_model(model, data.test, data.base_dir).mean_accuracy()});

  std::vector<MemeSample> batch;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    batch.clear();
    for (std::size_t i = 0; i < cfg.batch; ++i)
      batch.push_back(data.train[cycler.next()]);

    Tape tape;
    double loss_value = 0.0;
    try {
      ModelOutput out = model.forward(tape, batch, data.base_dir);
      LossParts lp = model.loss(tape, out, batch);
      loss_value = lp.total.item();
      tape.backward(lp.total);
    } catch (const TrainError& e) {
      abort_run(step, e.what());
    }
    fill_missing_grads(ps);
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (!all_finite(ps[i].grad))
        abort_run(step, "non-finite gradient in " + ps[i].name);
    opt.step(ps);
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (!all_storable(ps[i].value))
        abort_run(step, "parameter " + ps[i].name + " left the storable range");
    snapshot();

    result.test_report.loss_curve.emplace_back(step, loss_value);
    result.final_loss = loss_value;
    const bool at_eval = cfg.eval_every > 0 && step % cfg.eval_every == 0;
    if (at_eval && step != cfg.steps)
      result.eval_points.push_back(
          {step, evaluate_model(model, data.test, data.base_dir).mean_accuracy()});
  }

  result.test_report.tasks =
      evaluate_model(model, data.test, data.base_dir).tasks;
  result.test_report.steps = cfg.steps;
  result.train_report.tasks =
      evaluate_model(model, data.train, data.base_dir).tasks;
  result.train_report.steps = cfg.steps;
  if (cfg.steps > 0)
    result.eval_points.push_back({cfg.steps, result.test_report.mean_accuracy()});

  if (writing) {
    result.checkpoint = out_dir / "model.ckpt";
    save_checkpoint(result.checkpoint, ps, fingerprint);
    std::ofstream(out_dir / "report.json") << train_report_json(cfg, result);
    std::ofstream(out_dir / "report.txt") << metrics_table(result.test_report);
  }
  return result;
}

TrainResult train_run(const RunConfig& cfg) {
  Model model(cfg);
  return train_run(cfg, model, load_run_data(cfg));
}

MetricsReport evaluate_checkpoint(const std::filesystem::path& payload,
                                  const RunConfig& cfg) {
  const CheckpointInfo info = read_checkpoint_info(payload);
  const std::string want = config_fingerprint(cfg);
  if (info.fingerprint != want)
    throw ConfigError("checkpoint was trained under a different architecture: "
                      "stored " + info.fingerprint + ", config wants " + want);
  Model model(cfg);
  load_checkpoint(payload, model.params());
  RunData data = load_run_data(cfg);
  MetricsReport report = evaluate_model(model, data.test, data.base_dir);
  return report;
}

std::string train_report_json(const RunConfig& cfg, const TrainResult& result) {
  nlohmann::json j;
  j["fingerprint"] = config_fingerprint(cfg);
  j["ablation"] = cfg.drop.tag();
  j["seed"] = cfg.seed;
  j["steps"] = cfg.steps;
  j["final_loss"] = result.final_loss;
  j["loss_curve"] = result.test_report.loss_curve;
  nlohmann::json evals = nlohmann::json::array();
  for (const EvalPoint& p : result.eval_points)
    evals.push_back({{"step", p.step}, {"mean_accuracy", p.mean_accuracy}});
  j["eval"] = evals;
  for (std::size_t t = 0; t < 4; ++t) {
    j["test"][kTaskNames[t]] = task_json(result.test_report.tasks[t]);
    j["train"][kTaskNames[t]] = task_json(result.train_report.tasks[t]);
  }
  j["mean_test_accuracy"] = result.test_report.mean_accuracy();
  j["mean_train_accuracy"] = result.train_report.mean_accuracy();
  return j.dump(2) + "\n";
}

}  // namespace mgmf
