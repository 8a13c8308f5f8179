#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mgmf/common.hpp"
#include "mgmf/config.hpp"
#include "mgmf/data.hpp"
#include "mgmf/harness.hpp"
#include "mgmf/train.hpp"

namespace fs = std::filesystem;
using namespace mgmf;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::vector<std::uint64_t> parse_u64_list(const std::string& text) {
  std::vector<std::uint64_t> values;
  std::size_t at = 0;
  while (at < text.size()) {
    std::size_t comma = text.find(',', at);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(at, comma - at);
    try {
      std::size_t used = 0;
      values.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated number list, got '" + text + "'");
    }
    at = comma + 1;
  }
  if (values.empty())
    throw ConfigError("expected a comma-separated number list, got '" + text + "'");
  return values;
}

nlohmann::json task_metrics_json(const TaskMetrics& m) {
  return {{"accuracy", m.accuracy},
          {"weighted_precision", m.weighted_precision},
          {"weighted_recall", m.weighted_recall},
          {"support", m.total},
          {"warnings", m.warnings}};
}

struct CommonArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* cmd, bool config_required) {
    auto* c = cmd->add_option("--config", config, "run config file (JSON)");
    if (config_required) c->required();
    seed_opt = cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--out", out, "override the output directory");
  }

  RunConfig load() const {
    RunConfig cfg = load_run_config(config);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (!out.empty()) cfg.out_dir = out;
    return cfg;
  }
};

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = args.load();
  const TrainResult result = train_run(cfg);
  std::printf("%s", metrics_table(result.test_report).c_str());
  std::printf("final loss %.6f after %zu steps\n", result.final_loss, cfg.steps);
  if (!result.checkpoint.empty()) {
    std::printf("checkpoint %s\n", result.checkpoint.string().c_str());
    std::printf("report     %s\n",
                (fs::path(cfg.out_dir) / "report.json").string().c_str());
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint) {
  const RunConfig cfg = args.load();
  const MetricsReport report = evaluate_checkpoint(checkpoint, cfg);
  std::printf("%s", metrics_table(report).c_str());
  if (!cfg.out_dir.empty()) {
    nlohmann::json j;
    j["checkpoint"] = checkpoint;
    j["fingerprint"] = config_fingerprint(cfg);
    for (std::size_t t = 0; t < 4; ++t)
      j["tasks"][kTaskNames[t]] = task_metrics_json(report.tasks[t]);
    j["mean_accuracy"] = report.mean_accuracy();
    write_text(fs::path(cfg.out_dir) / "eval_report.json", j.dump(2) + "\n");
    write_text(fs::path(cfg.out_dir) / "eval_report.txt", metrics_table(report));
    std::printf("report     %s\n",
                (fs::path(cfg.out_dir) / "eval_report.json").string().c_str());
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::vector<std::string>& drops,
               const std::string& seeds_text) {
  RunConfig cfg = args.load();

  std::vector<AblationFlags> variants;
  if (drops.empty()) {
    variants = standard_ablations();
  } else {
    variants.push_back({});  // the full model anchors every comparison
    for (const std::string& d : drops) {
      AblationFlags f;
      if (d == "om") f.om = true;
      else if (d == "up") f.up = true;
      else if (d == "gl") f.gl = true;
      else if (d == "dg") f.dg = true;
      else throw ConfigError("--drop expects om|up|gl|dg, got '" + d + "'");
      bool seen = false;
      for (const AblationFlags& v : variants) seen = seen || v.tag() == f.tag();
      if (!seen) variants.push_back(f);
    }
  }

  std::vector<std::uint64_t> seeds =
      seeds_text.empty() ? std::vector<std::uint64_t>{cfg.seed}
                         : parse_u64_list(seeds_text);

  const AblationReport report = run_ablation(cfg, seeds, variants);
  std::printf("%s", ablation_table(report).c_str());
  if (!cfg.out_dir.empty()) {
    write_text(fs::path(cfg.out_dir) / "ablation.json", ablation_json(report));
    write_text(fs::path(cfg.out_dir) / "ablation.txt", ablation_table(report));
    std::printf("report %s\n",
                (fs::path(cfg.out_dir) / "ablation.json").string().c_str());
  }
  return 0;
}

int cmd_gradcheck(const CommonArgs& args, double threshold) {
  GradCheckOptions opts;
  if (args.seed_opt->count() > 0) opts.seed = args.seed;
  opts.threshold = threshold;
  const GradCheckReport report = run_grad_check(opts);
  std::printf("%s", grad_check_table(report).c_str());
  if (!args.out.empty()) {
    write_text(fs::path(args.out) / "gradcheck.json", grad_check_json(report));
    write_text(fs::path(args.out) / "gradcheck.txt", grad_check_table(report));
  }
  int failed = 0;
  for (const ModuleGradCheck& m : report.modules) failed += m.pass ? 0 : 1;
  return failed;
}

int cmd_bench(const CommonArgs& args, const std::string& lengths_text,
              std::size_t width, std::size_t layers) {
  std::vector<std::size_t> lengths;
  for (std::uint64_t v : parse_u64_list(lengths_text))
    lengths.push_back(static_cast<std::size_t>(v));
  const std::uint64_t seed = args.seed_opt->count() > 0 ? args.seed : 7;
  const BenchReport report = bench_interaction(lengths, width, layers, seed);
  std::printf("%s", bench_table(report).c_str());
  if (!args.out.empty()) {
    write_text(fs::path(args.out) / "bench.json", bench_json(report));
    write_text(fs::path(args.out) / "bench.txt", bench_table(report));
  }
  return 0;
}

int cmd_synth_gen(const CommonArgs& args, std::size_t train_count,
                  std::size_t test_count, bool weak) {
  SynthConfig scfg;
  std::uint64_t seed = 7;
  if (!args.config.empty()) {
    const RunConfig cfg = args.load();
    scfg = cfg.data.synth;
    train_count = train_count ? train_count : cfg.data.synth_train;
    test_count = test_count ? test_count : cfg.data.synth_test;
    seed = cfg.seed;
  }
  if (args.seed_opt->count() > 0) seed = args.seed;
  if (weak) scfg.weak_correlation = true;
  if (train_count == 0) train_count = 64;
  if (test_count == 0) test_count = 32;
  if (args.out.empty()) throw ConfigError("synth-gen needs --out");

  // Seeded exactly like a synthetic-data training run, so generating to disk
  // and pointing manifests at the files reproduces the in-process splits.
  scfg.count = train_count;
  const auto train = synth_generate(scfg, seeded_stream(seed, "data.train").next());
  scfg.count = test_count;
  const auto test = synth_generate(scfg, seeded_stream(seed, "data.test").next());

  fs::create_directories(args.out);
  const fs::path train_path = fs::path(args.out) / "train.manifest";
  const fs::path test_path = fs::path(args.out) / "test.manifest";
  write_manifest(train_path, train);
  write_manifest(test_path, test);
  std::printf("wrote %zu samples to %s\n", train.size(), train_path.string().c_str());
  std::printf("wrote %zu samples to %s\n", test.size(), test_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal meme model: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
  train_args.attach(train_cmd, true);

  CommonArgs eval_args;
  std::string eval_checkpoint;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on the config's test split");
  eval_args.attach(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint payload file")
      ->required();

  CommonArgs ablate_args;
  std::vector<std::string> ablate_drops;
  std::string ablate_seeds;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "compare the full model against ablations");
  ablate_args.attach(ablate_cmd, true);
  ablate_cmd->add_option("--drop", ablate_drops,
                         "variant to include: om|up|gl|dg (repeatable; "
                         "default all four)");
  ablate_cmd->add_option("--seeds", ablate_seeds,
                         "comma-separated seed list (default: the run seed)");

  CommonArgs grad_args;
  double grad_threshold = GradCheckOptions{}.threshold;
  CLI::App* grad_cmd = app.add_subcommand(
      "gradcheck", "finite-difference gradient audit of every module");
  grad_args.attach(grad_cmd, false);
  grad_cmd->add_option("--threshold", grad_threshold, "max relative error allowed");

  CommonArgs bench_args;
  std::string bench_lengths = "64,128,256,512";
  std::size_t bench_width = 16, bench_layers = 1;
  CLI::App* bench_cmd = app.add_subcommand(
      "bench", "interaction cost sweep: global context vs pairwise");
  bench_args.attach(bench_cmd, false);
  bench_cmd->add_option("--lengths", bench_lengths, "comma-separated sequence lengths");
  bench_cmd->add_option("--width", bench_width, "model width");
  bench_cmd->add_option("--layers", bench_layers, "interaction layers");

  CommonArgs synth_args;
  std::size_t synth_train = 0, synth_test = 0;
  bool synth_weak = false;
  CLI::App* synth_cmd = app.add_subcommand(
      "synth-gen", "write synthetic train/test manifests to disk");
  synth_args.attach(synth_cmd, false);
  synth_cmd->add_option("--train", synth_train, "training sample count (default 64)");
  synth_cmd->add_option("--test", synth_test, "test sample count (default 32)");
  synth_cmd->add_flag("--weak", synth_weak, "weak cross-modal correlation mode");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_eval(eval_args, eval_checkpoint);
    if (*ablate_cmd) return cmd_ablate(ablate_args, ablate_drops, ablate_seeds);
    if (*grad_cmd) return cmd_gradcheck(grad_args, grad_threshold);
    if (*bench_cmd)
      return cmd_bench(bench_args, bench_lengths, bench_width, bench_layers);
    if (*synth_cmd) return cmd_synth_gen(synth_args, synth_train, synth_test, synth_weak);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
