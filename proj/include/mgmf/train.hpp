#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mgmf/config.hpp"
#include "mgmf/metrics.hpp"
#include "mgmf/model.hpp"

namespace mgmf {

// Samples resolved from the data block of a run config: two manifests from
// disk, or two disjoint synthetic splits derived from the run seed.
struct RunData {
  std::vector<MemeSample> train, test;
  std::filesystem::path base_dir;  // manifest directory; empty for synthetic
};

RunData load_run_data(const RunConfig& cfg);

struct EvalPoint {
  std::size_t step = 0;
  double mean_accuracy = 0.0;  // over the test split
};

struct TrainResult {
  MetricsReport test_report;   // final test metrics plus the loss curve
  MetricsReport train_report;  // final metrics on the training split
  std::vector<EvalPoint> eval_points;
  double final_loss = 0.0;     // last recorded batch loss; 0 when steps == 0
  std::filesystem::path checkpoint;  // final weights; empty when out_dir is
};

// Full training run: deterministic epoch-shuffled batches, an evaluation at
// step 0, every `eval_every` steps and at the end, and a checkpoint plus
// reports under cfg.out_dir (no disk writes when out_dir is empty).
// steps == 0 stores the initial state and evaluates it, nothing else.
// A non-finite loss, gradient, or parameter aborts with TrainError after
// writing the last finite state to out_dir/last_good.ckpt.
TrainResult train_run(const RunConfig& cfg, Model& model, const RunData& data);
TrainResult train_run(const RunConfig& cfg);

MetricsReport evaluate_model(Model& model, std::span<const MemeSample> data,
                             const std::filesystem::path& base_dir = {});

// Loads a checkpoint into a fresh model built from `cfg` and evaluates it on
// the config's test split. ConfigError when the stored fingerprint does not
// match the config's; the message carries both.
MetricsReport evaluate_checkpoint(const std::filesystem::path& payload,
                                  const RunConfig& cfg);

// Timestamp-free run summary, one JSON object.
std::string train_report_json(const RunConfig& cfg, const TrainResult& result);

}  // namespace mgmf
