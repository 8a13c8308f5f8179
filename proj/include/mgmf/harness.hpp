#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mgmf/config.hpp"
#include "mgmf/fusion.hpp"
#include "mgmf/metrics.hpp"
#include "mgmf/train.hpp"

namespace mgmf {

// ---- gradient check ---------------------------------------------------------

struct GradCheckOptions {
  std::uint64_t seed = 7;
  double threshold = 1e-3;
  double step = 1e-4;             // central differences
  std::size_t per_tensor = 32;    // sampled probes for large tensors
  bool corrupt_gradients = false; // negative control: must produce a failure
};

struct ModuleGradCheck {
  std::string module;
  std::size_t entries = 0;   // finite-difference probes executed
  double max_rel = 0.0;
  std::string worst_param;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<ModuleGradCheck> modules;
  double threshold = 0.0;

  bool all_pass() const;
};

// Probes every module at tiny dimensions (width <= 16, at most two samples):
// analytic gradients from one backward pass against central finite
// differences, every entry for small tensors and >= per_tensor sampled
// entries for large ones. Relative error uses |fd - an| / max(1e-6, |fd|+|an|)
// so identically-zero gradients compare clean.
GradCheckReport run_grad_check(const GradCheckOptions& opts = {});

std::string grad_check_table(const GradCheckReport& report);
std::string grad_check_json(const GradCheckReport& report);

// ---- ablation sweep ---------------------------------------------------------

struct AblationRow {
  std::string variant;  // "full", "wo_om", "wo_up", "wo_gl", "wo_dg"
  std::array<double, 4> accuracy{};  // mean over seeds, per task
  std::array<double, 4> weighted_precision{};
  std::array<double, 4> weighted_recall{};
  double mean_accuracy = 0.0;
  std::vector<std::array<double, 4>> per_seed;  // accuracy rows, seed order
};

struct AblationReport {
  std::vector<AblationRow> rows;  // full model first
  std::vector<std::uint64_t> seeds;
  std::size_t train_count = 0, test_count = 0;
};

// Trains the full model plus each requested ablation under identical seeds
// and data, averaging test metrics over the seed list. The base config's own
// drop flags are ignored; variants supply them.
AblationReport run_ablation(const RunConfig& base,
                            std::span<const std::uint64_t> seeds,
                            std::span<const AblationFlags> variants);

// All five standard variants.
std::vector<AblationFlags> standard_ablations();

std::string ablation_table(const AblationReport& report);
std::string ablation_json(const AblationReport& report);

// ---- interaction cost benchmark ---------------------------------------------

// Closed-form per-stack attention-entry counts for text length n, image
// length m, pooled context rows c, over `layers` interaction layers. Each
// pairing runs one promotion block per direction: cross scores are
// n_q * n_kv and the self stage adds n_q^2.
std::size_t gl_cross_entries(std::size_t n, std::size_t m, std::size_t c,
                             std::size_t layers);
std::size_t gl_self_entries(std::size_t n, std::size_t m, std::size_t c,
                            std::size_t layers);
std::size_t ll_cross_entries(std::size_t n, std::size_t m, std::size_t layers);
std::size_t ll_self_entries(std::size_t n, std::size_t m, std::size_t layers);

struct BenchPoint {
  std::size_t length = 0;  // both modality sequences use this length
  std::size_t gl_cross = 0, gl_self = 0;  // counted at runtime
  std::size_t ll_cross = 0, ll_self = 0;
  double gl_ms = 0.0, ll_ms = 0.0;  // best-of-three forward wall time
};

struct BenchReport {
  std::vector<BenchPoint> points;
  std::size_t layers = 0, width = 0, context_rows = 0;
  // log-log least-squares slopes of the cross-attention entry counts; the
  // self-attention stages are common to both stacks and excluded by design.
  double gl_cross_slope = 0.0, ll_cross_slope = 0.0;
  double gl_time_slope = 0.0, ll_time_slope = 0.0;  // informational
  bool counts_match = false;  // every point equals its closed form
};

// Forward-only sweep of gl_stack vs local_local_stack over the given
// sequence lengths with the pooled two-row context held fixed.
BenchReport bench_interaction(std::span<const std::size_t> lengths,
                              std::size_t width = 16, std::size_t layers = 1,
                              std::uint64_t seed = 7);

std::string bench_table(const BenchReport& report);
std::string bench_json(const BenchReport& report);

}  // namespace mgmf
