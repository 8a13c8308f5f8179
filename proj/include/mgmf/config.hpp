#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "mgmf/data.hpp"
#include "mgmf/encoders.hpp"
#include "mgmf/losses.hpp"
#include "mgmf/tensor.hpp"

namespace mgmf {

// Data source for a run: two manifests on disk, or the generator.
struct DataConfig {
  bool use_synthetic = true;
  std::string train_manifest;
  std::string test_manifest;
  SynthConfig synth;  // class_counts mirrored from the run config
  std::size_t synth_train = 64;
  std::size_t synth_test = 32;
};

struct AblationFlags {
  bool om = false;  // drop region features
  bool up = false;  // drop unimodal predictions
  bool gl = false;  // pairwise local interaction instead of global context
  bool dg = false;  // drop the contrastive term

  std::string tag() const;  // "full" or "wo_om" etc for report rows
};

struct RunConfig {
  EncoderConfig enc;
  std::size_t layers = 1;
  std::array<int, 4> class_counts{};  // mandatory in config files
  bool interaction_global = true;
  bool concat_domains = true;        // append source/target rows to the text side
  bool tie_cap_directions = false;
  bool full_concat_context = false;
  bool unimodal_post_fusion = false;  // feed heads the post-stack sequences
  bool contrast_pre_stack = false;    // contrast encoder outputs instead
  OptimizerConfig opt;
  std::size_t steps = 200;
  std::size_t batch = 8;
  std::uint64_t seed = 7;
  std::size_t eval_every = 50;
  LossConfig loss;
  AblationFlags drop;
  DataConfig data;
  std::string out_dir;
};

// Strict parse: unknown keys anywhere are ConfigErrors, class counts are
// mandatory, and all RunConfig invariants are enforced.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void validate_run_config(const RunConfig& cfg);

// Canonical architecture summary stored in checkpoints; two configs whose
// parameter spaces match produce equal fingerprints.
std::string config_fingerprint(const RunConfig& cfg);

std::string run_config_to_text(const RunConfig& cfg);

}  // namespace mgmf
