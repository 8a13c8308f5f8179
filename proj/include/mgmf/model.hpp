#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgmf/config.hpp"
#include "mgmf/encoders.hpp"
#include "mgmf/fusion.hpp"
#include "mgmf/losses.hpp"

namespace mgmf {

// One batch forward pass. `scores[t]` stacks the combined per-sample score
// rows for task t; each row is the elementwise sum of `sources` probability
// distributions (fused head plus the two unimodal heads unless those are
// ablated), so it sums to `sources`, not 1.
struct ModelOutput {
  std::array<Tensor, 4> scores;
  std::size_t sources = 0;
  Tensor pooled_t, pooled_i;  // [batch, d] alignment vectors
};

struct LossParts {
  Tensor total;
  std::vector<std::pair<std::string, Tensor>> parts;
};

// The whole trainable system: encoders, interaction stack, heads. Every
// parameter is registered at construction regardless of the ablation flags,
// so all ablations of one config share init and checkpoint layout.
class Model {
 public:
  explicit Model(const RunConfig& cfg);

  ModelOutput forward(Tape& tape, std::span<const MemeSample> batch,
                      const std::filesystem::path& base_dir = {}) const;

  LossParts loss(Tape& tape, const ModelOutput& out,
                 std::span<const MemeSample> batch) const;

  // Argmax of the combined scores, per task, one entry per batch row.
  std::array<std::vector<int>, 4> predict(const ModelOutput& out) const;

  ParamStore& params() { return ps_; }
  const RunConfig& config() const { return cfg_; }
  const Encoders& encoders() const { return enc_; }
  const GlobalLocal& fusion() const { return gl_; }

 private:
  Tensor encode_text_side(Tape& tape, const MemeSample& s) const;
  std::vector<Parameter*> head_group(std::size_t task) const;
  std::vector<Parameter*> prefix_group(const std::string& prefix) const;

  RunConfig cfg_;
  ParamStore ps_;
  Encoders enc_;
  GlobalLocal gl_;
};

}  // namespace mgmf
