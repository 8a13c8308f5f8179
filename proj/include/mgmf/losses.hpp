#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>

#include "mgmf/tensor.hpp"

namespace mgmf {

enum class ContrastiveMode { Symmetric, Literal };

struct LossConfig {
  std::array<double, 4> lambda{1e-4, 1e-4, 1e-4, 1e-4};  // per-task head L2
  double tau = 0.07;
  std::array<bool, 4> task_enabled{true, true, true, true};
  ContrastiveMode mode = ContrastiveMode::Symmetric;
  double trunk_decay = 0.0;  // one global L2 for shared (non-head) parameters
};

// Sum of squared entries over a parameter group, scaled by coeff.
Tensor l2_penalty(Tape& tape, std::span<Parameter* const> params, double coeff);

// Mean of -log(p[label]) over the batch, where p = scores/sources (combined
// scores sum to the number of prediction sources), plus coeff * ||theta||^2
// over the task's own head parameters.
Tensor task_ce_loss(Tape& tape, Tensor scores, std::span<const int> labels,
                    std::size_t sources, std::span<Parameter* const> head_params,
                    double lambda);

// Contrastive alignment of pooled text/image rows (cosine similarities over
// 1/tau). Symmetric mode averages the two InfoNCE directions with cross
// pairs as negatives; literal mode uses the paired-similarity denominator
// with 2N-1 terms.
Tensor dual_semantic_loss(Tape& tape, Tensor h_t, Tensor h_i, double tau,
                          ContrastiveMode mode);

// Unweighted sum; a non-finite component is a TrainError naming it.
Tensor total_loss(std::span<const std::pair<std::string, Tensor>> parts);

}  // namespace mgmf
