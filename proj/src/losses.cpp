#include "mgmf/losses.hpp"

#include <cmath>
#include <vector>

namespace mgmf {

Tensor l2_penalty(Tape& tape, std::span<Parameter* const> params, double coeff) {
  Tensor sum;
  for (Parameter* p : params) {
    Tensor leaf = tape.param(*p);
    Tensor sq = sum_all(mul(leaf, leaf));
    sum = sum.valid() ? add(sum, sq) : sq;
  }
  if (!sum.valid()) throw ContractError("l2_penalty over an empty group");
  return scale(sum, coeff);
}

Tensor task_ce_loss(Tape& tape, Tensor scores, std::span<const int> labels,
                    std::size_t sources, std::span<Parameter* const> head_params,
                    double lambda) {
  if (scores.rows() != labels.size())
    throw ContractError("task_ce_loss: " + std::to_string(scores.rows()) +
                        " score rows vs " + std::to_string(labels.size()) +
                        " labels");
  if (sources == 0) throw ContractError("task_ce_loss: zero sources");
  if (lambda < 0) throw ConfigError("task L2 coefficient must be >= 0");
  const std::size_t classes = scores.cols();
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  picks.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw ContractError("task_ce_loss: label " + std::to_string(labels[i]) +
                          " outside " + std::to_string(classes) + " classes");
    picks.emplace_back(i, static_cast<std::size_t>(labels[i]));
  }
  Tensor probs = scale(scores, 1.0 / static_cast<double>(sources));
  Tensor ce = scale(mean_all(log_elem(select_entries(probs, picks))), -1.0);
  if (lambda == 0.0 || head_params.empty()) return ce;
  return add(ce, l2_penalty(tape, head_params, lambda));
}

Tensor dual_semantic_loss(Tape& tape, Tensor h_t, Tensor h_i, double tau,
                          ContrastiveMode mode) {
  (void)tape;
  if (tau <= 0) throw ConfigError("contrastive temperature must be positive");
  const std::size_t n = h_t.rows();
  if (n < 2)
    throw ContractError("dual_semantic_loss needs a batch of at least 2, got " +
                        std::to_string(n));
  if (h_i.rows() != n || h_i.cols() != h_t.cols())
    throw ContractError("dual_semantic_loss: mismatched batch shapes");
  Tensor tn = l2_normalize_rows(h_t);
  Tensor in = l2_normalize_rows(h_i);

  std::vector<std::pair<std::size_t, std::size_t>> diag;
  diag.reserve(n);
  for (std::size_t i = 0; i < n; ++i) diag.emplace_back(i, i);

  if (mode == ContrastiveMode::Literal) {
    // each pair's own similarity fills the denominator: 2N copies minus the
    // anchor's one, so all-equal similarities give ln(2N-1)
    Tensor s = select_entries(matmul_nt(tn, in), diag);  // [n,1]
    Tensor e = exp_elem(scale(s, 1.0 / tau));
    Tensor denom = sub(scale(broadcast_rows(sum_all(e), n), 2.0), e);
    Tensor per = sub(log_elem(denom), scale(s, 1.0 / tau));
    return mean_all(per);
  }

  Tensor s_ti = scale(matmul_nt(tn, in), 1.0 / tau);  // rows: text anchors
  Tensor s_it = scale(matmul_nt(in, tn), 1.0 / tau);  // rows: image anchors
  Tensor d1 = scale(mean_all(log_elem(select_entries(softmax_rows(s_ti), diag))), -1.0);
  Tensor d2 = scale(mean_all(log_elem(select_entries(softmax_rows(s_it), diag))), -1.0);
  return scale(add(d1, d2), 0.5);
}

Tensor total_loss(std::span<const std::pair<std::string, Tensor>> parts) {
  if (parts.empty()) throw ContractError("total_loss with no components");
  Tensor sum;
  for (const auto& [name, part] : parts) {
    if (!part.valid() || part.numel() != 1)
      throw ContractError("loss component " + name + " is not a scalar");
    if (!std::isfinite(part.item()))
      throw TrainError("loss component " + name + " is not finite");
    sum = sum.valid() ? add(sum, part) : part;
  }
  return sum;
}

}  // namespace mgmf
