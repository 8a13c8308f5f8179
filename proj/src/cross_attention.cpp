#include "mgmf/cross_attention.hpp"

namespace mgmf {

CapParamRefs make_cap_params(ParamStore& ps, const std::string& prefix,
                             std::size_t d, std::size_t hidden, std::size_t heads,
                             std::uint64_t seed, double ln_eps) {
  if (heads == 0 || d % heads != 0)
    throw ConfigError(prefix + ": width " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  CapParamRefs p;
  p.ln1 = make_ln_params(ps, prefix + ".ln1", d);
  p.cross = make_attn_params(ps, prefix + ".cross", d, seed);
  p.ln2 = make_ln_params(ps, prefix + ".ln2", d);
  p.self = make_attn_params(ps, prefix + ".self", d, seed);
  p.ln3 = make_ln_params(ps, prefix + ".ln3", d);
  p.ffn = make_ffn_params(ps, prefix + ".ffn", d, hidden, seed);
  p.heads = heads;
  p.ln_eps = ln_eps;
  return p;
}

Tensor cap_direction(Tape& tape, Tensor h_a, Tensor h_b, const CapParamRefs& p,
                     const std::string& label) {
  if (h_a.cols() != h_b.cols())
    throw ContractError("cap_direction: query width " +
                        std::to_string(h_a.cols()) + " vs context width " +
                        std::to_string(h_b.cols()));
  LayerNormParams ln1 = p.ln1.bind(tape);
  Tensor na = layer_norm(h_a, ln1, p.ln_eps);
  Tensor nb = layer_norm(h_b, ln1, p.ln_eps);
  auto [cross, cross_maps] = multi_head_attention(
      na, nb, p.cross.bind(tape), p.heads, label.empty() ? label : label + ".cross");
  (void)cross_maps;
  Tensor x1 = add(h_a, cross);
  Tensor n2 = layer_norm(x1, p.ln2.bind(tape), p.ln_eps);
  auto [self, self_maps] = multi_head_attention(
      n2, n2, p.self.bind(tape), p.heads, label.empty() ? label : label + ".self");
  (void)self_maps;
  Tensor x2 = add(x1, self);
  Tensor n3 = layer_norm(x2, p.ln3.bind(tape), p.ln_eps);
  Tensor out = add(x2, feed_forward(n3, p.ffn.bind(tape), Activation::Gelu));
  tape.attn_stats().cross_block_calls += 1;
  return out;
}

std::pair<Tensor, Tensor> cap_pair(Tape& tape, Tensor h_a, Tensor h_b,
                                   const CapParamRefs& ab, const CapParamRefs& ba,
                                   const std::string& label) {
  Tensor ea = cap_direction(tape, h_a, h_b, ab,
                            label.empty() ? label : label + ".fwd");
  Tensor eb = cap_direction(tape, h_b, h_a, ba,
                            label.empty() ? label : label + ".rev");
  return {ea, eb};
}

}  // namespace mgmf
