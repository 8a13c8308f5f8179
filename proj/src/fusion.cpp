#include "mgmf/fusion.hpp"

#include "mgmf/data.hpp"

namespace mgmf {

namespace {

void check_task(const FusionConfig& cfg, std::size_t task) {
  if (task >= cfg.class_counts.size())
    throw ContractError("task index " + std::to_string(task) +
                        " out of range");
  if (cfg.class_counts[task] <= 0)
    throw ConfigError("task " + std::to_string(task) +
                      " has no configured class count");
}

}  // namespace

GlobalLocal::GlobalLocal(ParamStore& ps, const FusionConfig& cfg,
                         std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg_.layers == 0)
    throw ConfigError("interaction stack needs at least one layer");
  if (cfg_.width == 0 || cfg_.heads == 0 || cfg_.width % cfg_.heads != 0)
    throw ConfigError("fusion width must be a positive multiple of heads");
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string base = "gl." + std::to_string(l);
    GlLayerRefs refs;
    refs.text_fwd = make_cap_params(ps, base + ".tg.fwd", cfg_.width,
                                    cfg_.ff_hidden, cfg_.heads, seed, cfg_.ln_eps);
    refs.text_rev = cfg_.tie_cap_directions
                        ? refs.text_fwd
                        : make_cap_params(ps, base + ".tg.rev", cfg_.width,
                                          cfg_.ff_hidden, cfg_.heads, seed,
                                          cfg_.ln_eps);
    refs.img_fwd = make_cap_params(ps, base + ".ig.fwd", cfg_.width,
                                   cfg_.ff_hidden, cfg_.heads, seed, cfg_.ln_eps);
    refs.img_rev = cfg_.tie_cap_directions
                       ? refs.img_fwd
                       : make_cap_params(ps, base + ".ig.rev", cfg_.width,
                                         cfg_.ff_hidden, cfg_.heads, seed,
                                         cfg_.ln_eps);
    gl_layers_.push_back(refs);

    const std::string ll = "ll." + std::to_string(l);
    CapParamRefs fwd = make_cap_params(ps, ll + ".fwd", cfg_.width,
                                       cfg_.ff_hidden, cfg_.heads, seed,
                                       cfg_.ln_eps);
    CapParamRefs rev = cfg_.tie_cap_directions
                           ? fwd
                           : make_cap_params(ps, ll + ".rev", cfg_.width,
                                             cfg_.ff_hidden, cfg_.heads, seed,
                                             cfg_.ln_eps);
    ll_layers_.emplace_back(fwd, rev);
  }
  trunk_ = make_attn_params(ps, "fuse.trunk", cfg_.width, seed);
  for (std::size_t t = 0; t < 4; ++t) {
    if (cfg_.class_counts[t] <= 0)
      throw ConfigError("class count for task " + std::string(kTaskNames[t]) +
                        " must be positive");
    const auto c = static_cast<std::size_t>(cfg_.class_counts[t]);
    const std::string name = kTaskNames[t];
    // heads start at zero so every softmax in the mixture begins uniform;
    // a fan-init head can start confidently wrong on a task its modality
    // never observes, and the mixture gradient is too weak to unlearn that
    fused_heads_[t] = {&ps.create_const("head.fused." + name, {cfg_.width, c}, 0.0),
                       &ps.create_const("head.fused." + name + ".b", {c}, 0.0)};
    text_heads_[t] = {&ps.create_const("head.text." + name, {cfg_.width, c}, 0.0),
                      &ps.create_const("head.text." + name + ".b", {c}, 0.0)};
    image_heads_[t] = {&ps.create_const("head.image." + name, {cfg_.width, c}, 0.0),
                       &ps.create_const("head.image." + name + ".b", {c}, 0.0)};
  }
}

Tensor GlobalLocal::build_global_context(Tape& tape, Tensor h_t,
                                         Tensor h_i) const {
  (void)tape;
  if (!h_t.valid() || !h_i.valid() || h_t.rows() == 0 || h_i.rows() == 0)
    throw ContractError("global context needs nonempty sequences");
  const Tensor parts[] = {h_t, h_i};
  if (cfg_.full_concat_context) return concat_rows(parts);
  const Tensor pooled[] = {mean_rows(h_t), mean_rows(h_i)};
  return concat_rows(pooled);
}

GlState GlobalLocal::gl_layer(Tape& tape, const GlState& state,
                              std::size_t layer) const {
  if (layer >= gl_layers_.size())
    throw ContractError("interaction layer " + std::to_string(layer) +
                        " out of range");
  const GlLayerRefs& p = gl_layers_[layer];
  const std::string tag = "gl" + std::to_string(layer);
  auto [h_t, g_t] = cap_pair(tape, state.h_t, state.g, p.text_fwd, p.text_rev,
                             tag + ".tg");
  auto [h_i, g_i] = cap_pair(tape, state.h_i, state.g, p.img_fwd, p.img_rev,
                             tag + ".ig");
  GlState next;
  next.h_t = h_t;
  next.h_i = h_i;
  next.g = scale(add(g_t, g_i), 0.5);
  return next;
}

GlState GlobalLocal::gl_stack(Tape& tape, Tensor h_t, Tensor h_i) const {
  GlState state{h_t, h_i, build_global_context(tape, h_t, h_i)};
  for (std::size_t l = 0; l < cfg_.layers; ++l) state = gl_layer(tape, state, l);
  return state;
}

std::pair<Tensor, Tensor> GlobalLocal::local_local_stack(Tape& tape, Tensor h_t,
                                                         Tensor h_i) const {
  Tensor t = h_t, i = h_i;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    auto [nt, ni] = cap_pair(tape, t, i, ll_layers_[l].first,
                             ll_layers_[l].second, "ll" + std::to_string(l));
    t = nt;
    i = ni;
  }
  return {t, i};
}

Tensor GlobalLocal::fusion_head(Tape& tape, Tensor h_t, Tensor h_i, Tensor g,
                                std::size_t task) const {
  check_task(cfg_, task);
  std::vector<Tensor> parts{h_t, h_i};
  if (g.valid()) parts.push_back(g);
  Tensor cat = concat_rows(parts);
  auto [mixed, maps] =
      multi_head_attention(cat, cat, trunk_.bind(tape), cfg_.heads, "fuse.trunk");
  (void)maps;
  Tensor pooled = mean_rows(mixed);
  Tensor logits = add_rowwise(matmul(pooled, tape.param(*fused_heads_[task].w)),
                              tape.param(*fused_heads_[task].b));
  return softmax_rows(logits);
}

Tensor GlobalLocal::unimodal_head(Tape& tape, Tensor h_x, std::size_t task,
                                  Modality which) const {
  check_task(cfg_, task);
  const auto& heads = which == Modality::Text ? text_heads_ : image_heads_;
  Tensor pooled = mean_rows(h_x);
  Tensor logits = add_rowwise(matmul(pooled, tape.param(*heads[task].w)),
                              tape.param(*heads[task].b));
  return softmax_rows(logits);
}

Tensor combine_predictions(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("combine_predictions: no inputs");
  Tensor sum = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].numel() != sum.numel())
      throw ContractError("combine_predictions: length mismatch, " +
                          std::to_string(parts[i].numel()) + " vs " +
                          std::to_string(sum.numel()));
    sum = add(sum, parts[i]);
  }
  return sum;
}

std::size_t argmax_class(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

}  // namespace mgmf
