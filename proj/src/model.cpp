#include "mgmf/model.hpp"

namespace mgmf {

namespace {

FusionConfig fusion_config(const RunConfig& cfg) {
  FusionConfig f;
  f.width = cfg.enc.width;
  f.heads = cfg.enc.heads;
  f.ff_hidden = cfg.enc.ff_hidden;
  f.layers = cfg.layers;
  f.class_counts = cfg.class_counts;
  f.full_concat_context = cfg.full_concat_context;
  f.tie_cap_directions = cfg.tie_cap_directions;
  f.ln_eps = cfg.enc.ln_eps;
  return f;
}

const RunConfig& validated(const RunConfig& cfg) {
  validate_run_config(cfg);
  return cfg;
}

}  // namespace

Model::Model(const RunConfig& cfg)
    : cfg_(validated(cfg)),
      enc_(ps_, cfg_.enc, cfg_.seed),
      gl_(ps_, fusion_config(cfg_), cfg_.seed) {}

Tensor Model::encode_text_side(Tape& tape, const MemeSample& s) const {
  std::vector<Tensor> parts;
  parts.push_back(enc_.encode_text(tape, s.text_tokens, TextRole::Text, s.id));
  if (cfg_.concat_domains) {
    if (!s.source_tokens.empty())
      parts.push_back(
          enc_.encode_text(tape, s.source_tokens, TextRole::Source, s.id));
    if (!s.target_tokens.empty())
      parts.push_back(
          enc_.encode_text(tape, s.target_tokens, TextRole::Target, s.id));
  }
  if (parts.size() == 1) return parts[0];
  return concat_rows(parts);
}

ModelOutput Model::forward(Tape& tape, std::span<const MemeSample> batch,
                           const std::filesystem::path& base_dir) const {
  if (batch.empty()) throw ContractError("forward needs a nonempty batch");
  const bool global = cfg_.interaction_global && !cfg_.drop.gl;

  std::array<std::vector<Tensor>, 4> score_rows;
  std::vector<Tensor> pooled_t_rows, pooled_i_rows;
  for (const MemeSample& s : batch) {
    Tensor h_t = encode_text_side(tape, s);
    Tensor h_i =
        enc_.encode_image(tape, s, base_dir, /*include_regions=*/!cfg_.drop.om)
            .sequence;

    Tensor out_t, out_i, g;
    if (global) {
      GlState st = gl_.gl_stack(tape, h_t, h_i);
      out_t = st.h_t;
      out_i = st.h_i;
      g = st.g;
    } else {
      std::tie(out_t, out_i) = gl_.local_local_stack(tape, h_t, h_i);
    }

    const Tensor uni_t = cfg_.unimodal_post_fusion ? out_t : h_t;
    const Tensor uni_i = cfg_.unimodal_post_fusion ? out_i : h_i;
    for (std::size_t t = 0; t < 4; ++t) {
      Tensor fused = gl_.fusion_head(tape, out_t, out_i, g, t);
      if (cfg_.drop.up) {
        score_rows[t].push_back(fused);
      } else {
        std::array<Tensor, 3> dists{
            fused, gl_.unimodal_head(tape, uni_t, t, Modality::Text),
            gl_.unimodal_head(tape, uni_i, t, Modality::Image)};
        score_rows[t].push_back(combine_predictions(dists));
      }
    }

    pooled_t_rows.push_back(mean_rows(cfg_.contrast_pre_stack ? h_t : out_t));
    pooled_i_rows.push_back(mean_rows(cfg_.contrast_pre_stack ? h_i : out_i));
  }

  ModelOutput out;
  out.sources = cfg_.drop.up ? 1 : 3;
  for (std::size_t t = 0; t < 4; ++t)
    out.scores[t] = score_rows[t].size() == 1 ? score_rows[t][0]
                                              : concat_rows(score_rows[t]);
  out.pooled_t = pooled_t_rows.size() == 1 ? pooled_t_rows[0]
                                           : concat_rows(pooled_t_rows);
  out.pooled_i = pooled_i_rows.size() == 1 ? pooled_i_rows[0]
                                           : concat_rows(pooled_i_rows);
  return out;
}

std::vector<Parameter*> Model::head_group(std::size_t task) const {
  std::vector<std::string> names{std::string("head.fused.") + kTaskNames[task]};
  if (!cfg_.drop.up) {
    names.push_back(std::string("head.text.") + kTaskNames[task]);
    names.push_back(std::string("head.image.") + kTaskNames[task]);
  }
  std::vector<Parameter*> group;
  ParamStore& ps = const_cast<ParamStore&>(ps_);
  for (const std::string& n : names) {
    group.push_back(&ps.at(n));
    group.push_back(&ps.at(n + ".b"));
  }
  return group;
}

std::vector<Parameter*> Model::prefix_group(const std::string& prefix) const {
  std::vector<Parameter*> group;
  ParamStore& ps = const_cast<ParamStore&>(ps_);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name.rfind(prefix, 0) == 0) group.push_back(&ps[i]);
  return group;
}

LossParts Model::loss(Tape& tape, const ModelOutput& out,
                      std::span<const MemeSample> batch) const {
  if (batch.empty()) throw ContractError("loss needs a nonempty batch");
  LossParts lp;
  for (std::size_t t = 0; t < 4; ++t) {
    if (!cfg_.loss.task_enabled[t]) continue;
    std::vector<int> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i].labels[t];
    Tensor ce = task_ce_loss(tape, out.scores[t], labels, out.sources,
                             head_group(t), cfg_.loss.lambda[t]);
    lp.parts.emplace_back(std::string("ce.") + kTaskNames[t], ce);
  }
  if (!cfg_.drop.dg)
    lp.parts.emplace_back("dg", dual_semantic_loss(tape, out.pooled_t,
                                                   out.pooled_i, cfg_.loss.tau,
                                                   cfg_.loss.mode));
  if (cfg_.loss.trunk_decay > 0)
    lp.parts.emplace_back(
        "decay", l2_penalty(tape, prefix_group("fuse.trunk"),
                            cfg_.loss.trunk_decay));
  lp.total = total_loss(lp.parts);
  return lp;
}

std::array<std::vector<int>, 4> Model::predict(const ModelOutput& out) const {
  std::array<std::vector<int>, 4> preds;
  for (std::size_t t = 0; t < 4; ++t) {
    const Tensor& sc = out.scores[t];
    if (!sc.valid()) throw ContractError("predict: scores missing for a task");
    const std::size_t cols = sc.cols();
    std::span<const double> v = sc.values();
    preds[t].resize(sc.rows());
    for (std::size_t r = 0; r < sc.rows(); ++r)
      preds[t][r] =
          static_cast<int>(argmax_class(v.subspan(r * cols, cols)));
  }
  return preds;
}

}  // namespace mgmf
