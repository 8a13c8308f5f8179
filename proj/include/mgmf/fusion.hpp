#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgmf/cross_attention.hpp"
#include "mgmf/tensor.hpp"

namespace mgmf {

struct FusionConfig {
  std::size_t width = 16;
  std::size_t heads = 2;
  std::size_t ff_hidden = 32;
  std::size_t layers = 1;  // interaction depth L, must be >= 1
  std::array<int, 4> class_counts{};
  bool full_concat_context = false;  // literal whole-sequence context variant
  bool tie_cap_directions = false;
  double ln_eps = 1e-5;
};

// State carried through the interaction stack: text sequence, image sequence,
// and the global context (two pooled rows, one per modality).
struct GlState {
  Tensor h_t, h_i, g;
};

enum class Modality { Text, Image };

// Interaction stack plus all prediction heads. Parameters for both the
// global-context stack and the pairwise local baseline are registered up
// front so either variant runs from one checkpoint.
class GlobalLocal {
 public:
  GlobalLocal(ParamStore& ps, const FusionConfig& cfg, std::uint64_t seed);

  // [pool(h_t); pool(h_i)], or the literal row concatenation when configured.
  Tensor build_global_context(Tape& tape, Tensor h_t, Tensor h_i) const;

  // One interaction layer: both modalities pair with the same incoming g;
  // the refreshed g is the average of the two promoted contexts.
  GlState gl_layer(Tape& tape, const GlState& state, std::size_t layer) const;

  GlState gl_stack(Tape& tape, Tensor h_t, Tensor h_i) const;

  // Pairwise text<->image interaction with no global context (the
  // quadratic-cost baseline).
  std::pair<Tensor, Tensor> local_local_stack(Tape& tape, Tensor h_t,
                                              Tensor h_i) const;

  // Concatenates the given sequences (g may be an empty handle, which drops
  // it), applies the shared self-attention trunk, mean-pools, then the
  // task head. Returns a [1, classes] distribution.
  Tensor fusion_head(Tape& tape, Tensor h_t, Tensor h_i, Tensor g,
                     std::size_t task) const;

  // Mean-pool then the per-task, per-modality linear head.
  Tensor unimodal_head(Tape& tape, Tensor h_x, std::size_t task,
                       Modality which) const;

  const FusionConfig& config() const { return cfg_; }

 private:
  struct GlLayerRefs {
    CapParamRefs text_fwd, text_rev, img_fwd, img_rev;
  };
  struct HeadRefs {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
  };

  const CapParamRefs& ll_rev(std::size_t layer) const;

  FusionConfig cfg_;
  std::vector<GlLayerRefs> gl_layers_;
  std::vector<std::pair<CapParamRefs, CapParamRefs>> ll_layers_;
  AttnParamRefs trunk_;
  std::array<HeadRefs, 4> fused_heads_;
  std::array<HeadRefs, 4> text_heads_;
  std::array<HeadRefs, 4> image_heads_;
};

// Elementwise sum of per-source score vectors (shape [1, classes] each).
// All parts must agree in length; one part is allowed (unimodal heads off).
Tensor combine_predictions(std::span<const Tensor> parts);

// Highest score wins; ties resolve to the lowest class index.
std::size_t argmax_class(std::span<const double> scores);

}  // namespace mgmf
