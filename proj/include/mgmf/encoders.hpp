#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "mgmf/blocks.hpp"
#include "mgmf/data.hpp"
#include "mgmf/tensor.hpp"

namespace mgmf {

enum class TextRole { Text, Source, Target };

const char* text_role_name(TextRole role);

struct EncoderConfig {
  std::size_t vocab = 0;
  std::size_t width = 16;  // model dimension d, shared by every stage
  std::size_t heads = 2;
  std::size_t ff_hidden = 32;
  std::size_t max_text = 16;   // per-role token budget; sets the position table
  std::size_t image_side = 8;  // S: whole image and every region resample here
  std::size_t patch_side = 4;  // P, must divide S
  std::size_t channels = 1;
  double ln_eps = 1e-5;
};

// Image-side output: row 0 is the image-level vector, rows 1..m' the region
// vectors, in manifest order. Sequence length is always 1 + regions.
struct ImageRepresentation {
  Tensor sequence;
  std::size_t regions = 0;
};

// Trainable stand-ins for the pretrained text/vision backbones. All three
// text roles share one embedding table and one encoder layer and differ only
// by their position-table offset. Every encode_* call is a pure function of
// (parameters, input.)
class Encoders {
 public:
  Encoders(ParamStore& ps, const EncoderConfig& cfg, std::uint64_t seed);

  // [len, d]; DataError on empty input, oversized input, or id >= vocab,
  // naming `who` when given.
  Tensor encode_text(Tape& tape, std::span<const int> tokens, TextRole role,
                     const std::string& who = {}) const;

  // S x S x C pixels -> [m+1, d] with the class token at row 0.
  Tensor patchify_region(Tape& tape, const ImageGrid& region) const;

  // [m+1, d] -> [1, d], the encoded class-token row.
  Tensor encode_region(Tape& tape, Tensor patch_seq) const;

  // Whole image plus one row per region box; include_regions=false keeps
  // only the image-level row (the object-mining ablation path).
  ImageRepresentation encode_image(Tape& tape, const MemeSample& sample,
                                   const std::filesystem::path& base_dir,
                                   bool include_regions = true) const;

  const EncoderConfig& config() const { return cfg_; }
  std::size_t patches_per_region() const;  // m = (S/P)^2

 private:
  EncoderConfig cfg_;
  Parameter* tok_emb_;    // [vocab, d]
  Parameter* role_pos_;   // [3*max_text, d], one stripe per role
  BlockParamRefs text_block_;
  Parameter* patch_proj_;  // [P*P*C, d]
  Parameter* patch_bias_;  // [d]
  Parameter* class_tok_;   // [1, d]
  Parameter* patch_pos_;   // [m+1, d]
  BlockParamRefs region_block_;
};

}  // namespace mgmf
