#pragma once

#include <cstdint>
#include <string>

#include "mgmf/tensor.hpp"

namespace mgmf {

// Store-side mirrors of the tape-bound bundles in tensor.hpp. A bundle is
// registered once against a ParamStore and bound to a fresh tape each step.

struct AttnParamRefs {
  Parameter* wq = nullptr;
  Parameter* bq = nullptr;
  Parameter* wk = nullptr;
  Parameter* bk = nullptr;
  Parameter* wv = nullptr;
  Parameter* bv = nullptr;
  Parameter* wo = nullptr;
  Parameter* bo = nullptr;

  AttnParams bind(Tape& tape) const;
};

struct FfnParamRefs {
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;

  FeedForwardParams bind(Tape& tape) const;
};

struct LnParamRefs {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  LayerNormParams bind(Tape& tape) const;
};

AttnParamRefs make_attn_params(ParamStore& ps, const std::string& prefix,
                               std::size_t d, std::uint64_t seed);
FfnParamRefs make_ffn_params(ParamStore& ps, const std::string& prefix,
                             std::size_t d, std::size_t hidden, std::uint64_t seed);
LnParamRefs make_ln_params(ParamStore& ps, const std::string& prefix, std::size_t d);

// Pre-norm encoder block: x + MHA(LN1(x)) followed by + FF(LN2(x)).
struct BlockParamRefs {
  LnParamRefs ln1;
  AttnParamRefs attn;
  LnParamRefs ln2;
  FfnParamRefs ffn;
};

BlockParamRefs make_block_params(ParamStore& ps, const std::string& prefix,
                                 std::size_t d, std::size_t hidden,
                                 std::uint64_t seed);

Tensor encoder_block(Tape& tape, Tensor x, const BlockParamRefs& p,
                     std::size_t heads, double ln_eps,
                     const std::string& label = {});

}  // namespace mgmf
