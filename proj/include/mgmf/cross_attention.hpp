#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "mgmf/blocks.hpp"
#include "mgmf/tensor.hpp"

namespace mgmf {

// One direction of a cross-modal promotion block. ln1 normalizes both inputs
// of the cross stage; heads applies to the cross and self stages alike.
struct CapParamRefs {
  LnParamRefs ln1;
  AttnParamRefs cross;
  LnParamRefs ln2;
  AttnParamRefs self;
  LnParamRefs ln3;
  FfnParamRefs ffn;
  std::size_t heads = 1;
  double ln_eps = 1e-5;
};

CapParamRefs make_cap_params(ParamStore& ps, const std::string& prefix,
                             std::size_t d, std::size_t hidden, std::size_t heads,
                             std::uint64_t seed, double ln_eps = 1e-5);

// The promotion chain over queries h_a and context h_b:
//   x1 = MCA(LN1(h_a), LN1(h_b)) + h_a
//   x2 = MSA(LN2(x1)) + x1
//   out = FN(LN3(x2)) + x2
// Output shape [n_a, d]. Zeroing the three sublayer output projections makes
// this the identity on h_a.
Tensor cap_direction(Tape& tape, Tensor h_a, Tensor h_b, const CapParamRefs& p,
                     const std::string& label = {});

// Symmetric pairing; both directions read the original inputs, so the result
// is independent of evaluation order.
std::pair<Tensor, Tensor> cap_pair(Tape& tape, Tensor h_a, Tensor h_b,
                                   const CapParamRefs& ab, const CapParamRefs& ba,
                                   const std::string& label = {});

}  // namespace mgmf
