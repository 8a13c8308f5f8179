#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgmf/common.hpp"

namespace mgmf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// A named trainable tensor. Parameters live outside any tape; `grad` is
// written by Tape::backward and consumed by the optimizer.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized like value once a backward pass ran
  bool has_grad = false;

  std::size_t numel() const { return value.size(); }
};

// All parameters of a model, in registration order. The order is part of
// the determinism contract: the optimizer and the checkpoint writer iterate
// it as-is, and initialization draws from a per-name stream so an untouched
// tensor initializes identically no matter what else is registered.
class ParamStore {
 public:
  // Scaled-uniform fan-based init over [-a, a], a = sqrt(6 / (fan_in + fan_out)).
  Parameter& create_fan(const std::string& name, Shape shape, std::uint64_t seed);
  // Uniform init over [-range, range]; used for embedding-style tables.
  Parameter& create_uniform(const std::string& name, Shape shape, double range,
                            std::uint64_t seed);
  Parameter& create_const(const std::string& name, Shape shape, double fill);

  Parameter* find(const std::string& name);
  Parameter& at(const std::string& name);
  void zero_grad();

  std::size_t size() const { return items_.size(); }
  Parameter& operator[](std::size_t i) { return *items_[i]; }
  const Parameter& operator[](std::size_t i) const { return *items_[i]; }

 private:
  Parameter& insert(const std::string& name, Shape shape);

  std::vector<std::unique_ptr<Parameter>> items_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

// Handle to one node of a Tape. Cheap to copy; the tape owns the storage.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rows() const;  // first dimension
  std::size_t cols() const;  // trailing dimensions collapsed
  std::span<const double> values() const;
  // Gradient of the last backward pass; ContractError if none ran.
  std::span<const double> grad() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  double item() const;  // value of a single-element tensor

 private:
  friend class Tape;
  friend struct TapeOps;
  Tensor(Tape* tape, std::uint32_t node) : tape_(tape), node_(node) {}

  Tape* tape_ = nullptr;
  std::uint32_t node_ = 0;
};

// Attention bookkeeping: score-matrix entry counts (per q/kv pair, head
// count excluded) and invocation counters, used by the cost benchmark.
struct AttnStats {
  std::size_t mha_calls = 0;
  std::size_t cross_entries = 0;  // q and kv are distinct sequences
  std::size_t self_entries = 0;   // q is kv
  std::size_t cross_block_calls = 0;
};

// One recorded attention map: weights are [heads][n_q][n_kv] row-major.
struct AttnRecord {
  std::string label;
  std::size_t heads = 0;
  std::size_t n_q = 0;
  std::size_t n_kv = 0;
  std::vector<double> weights;
};

enum class Activation { Gelu, Relu };

// Tape-bound views of parameter bundles consumed by the composite ops.
struct AttnParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct LayerNormParams {
  Tensor gain, bias;
};

// Records a forward computation eagerly and replays it once in reverse.
// Nodes are appended in topological order by construction; backward is a
// single reverse sweep that visits each node at most once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding a copy of `data`; participates in gradients iff requested.
  Tensor leaf(Shape shape, std::span<const double> data, bool requires_grad = false);
  Tensor constant(Shape shape, std::span<const double> data) {
    return leaf(std::move(shape), data, false);
  }
  // Leaf bound to a Parameter. One node per Parameter per tape; repeated
  // calls return the same node so gradients accumulate naturally.
  Tensor param(Parameter& p);

  // Backpropagates from a scalar loss. Writes Parameter::grad on every
  // parameter leaf of this tape. Calling it again without recording new
  // operations is a ContractError, as is a non-scalar loss.
  void backward(Tensor loss);

  std::size_t node_count() const;

  AttnStats& attn_stats() { return attn_stats_; }
  // When set, multi_head_attention appends its attention maps to `sink`.
  void collect_attention(std::vector<AttnRecord>* sink) { attn_sink_ = sink; }

 private:
  friend class Tensor;
  friend struct TapeOps;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void()> backprop;  // empty for leaves
  };

  std::vector<std::unique_ptr<Node>> nodes_;
  std::map<const Parameter*, std::uint32_t> param_nodes_;
  std::vector<std::pair<Parameter*, std::uint32_t>> param_leaves_;
  bool consumed_ = false;
  AttnStats attn_stats_;
  std::vector<AttnRecord>* attn_sink_ = nullptr;
};

// ---- operations -----------------------------------------------------------
// All operations validate shapes, compute values eagerly, and register the
// local gradient rule. Operands must live on the same tape.

Tensor matmul(Tensor a, Tensor b);     // [r,k] x [k,c] -> [r,c]
Tensor matmul_nt(Tensor a, Tensor b);  // [r,k] x [c,k] -> [r,c], i.e. a * b^T
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor add_rowwise(Tensor x, Tensor bias);  // bias [d] added to each row
Tensor scale(Tensor x, double c);
Tensor slice_rows(Tensor x, std::size_t r0, std::size_t r1);
Tensor slice_cols(Tensor x, std::size_t c0, std::size_t c1);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor mean_rows(Tensor x);  // [n,d] -> [1,d]
Tensor sum_all(Tensor x);    // -> [1,1]
Tensor mean_all(Tensor x);   // -> [1,1]
Tensor softmax_rows(Tensor x);
Tensor layer_norm(Tensor x, const LayerNormParams& p, double eps);
Tensor activation(Tensor x, Activation kind);
// Gathers rows of `table` ([vocab,d]) by id; DataError on out-of-range ids.
Tensor embed_rows(Tensor table, std::span<const int> ids);
Tensor l2_normalize_rows(Tensor x);  // ContractError on a zero row
Tensor log_elem(Tensor x);
Tensor exp_elem(Tensor x);
// Picks entries (r,c) into a [k,1] column.
Tensor select_entries(Tensor x, std::span<const std::pair<std::size_t, std::size_t>> at);
Tensor broadcast_rows(Tensor x, std::size_t n);  // [1,1] -> [n,1]

// Scaled dot-product attention with `heads` heads over model width d
// (d divisible by heads; scale 1/sqrt(d/heads)). Returns the attended
// sequence [n_q,d] and the attention maps [heads,n_q,n_kv].
std::pair<Tensor, Tensor> multi_head_attention(Tensor q_seq, Tensor kv_seq,
                                               const AttnParams& p, std::size_t heads,
                                               const std::string& label = {});

// Two affine maps with a nonlinearity between; shape-preserving.
Tensor feed_forward(Tensor x, const FeedForwardParams& p, Activation act);

// ---- optimizer --------------------------------------------------------------

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };
  Kind kind = Kind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Plain SGD or Adam-style adaptive moments, one slot pair per parameter.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  // Applies one update from Parameter::grad; ContractError if a parameter
  // has no gradient or the moment buffers mismatch.
  void step(ParamStore& params);

  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::map<const Parameter*, Slot> slots_;
  std::size_t t_ = 0;
};

}  // namespace mgmf
