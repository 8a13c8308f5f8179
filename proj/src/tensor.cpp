#include "mgmf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace mgmf {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// C[r,c] += A[r,k] * B[k,c]
void mm_nn(const double* a, const double* b, double* c, std::size_t r, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      if (aik == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C[r,c] += A[r,k] * B[c,k]^T
void mm_nt(const double* a, const double* b, double* c, std::size_t r, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

// C[k,c] += A[r,k]^T * B[r,c]
void mm_tn(const double* a, const double* b, double* c, std::size_t r, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = arow[kk];
      if (aik == 0.0) continue;
      double* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- ParamStore -------------------------------------------------------------

Parameter& ParamStore::insert(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ContractError("parameter already registered: " + name);
  if (shape.empty()) throw ShapeError("parameter " + name + " needs a non-empty shape");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("parameter " + name + " has a zero dimension");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  p->value.assign(shape_numel(p->shape), 0.0);
  index_[name] = items_.size();
  items_.push_back(std::move(p));
  return *items_.back();
}

Parameter& ParamStore::create_fan(const std::string& name, Shape shape,
                                  std::uint64_t seed) {
  Parameter& p = insert(name, std::move(shape));
  const std::size_t fan_in = p.shape[0];
  const std::size_t fan_out = p.shape[p.shape.size() - 1];
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  SplitMix64 rng = seeded_stream(seed, name);
  for (double& v : p.value) v = rng.uniform(-a, a);
  return p;
}

Parameter& ParamStore::create_uniform(const std::string& name, Shape shape, double range,
                                      std::uint64_t seed) {
  Parameter& p = insert(name, std::move(shape));
  SplitMix64 rng = seeded_stream(seed, name);
  for (double& v : p.value) v = rng.uniform(-range, range);
  return p;
}

Parameter& ParamStore::create_const(const std::string& name, Shape shape, double fill) {
  Parameter& p = insert(name, std::move(shape));
  std::fill(p.value.begin(), p.value.end(), fill);
  return p;
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

Parameter& ParamStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (!p) throw ContractError("unknown parameter: " + name);
  return *p;
}

void ParamStore::zero_grad() {
  for (auto& p : items_) {
    p->grad.assign(p->value.size(), 0.0);
    p->has_grad = false;
  }
}

// ---- Tape plumbing ----------------------------------------------------------

struct TapeOps {
  static Tape::Node& node(const Tensor& t) { return *t.tape_->nodes_[t.node_]; }

  static Tape& tape_of(std::initializer_list<Tensor> ts) {
    if (ts.size() == 0) throw ContractError("operation needs at least one operand");
    Tape* tape = ts.begin()->tape_;
    for (const Tensor& t : ts) {
      if (!t.valid()) throw ContractError("operation on an empty tensor handle");
      if (t.tape_ != tape) throw ContractError("operands recorded on different tapes");
    }
    return *tape;
  }

  static Tensor raw(Tape& tape, Shape shape, std::vector<double> value,
                    bool requires_grad) {
    auto n = std::make_unique<Tape::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    tape.nodes_.push_back(std::move(n));
    tape.consumed_ = false;
    return Tensor(&tape, static_cast<std::uint32_t>(tape.nodes_.size() - 1));
  }

  // Node first, then the backprop closure, so the closure can hold the output
  // handle and read its grad buffer during the reverse sweep.
  template <typename FnFactory>
  static Tensor op(Tape& tape, Shape shape, std::vector<double> value,
                   bool requires_grad, FnFactory&& make_backprop) {
    Tensor out = raw(tape, std::move(shape), std::move(value), requires_grad);
    if (requires_grad) node(out).backprop = make_backprop(out);
    return out;
  }

  static std::vector<double>& grad_buf(const Tensor& t) {
    Tape::Node& n = node(t);
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  static const std::vector<double>& out_grad(const Tensor& t) { return node(t).grad; }

  static void require_2d(const Tensor& t, const char* what) {
    if (node(t).shape.size() != 2)
      throw ShapeError(std::string(what) + " expects a 2-d tensor, got " +
                       shape_str(node(t).shape));
  }

  static bool same_node(const Tensor& a, const Tensor& b) {
    return a.tape_ == b.tape_ && a.node_ == b.node_;
  }

  static void set_shape(const Tensor& t, Shape s) { node(t).shape = std::move(s); }

  static void count_attention(Tape& tape, bool cross, std::size_t n_q,
                              std::size_t n_kv) {
    tape.attn_stats_.mha_calls += 1;
    if (cross)
      tape.attn_stats_.cross_entries += n_q * n_kv;
    else
      tape.attn_stats_.self_entries += n_q * n_kv;
  }

  static void record_attention(Tape& tape, AttnRecord rec) {
    if (tape.attn_sink_) tape.attn_sink_->push_back(std::move(rec));
  }
};

using Ops = TapeOps;

const Shape& Tensor::shape() const { return Ops::node(*this).shape; }
std::size_t Tensor::numel() const { return Ops::node(*this).value.size(); }

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  return s.empty() ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  std::size_t c = 1;
  for (std::size_t i = 1; i < s.size(); ++i) c *= s[i];
  return c;
}

std::span<const double> Tensor::values() const { return Ops::node(*this).value; }

std::span<const double> Tensor::grad() const {
  const Tape::Node& n = Ops::node(*this);
  if (n.grad.size() != n.value.size())
    throw ContractError("gradient requested before a backward pass reached this node");
  return n.grad;
}

bool Tensor::requires_grad() const { return Ops::node(*this).requires_grad; }

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on a tensor of shape " + shape_str(shape()));
  return values()[0];
}

Tensor Tape::leaf(Shape shape, std::span<const double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("leaf data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  return Ops::raw(*this, std::move(shape),
                  std::vector<double>(data.begin(), data.end()), requires_grad);
}

Tensor Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Tensor(this, it->second);
  Tensor t = Ops::raw(*this, p.shape, p.value, true);
  param_nodes_[&p] = t.node_;
  param_leaves_.emplace_back(&p, t.node_);
  return t;
}

std::size_t Tape::node_count() const { return nodes_.size(); }

void Tape::backward(Tensor loss) {
  if (loss.tape_ != this) throw ContractError("loss was recorded on a different tape");
  if (loss.numel() != 1)
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  if (consumed_)
    throw ContractError(
        "backward already ran on this tape; record new operations before calling it "
        "again");
  consumed_ = true;

  for (auto& n : nodes_) {
    if (n->requires_grad) n->grad.assign(n->value.size(), 0.0);
  }
  Node& root = *nodes_[loss.node_];
  if (root.requires_grad) {
    root.grad.assign(1, 1.0);
    for (std::uint32_t i = loss.node_ + 1; i-- > 0;) {
      Node& n = *nodes_[i];
      if (n.requires_grad && n.backprop) n.backprop();
    }
  }
  for (auto& [p, idx] : param_leaves_) {
    Node& leaf_node = *nodes_[idx];
    if (leaf_node.grad.size() == p->value.size())
      p->grad = leaf_node.grad;
    else
      p->grad.assign(p->value.size(), 0.0);
    p->has_grad = true;
  }
}

// ---- ops --------------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

Tensor matmul_any(Tensor a, Tensor b, bool transpose_b, const char* what) {
  Tape& tape = Ops::tape_of({a, b});
  Ops::require_2d(a, what);
  Ops::require_2d(b, what);
  const std::size_t r = a.rows(), k = a.cols();
  const std::size_t bk = transpose_b ? b.cols() : b.rows();
  const std::size_t c = transpose_b ? b.rows() : b.cols();
  if (k != bk)
    throw ShapeError(std::string(what) + ": inner dimensions differ, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(r * c, 0.0);
  if (transpose_b)
    mm_nt(a.values().data(), b.values().data(), out.data(), r, k, c);
  else
    mm_nn(a.values().data(), b.values().data(), out.data(), r, k, c);
  const bool rg = a.requires_grad() || b.requires_grad();
  return Ops::op(tape, {r, c}, std::move(out), rg, [=](Tensor o) {
    return [=]() {
      const double* g = Ops::out_grad(o).data();
      if (a.requires_grad()) {
        double* da = Ops::grad_buf(a).data();
        if (transpose_b)
          mm_nn(g, Ops::node(b).value.data(), da, r, c, k);  // dA = G * B
        else
          mm_nt(g, Ops::node(b).value.data(), da, r, c, k);  // dA = G * B^T
      }
      if (b.requires_grad()) {
        double* db = Ops::grad_buf(b).data();
        if (transpose_b)
          mm_tn(g, Ops::node(a).value.data(), db, r, c, k);  // dB = G^T * A
        else
          mm_tn(Ops::node(a).value.data(), g, db, r, k, c);  // dB = A^T * G
      }
    };
  });
}

}  // namespace

Tensor matmul(Tensor a, Tensor b) { return matmul_any(a, b, false, "matmul"); }
Tensor matmul_nt(Tensor a, Tensor b) { return matmul_any(a, b, true, "matmul_nt"); }

Tensor add(Tensor a, Tensor b) {
  Tape& tape = Ops::tape_of({a, b});
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return Ops::op(tape, a.shape(), std::move(out), rg, [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      if (a.requires_grad()) {
        auto& da = Ops::grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& db = Ops::grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
      }
    };
  });
}

Tensor sub(Tensor a, Tensor b) {
  Tape& tape = Ops::tape_of({a, b});
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return Ops::op(tape, a.shape(), std::move(out), rg, [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      if (a.requires_grad()) {
        auto& da = Ops::grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& db = Ops::grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      }
    };
  });
}

Tensor mul(Tensor a, Tensor b) {
  Tape& tape = Ops::tape_of({a, b});
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return Ops::op(tape, a.shape(), std::move(out), rg, [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      if (a.requires_grad()) {
        auto& da = Ops::grad_buf(a);
        const auto bvv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bvv[i];
      }
      if (b.requires_grad()) {
        auto& db = Ops::grad_buf(b);
        const auto avv = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * avv[i];
      }
    };
  });
}

Tensor add_rowwise(Tensor x, Tensor bias) {
  Tape& tape = Ops::tape_of({x, bias});
  Ops::require_2d(x, "add_rowwise");
  const std::size_t n = x.rows(), d = x.cols();
  if (bias.numel() != d)
    throw ShapeError("add_rowwise: bias length " + std::to_string(bias.numel()) +
                     " does not match row width " + std::to_string(d));
  std::vector<double> out(n * d);
  const auto xv = x.values(), bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
  const bool rg = x.requires_grad() || bias.requires_grad();
  return Ops::op(tape, {n, d}, std::move(out), rg, [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      if (x.requires_grad()) {
        auto& dx = Ops::grad_buf(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto& db = Ops::grad_buf(bias);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
      }
    };
  });
}

Tensor scale(Tensor x, double c) {
  Tape& tape = Ops::tape_of({x});
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return Ops::op(tape, x.shape(), std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      auto& dx = Ops::grad_buf(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * c;
    };
  });
}

Tensor slice_rows(Tensor x, std::size_t r0, std::size_t r1) {
  Tape& tape = Ops::tape_of({x});
  Ops::require_2d(x, "slice_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (r0 >= r1 || r1 > n)
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " +
                     std::to_string(r1) + ") out of " + std::to_string(n) + " rows");
  const std::size_t count = r1 - r0;
  std::vector<double> out(count * d);
  std::memcpy(out.data(), x.values().data() + r0 * d, count * d * sizeof(double));
  return Ops::op(tape, {count, d}, std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      auto& dx = Ops::grad_buf(x);
      for (std::size_t i = 0; i < count * d; ++i) dx[r0 * d + i] += g[i];
    };
  });
}

Tensor slice_cols(Tensor x, std::size_t c0, std::size_t c1) {
  Tape& tape = Ops::tape_of({x});
  Ops::require_2d(x, "slice_cols");
  const std::size_t n = x.rows(), d = x.cols();
  if (c0 >= c1 || c1 > d)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") out of " + std::to_string(d) + " columns");
  const std::size_t count = c1 - c0;
  std::vector<double> out(n * count);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * d + c0 + j];
  return Ops::op(tape, {n, count}, std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      auto& dx = Ops::grad_buf(x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) dx[i * d + c0 + j] += g[i * count + j];
    };
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& tape = Ops::tape_of({parts.front()});
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    Ops::tape_of({parts.front(), t});
    Ops::require_2d(t, "concat_rows");
    if (t.cols() != d)
      throw ShapeError("concat_rows: column widths differ, " + std::to_string(d) +
                       " vs " + std::to_string(t.cols()));
    total += t.rows();
    rg = rg || t.requires_grad();
  }
  std::vector<double> out(total * d);
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    const auto tv = t.values();
    std::memcpy(out.data() + off, tv.data(), tv.size() * sizeof(double));
    off += tv.size();
  }
  std::vector<Tensor> held(parts.begin(), parts.end());
  return Ops::op(tape, {total, d}, std::move(out), rg,
                 [held = std::move(held)](Tensor o) {
                   return [held, o]() {
                     const auto& g = Ops::out_grad(o);
                     std::size_t off = 0;
                     for (const Tensor& t : held) {
                       const std::size_t n = t.numel();
                       if (t.requires_grad()) {
                         auto& dt = Ops::grad_buf(t);
                         for (std::size_t i = 0; i < n; ++i) dt[i] += g[off + i];
                       }
                       off += n;
                     }
                   };
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& tape = Ops::tape_of({parts.front()});
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  bool rg = false;
  for (const Tensor& t : parts) {
    Ops::tape_of({parts.front(), t});
    Ops::require_2d(t, "concat_cols");
    if (t.rows() != n)
      throw ShapeError("concat_cols: row counts differ, " + std::to_string(n) + " vs " +
                       std::to_string(t.rows()));
    total += t.cols();
    rg = rg || t.requires_grad();
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    const std::size_t d = t.cols();
    const auto tv = t.values();
    for (std::size_t i = 0; i < n; ++i)
      std::memcpy(out.data() + i * total + off, tv.data() + i * d, d * sizeof(double));
    off += d;
  }
  std::vector<Tensor> held(parts.begin(), parts.end());
  return Ops::op(tape, {n, total}, std::move(out), rg,
                 [held = std::move(held), n, total](Tensor o) {
                   return [held, o, n, total]() {
                     const auto& g = Ops::out_grad(o);
                     std::size_t off = 0;
                     for (const Tensor& t : held) {
                       const std::size_t d = t.cols();
                       if (t.requires_grad()) {
                         auto& dt = Ops::grad_buf(t);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j)
                             dt[i * d + j] += g[i * total + off + j];
                       }
                       off += d;
                     }
                   };
                 });
}

Tensor mean_rows(Tensor x) {
  Tape& tape = Ops::tape_of({x});
  Ops::require_2d(x, "mean_rows");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(d, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  return Ops::op(tape, {std::size_t{1}, d}, std::move(out), x.requires_grad(),
                 [=](Tensor o) {
                   return [=]() {
                     const auto& g = Ops::out_grad(o);
                     auto& dx = Ops::grad_buf(x);
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += g[j] * inv;
                   };
                 });
}

Tensor sum_all(Tensor x) {
  Tape& tape = Ops::tape_of({x});
  double s = 0.0;
  for (double v : x.values()) s += v;
  std::vector<double> out{s};
  return Ops::op(tape, {std::size_t{1}, std::size_t{1}}, std::move(out),
                 x.requires_grad(), [=](Tensor o) {
                   return [=]() {
                     const double g = Ops::out_grad(o)[0];
                     auto& dx = Ops::grad_buf(x);
                     for (double& v : dx) v += g;
                   };
                 });
}

Tensor mean_all(Tensor x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax_rows(Tensor x) {
  Tape& tape = Ops::tape_of({x});
  Ops::require_2d(x, "softmax_rows");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n * d);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = std::exp(row[j] - mx);
      denom += out[i * d + j];
    }
    const double inv = 1.0 / denom;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= inv;
  }
  return Ops::op(tape, {n, d}, std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      const auto sv = o.values();
      auto& dx = Ops::grad_buf(x);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * sv[i * d + j];
        for (std::size_t j = 0; j < d; ++j)
          dx[i * d + j] += sv[i * d + j] * (g[i * d + j] - dot);
      }
    };
  });
}

Tensor layer_norm(Tensor x, const LayerNormParams& p, double eps) {
  Tape& tape = Ops::tape_of({x, p.gain, p.bias});
  Ops::require_2d(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (p.gain.numel() != d || p.bias.numel() != d)
    throw ShapeError("layer_norm: gain/bias length does not match row width " +
                     std::to_string(d));
  std::vector<double> out(n * d);
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(n);
  const auto xv = x.values();
  const auto gv = p.gain.values(), bv = p.bias.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * inv;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  const bool rg = x.requires_grad() || p.gain.requires_grad() || p.bias.requires_grad();
  const Tensor gain = p.gain, bias = p.bias;
  return Ops::op(tape, {n, d}, std::move(out), rg, [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      const auto gv2 = gain.values();
      if (gain.requires_grad()) {
        auto& dg = Ops::grad_buf(gain);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * (*xhat)[i * d + j];
      }
      if (bias.requires_grad()) {
        auto& db = Ops::grad_buf(bias);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
      }
      if (x.requires_grad()) {
        auto& dx = Ops::grad_buf(x);
        // dx = inv_sigma * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
        for (std::size_t i = 0; i < n; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gv2[j];
            m1 += dh;
            m2 += dh * (*xhat)[i * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gv2[j];
            dx[i * d + j] += (*inv_sigma)[i] * (dh - m1 - (*xhat)[i * d + j] * m2);
          }
        }
      }
    };
  });
}

Tensor activation(Tensor x, Activation kind) {
  Tape& tape = Ops::tape_of({x});
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  if (kind == Activation::Gelu) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_fwd(xv[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  }
  return Ops::op(tape, x.shape(), std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      const auto xin = x.values();
      auto& dx = Ops::grad_buf(x);
      if (kind == Activation::Gelu) {
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * gelu_grad(xin[i]);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += xin[i] > 0.0 ? g[i] : 0.0;
      }
    };
  });
}

Tensor embed_rows(Tensor table, std::span<const int> ids) {
  Tape& tape = Ops::tape_of({table});
  Ops::require_2d(table, "embed_rows");
  if (ids.empty()) throw ContractError("embed_rows: empty id list");
  const std::size_t vocab = table.rows(), d = table.cols(), n = ids.size();
  std::vector<double> out(n * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < n; ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw DataError("embed_rows: id " + std::to_string(id) + " outside table of " +
                      std::to_string(vocab) + " rows");
    std::memcpy(out.data() + i * d, tv.data() + static_cast<std::size_t>(id) * d,
                d * sizeof(double));
  }
  std::vector<int> held(ids.begin(), ids.end());
  return Ops::op(tape, {n, d}, std::move(out), table.requires_grad(),
                 [=, held = std::move(held)](Tensor o) {
                   return [=]() {
                     const auto& g = Ops::out_grad(o);
                     auto& dt = Ops::grad_buf(table);
                     for (std::size_t i = 0; i < held.size(); ++i) {
                       const std::size_t row = static_cast<std::size_t>(held[i]);
                       for (std::size_t j = 0; j < d; ++j) dt[row * d + j] += g[i * d + j];
                     }
                   };
                 });
}

Tensor l2_normalize_rows(Tensor x) {
  Tape& tape = Ops::tape_of({x});
  Ops::require_2d(x, "l2_normalize_rows");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n * d);
  auto inv_norm = std::make_shared<std::vector<double>>(n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
    if (s == 0.0)
      throw ContractError("l2_normalize_rows: row " + std::to_string(i) +
                          " is exactly zero");
    const double inv = 1.0 / std::sqrt(s);
    (*inv_norm)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * inv;
  }
  return Ops::op(tape, {n, d}, std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      const auto yv = o.values();
      auto& dx = Ops::grad_buf(x);
      // dx = (g - y * (g . y)) / |x|  per row
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * yv[i * d + j];
        for (std::size_t j = 0; j < d; ++j)
          dx[i * d + j] += (g[i * d + j] - yv[i * d + j] * dot) * (*inv_norm)[i];
      }
    };
  });
}

Tensor log_elem(Tensor x) {
  Tape& tape = Ops::tape_of({x});
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i]);
  return Ops::op(tape, x.shape(), std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      const auto xin = x.values();
      auto& dx = Ops::grad_buf(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / xin[i];
    };
  });
}

Tensor exp_elem(Tensor x) {
  Tape& tape = Ops::tape_of({x});
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  return Ops::op(tape, x.shape(), std::move(out), x.requires_grad(), [=](Tensor o) {
    return [=]() {
      const auto& g = Ops::out_grad(o);
      const auto yv = o.values();
      auto& dx = Ops::grad_buf(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * yv[i];
    };
  });
}

Tensor select_entries(Tensor x,
                      std::span<const std::pair<std::size_t, std::size_t>> at) {
  Tape& tape = Ops::tape_of({x});
  Ops::require_2d(x, "select_entries");
  if (at.empty()) throw ContractError("select_entries: empty index list");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(at.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < at.size(); ++i) {
    const auto [r, c] = at[i];
    if (r >= n || c >= d)
      throw ShapeError("select_entries: index (" + std::to_string(r) + ", " +
                       std::to_string(c) + ") outside " + shape_str(x.shape()));
    out[i] = xv[r * d + c];
  }
  std::vector<std::pair<std::size_t, std::size_t>> held(at.begin(), at.end());
  return Ops::op(tape, {at.size(), std::size_t{1}}, std::move(out), x.requires_grad(),
                 [=, held = std::move(held)](Tensor o) {
                   return [=]() {
                     const auto& g = Ops::out_grad(o);
                     auto& dx = Ops::grad_buf(x);
                     for (std::size_t i = 0; i < held.size(); ++i)
                       dx[held[i].first * d + held[i].second] += g[i];
                   };
                 });
}

Tensor broadcast_rows(Tensor x, std::size_t n) {
  Tape& tape = Ops::tape_of({x});
  if (x.numel() != 1)
    throw ShapeError("broadcast_rows expects a scalar, got " + shape_str(x.shape()));
  if (n == 0) throw ShapeError("broadcast_rows: zero rows");
  std::vector<double> out(n, x.values()[0]);
  return Ops::op(tape, {n, std::size_t{1}}, std::move(out), x.requires_grad(),
                 [=](Tensor o) {
                   return [=]() {
                     const auto& g = Ops::out_grad(o);
                     auto& dx = Ops::grad_buf(x);
                     for (double gi : g) dx[0] += gi;
                   };
                 });
}

// ---- composed blocks --------------------------------------------------------

std::pair<Tensor, Tensor> multi_head_attention(Tensor q_seq, Tensor kv_seq,
                                               const AttnParams& p, std::size_t heads,
                                               const std::string& label) {
  Tape& tape = Ops::tape_of({q_seq, kv_seq, p.wq, p.wk, p.wv, p.wo});
  Ops::require_2d(q_seq, "multi_head_attention");
  Ops::require_2d(kv_seq, "multi_head_attention");
  const std::size_t n_q = q_seq.rows(), n_kv = kv_seq.rows(), d = q_seq.cols();
  if (kv_seq.cols() != d)
    throw ShapeError("multi_head_attention: query and key/value widths differ, " +
                     shape_str(q_seq.shape()) + " vs " + shape_str(kv_seq.shape()));
  if (heads == 0 || d % heads != 0)
    throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                      " is not divisible into " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  // Self vs cross is a property of the graph: same node means self-attention.
  const bool cross = !Ops::same_node(q_seq, kv_seq);

  Tensor q = add_rowwise(matmul(q_seq, p.wq), p.bq);
  Tensor k = add_rowwise(matmul(kv_seq, p.wk), p.bk);
  Tensor v = add_rowwise(matmul(kv_seq, p.wv), p.bv);

  std::vector<Tensor> head_outs;
  std::vector<Tensor> head_maps;
  head_outs.reserve(heads);
  head_maps.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dh));
    head_maps.push_back(attn);
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor merged = concat_cols(head_outs);
  Tensor out = add_rowwise(matmul(merged, p.wo), p.bo);

  Tensor maps = concat_rows(head_maps);
  Ops::set_shape(maps, Shape{heads, n_q, n_kv});

  Ops::count_attention(tape, cross, n_q, n_kv);
  if (!label.empty()) {
    AttnRecord rec;
    rec.label = label;
    rec.heads = heads;
    rec.n_q = n_q;
    rec.n_kv = n_kv;
    rec.weights.assign(maps.values().begin(), maps.values().end());
    Ops::record_attention(tape, std::move(rec));
  }
  return {out, maps};
}

Tensor feed_forward(Tensor x, const FeedForwardParams& p, Activation act) {
  Tensor h = activation(add_rowwise(matmul(x, p.w1), p.b1), act);
  return add_rowwise(matmul(h, p.w2), p.b2);
}

// ---- optimizer ----------------------------------------------------------------

void Optimizer::step(ParamStore& params) {
  if (cfg_.lr <= 0.0) throw ConfigError("optimizer learning rate must be positive");
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.has_grad)
      throw ContractError("optimizer step before gradients for " + p.name);
    if (cfg_.kind == OptimizerConfig::Kind::Sgd) {
      for (std::size_t j = 0; j < p.value.size(); ++j) p.value[j] -= cfg_.lr * p.grad[j];
      continue;
    }
    Slot& s = slots_[&p];
    if (s.m.size() != p.value.size()) {
      s.m.assign(p.value.size(), 0.0);
      s.v.assign(p.value.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      s.m[j] = cfg_.beta1 * s.m[j] + (1.0 - cfg_.beta1) * g;
      s.v[j] = cfg_.beta2 * s.v[j] + (1.0 - cfg_.beta2) * g * g;
      p.value[j] -= cfg_.lr * (s.m[j] / bc1) / (std::sqrt(s.v[j] / bc2) + cfg_.eps);
    }
  }
}

}  // namespace mgmf
