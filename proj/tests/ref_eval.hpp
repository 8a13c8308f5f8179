#pragma once

// Straight-line re-implementations on plain vectors, written independently of
// the tape ops. Tests compare tape outputs against these to 1e-12.

#include <cmath>
#include <cstddef>
#include <vector>

#include "mgmf/cross_attention.hpp"

namespace ref {

using Vec = std::vector<double>;

inline Vec matmul(const Vec& a, std::size_t ar, std::size_t ac, const Vec& b,
                  std::size_t bc) {
  Vec out(ar * bc, 0.0);
  for (std::size_t i = 0; i < ar; ++i)
    for (std::size_t j = 0; j < bc; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < ac; ++k) s += a[i * ac + k] * b[k * bc + j];
      out[i * bc + j] = s;
    }
  return out;
}

inline Vec affine(const Vec& x, std::size_t n, std::size_t d_in, const Vec& w,
                  std::size_t d_out, const Vec& bias) {
  Vec out = matmul(x, n, d_in, w, d_out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d_out; ++j) out[i * d_out + j] += bias[j];
  return out;
}

inline Vec layer_norm(const Vec& x, std::size_t n, std::size_t d, const Vec& gain,
                      const Vec& bias, double eps) {
  Vec out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = (x[i * d + j] - mean) * inv * gain[j] + bias[j];
  }
  return out;
}

inline void softmax_rows_inplace(Vec& x, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    double mx = x[i * d];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[i * d + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      x[i * d + j] = std::exp(x[i * d + j] - mx);
      denom += x[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] /= denom;
  }
}

struct AttnW {
  Vec wq, bq, wk, bk, wv, bv, wo, bo;
};

inline AttnW snapshot_attn(const mgmf::AttnParamRefs& p) {
  return AttnW{p.wq->value, p.bq->value, p.wk->value, p.bk->value,
               p.wv->value, p.bv->value, p.wo->value, p.bo->value};
}

inline Vec mha(const Vec& xq, std::size_t nq, const Vec& kv, std::size_t nkv,
               std::size_t d, std::size_t heads, const AttnW& w) {
  const std::size_t dh = d / heads;
  const Vec q = affine(xq, nq, d, w.wq, d, w.bq);
  const Vec k = affine(kv, nkv, d, w.wk, d, w.bk);
  const Vec v = affine(kv, nkv, d, w.wv, d, w.bv);
  Vec merged(nq * d);
  for (std::size_t h = 0; h < heads; ++h) {
    Vec scores(nq * nkv);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nkv; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c)
          s += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        scores[i * nkv + j] = s / std::sqrt(static_cast<double>(dh));
      }
    softmax_rows_inplace(scores, nq, nkv);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t c = 0; c < dh; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < nkv; ++j)
          s += scores[i * nkv + j] * v[j * d + h * dh + c];
        merged[i * d + h * dh + c] = s;
      }
  }
  return affine(merged, nq, d, w.wo, d, w.bo);
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

struct CapW {
  Vec ln1g, ln1b, ln2g, ln2b, ln3g, ln3b;
  AttnW cross, self;
  Vec w1, b1, w2, b2;
  std::size_t hidden = 0;
  std::size_t heads = 0;
  double eps = 0.0;
};

inline CapW snapshot(const mgmf::CapParamRefs& p) {
  CapW w;
  w.ln1g = p.ln1.gain->value;
  w.ln1b = p.ln1.bias->value;
  w.ln2g = p.ln2.gain->value;
  w.ln2b = p.ln2.bias->value;
  w.ln3g = p.ln3.gain->value;
  w.ln3b = p.ln3.bias->value;
  w.cross = snapshot_attn(p.cross);
  w.self = snapshot_attn(p.self);
  w.w1 = p.ffn.w1->value;
  w.b1 = p.ffn.b1->value;
  w.w2 = p.ffn.w2->value;
  w.b2 = p.ffn.b2->value;
  w.hidden = p.ffn.b1->numel();
  w.heads = p.heads;
  w.eps = p.ln_eps;
  return w;
}

inline Vec cap(const Vec& a, std::size_t na, const Vec& b, std::size_t nb,
               std::size_t d, const CapW& w) {
  const Vec la = layer_norm(a, na, d, w.ln1g, w.ln1b, w.eps);
  const Vec lb = layer_norm(b, nb, d, w.ln1g, w.ln1b, w.eps);
  Vec x1 = mha(la, na, lb, nb, d, w.heads, w.cross);
  for (std::size_t i = 0; i < x1.size(); ++i) x1[i] += a[i];
  const Vec l2 = layer_norm(x1, na, d, w.ln2g, w.ln2b, w.eps);
  Vec x2 = mha(l2, na, l2, na, d, w.heads, w.self);
  for (std::size_t i = 0; i < x2.size(); ++i) x2[i] += x1[i];
  const Vec l3 = layer_norm(x2, na, d, w.ln3g, w.ln3b, w.eps);
  Vec h = affine(l3, na, d, w.w1, w.hidden, w.b1);
  for (double& v : h) v = gelu(v);
  Vec out = affine(h, na, w.hidden, w.w2, d, w.b2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += x2[i];
  return out;
}

}  // namespace ref
