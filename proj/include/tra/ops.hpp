#pragma once

#include <cmath>
#include <cstring>
#include <string>

#include "tra/blas.hpp"
#include "tra/tensor.hpp"

// Dense op library backing the fixed architecture. Every op either wires a
// backward closure onto the tape or is explicitly marked non-differentiable.
// GEMMs go through blas; the remaining inner loops are written in axpy form
// (no scalar reductions) so the compiler can vectorise them without
// reassociation licence.

namespace tra {

namespace detail {

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: a [.., m, k] x b [k, n], batched over a's leading dims. The weight
// matrix is shared across the batch, which is the only batched case the
// architecture needs.
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape.size() < 2 || b.shape.size() != 2)
    throw ConfigError("matmul: need a[..,m,k] and b[k,n], got " + shape_str(a.shape) + " x " +
                      shape_str(b.shape));
  const int k = a.shape.back();
  const int n = b.shape[1];
  if (b.shape[0] != k)
    throw ConfigError("matmul: inner extents disagree, " + shape_str(a.shape) + " x " +
                      shape_str(b.shape));
  const int m = static_cast<int>(a.numel() / k);

  std::vector<int> out_shape = a.shape;
  out_shape.back() = n;
  TensorT<T> out = TensorT<T>::zeros(out_shape);
  detail::gemm(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0), out.ptr(), n);

  attach_node<T>(out, "matmul", {a, b}, [m, k, n](TensorT<T>& o) {
    TensorT<T>& pa = o.node->parents[0];
    TensorT<T>& pb = o.node->parents[1];
    const T* g = o.grad->data();
    if (pa.requires_grad)
      detail::gemm(false, true, m, k, n, T(1), g, n, pb.ptr(), n, T(1), pa.gptr(), k);
    if (pb.requires_grad)
      detail::gemm(true, false, k, n, m, T(1), pa.ptr(), k, g, n, T(1), pb.gptr(), n);
  });
  return out;
}

// a [.., m, k] x b[n, k]^T -> [.., m, n]; lets the output head share the
// embedding table when embeddings are tied.
template <class T>
TensorT<T> matmul_t(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape.size() < 2 || b.shape.size() != 2 || b.shape[1] != a.shape.back())
    throw ConfigError("matmul_t: need a[..,m,k] and b[n,k], got " + shape_str(a.shape) + " x " +
                      shape_str(b.shape));
  const int k = a.shape.back();
  const int n = b.shape[0];
  const int m = static_cast<int>(a.numel() / k);
  std::vector<int> out_shape = a.shape;
  out_shape.back() = n;
  TensorT<T> out = TensorT<T>::zeros(out_shape);
  detail::gemm(false, true, m, n, k, T(1), a.ptr(), k, b.ptr(), k, T(0), out.ptr(), n);
  attach_node<T>(out, "matmul_t", {a, b}, [m, k, n](TensorT<T>& o) {
    TensorT<T>& pa = o.node->parents[0];
    TensorT<T>& pb = o.node->parents[1];
    const T* g = o.grad->data();
    if (pa.requires_grad)
      detail::gemm(false, false, m, k, n, T(1), g, n, pb.ptr(), k, T(1), pa.gptr(), k);
    if (pb.requires_grad)
      detail::gemm(true, false, n, k, m, T(1), g, n, pa.ptr(), k, T(1), pb.gptr(), k);
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  attach_node<T>(out, "add", {a, b}, [n](TensorT<T>& o) {
    for (int s = 0; s < 2; ++s) {
      TensorT<T>& p = o.node->parents[s];
      if (!p.requires_grad) continue;
      T* g = p.gptr();
      const T* og = o.grad->data();
      for (std::size_t i = 0; i < n; ++i) g[i] += og[i];
    }
  });
  return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  attach_node<T>(out, "mul", {a, b}, [n](TensorT<T>& o) {
    TensorT<T>& pa2 = o.node->parents[0];
    TensorT<T>& pb2 = o.node->parents[1];
    const T* og = o.grad->data();
    if (pa2.requires_grad) {
      T* g = pa2.gptr();
      const T* x = pb2.ptr();
      for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * x[i];
    }
    if (pb2.requires_grad) {
      T* g = pb2.gptr();
      const T* x = pa2.ptr();
      for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * x[i];
    }
  });
  return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  attach_node<T>(out, "scale", {a}, [n, c](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * c;
  });
  return out;
}

// a [.., d] + bias [d], broadcast over leading dims.
template <class T>
TensorT<T> add_bias(const TensorT<T>& a, const TensorT<T>& bias) {
  if (bias.shape.size() != 1 || bias.shape[0] != a.shape.back())
    throw ConfigError("add_bias: bias " + shape_str(bias.shape) + " vs input " +
                      shape_str(a.shape));
  const int d = bias.shape[0];
  const std::size_t rows = a.numel() / d;
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = bias.ptr();
  T* po = out.ptr();
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j) po[r * d + j] = pa[r * d + j] + pb[j];
  attach_node<T>(out, "add_bias", {a, bias}, [rows, d](TensorT<T>& o) {
    TensorT<T>& pa2 = o.node->parents[0];
    TensorT<T>& pb2 = o.node->parents[1];
    const T* og = o.grad->data();
    if (pa2.requires_grad) {
      T* g = pa2.gptr();
      for (std::size_t i = 0; i < rows * d; ++i) g[i] += og[i];
    }
    if (pb2.requires_grad) {
      T* g = pb2.gptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j) g[j] += og[r * d + j];
    }
  });
  return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  attach_node<T>(out, "relu", {a}, [n](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    const T* x = p.ptr();
    for (std::size_t i = 0; i < n; ++i) g[i] += x[i] > T(0) ? og[i] : T(0);
  });
  return out;
}

namespace detail {
template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
// log(sigmoid(x)) without forming sigmoid first; exact at large |x|.
template <class T>
T stable_logsigmoid(T x) {
  if (x >= T(0)) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}
}  // namespace detail

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = detail::stable_sigmoid(pa[i]);
  attach_node<T>(out, "sigmoid", {a}, [n](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    const T* y = o.ptr();
    for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * y[i] * (T(1) - y[i]);
  });
  return out;
}

template <class T>
TensorT<T> logsigmoid(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = detail::stable_logsigmoid(pa[i]);
  attach_node<T>(out, "logsigmoid", {a}, [n](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    const T* x = p.ptr();
    // d/dx log sigmoid(x) = sigmoid(-x)
    for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * detail::stable_sigmoid(-x[i]);
  });
  return out;
}

// silu(x) = x * sigmoid(x); the SwiGLU gate nonlinearity.
template <class T>
TensorT<T> silu(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * detail::stable_sigmoid(pa[i]);
  attach_node<T>(out, "silu", {a}, [n](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    const T* x = p.ptr();
    for (std::size_t i = 0; i < n; ++i) {
      const T s = detail::stable_sigmoid(x[i]);
      g[i] += og[i] * (s + x[i] * s * (T(1) - s));
    }
  });
  return out;
}

template <class T>
TensorT<T> exp_op(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::exp(pa[i]);
  attach_node<T>(out, "exp", {a}, [n](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    const T* y = o.ptr();
    for (std::size_t i = 0; i < n; ++i) g[i] += og[i] * y[i];
  });
  return out;
}

template <class T>
TensorT<T> log_op(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pa[i] > T(0)))
      throw NumericError("log: non-positive input " + std::to_string(static_cast<double>(pa[i])) +
                         " at flat index " + std::to_string(i) + " of tensor " +
                         shape_str(a.shape));
    po[i] = std::log(pa[i]);
  }
  attach_node<T>(out, "log", {a}, [n](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    const T* x = p.ptr();
    for (std::size_t i = 0; i < n; ++i) g[i] += og[i] / x[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// softmax over the last dim. Max-subtraction keeps the -1e11 removal sentinel
// harmless: exp(sentinel - max) underflows to exactly zero.
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> softmax_lastdim(const TensorT<T>& a) {
  const int d = a.shape.back();
  if (d < 1) throw ConfigError("softmax_lastdim: empty last dim");
  const std::size_t rows = a.numel() / d;
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = pa + r * d;
    T* y = po + r * d;
    T mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < d; ++j) y[j] *= inv;
  }
  attach_node<T>(out, "softmax", {a}, [rows, d](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    const T* y = o.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y + r * d;
      const T* gr = og + r * d;
      T dot = T(0);
      for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
      T* out_g = g + r * d;
      for (int j = 0; j < d; ++j) out_g[j] += yr[j] * (gr[j] - dot);
    }
  });
  return out;
}

// out[.., j] = sum_{k >= j} x[.., k]; backward is the forward cumsum.
template <class T>
TensorT<T> reversed_cumsum_lastdim(const TensorT<T>& a) {
  const int d = a.shape.back();
  const std::size_t rows = a.numel() / d;
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = pa + r * d;
    T* y = po + r * d;
    T acc = T(0);
    for (int j = d - 1; j >= 0; --j) {
      acc += x[j];
      y[j] = acc;
    }
  }
  attach_node<T>(out, "reversed_cumsum", {a}, [rows, d](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = og + r * d;
      T* pr = g + r * d;
      T acc = T(0);
      for (int j = 0; j < d; ++j) {
        acc += gr[j];
        pr[j] += acc;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// RMS normalisation over the last dim: x / sqrt(mean(x^2) + eps), optionally
// scaled by a learned gain.
// ---------------------------------------------------------------------------
inline constexpr double kRmsEps = 1e-6;

template <class T>
TensorT<T> rmsnorm(const TensorT<T>& a, const TensorT<T>* gain = nullptr) {
  const int d = a.shape.back();
  if (d < 1) throw ConfigError("rmsnorm: empty last dim");
  if (gain && (gain->shape.size() != 1 || gain->shape[0] != d))
    throw ConfigError("rmsnorm: gain shape " + shape_str(gain->shape));
  const std::size_t rows = a.numel() / d;
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pg = gain ? gain->ptr() : nullptr;
  T* po = out.ptr();
  const T inv_d = T(1) / static_cast<T>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = pa + r * d;
    T* y = po + r * d;
    T ss = T(0);
    for (int j = 0; j < d; ++j) ss += x[j] * x[j];
    const T inv_rms = T(1) / std::sqrt(ss * inv_d + static_cast<T>(kRmsEps));
    if (pg)
      for (int j = 0; j < d; ++j) y[j] = x[j] * inv_rms * pg[j];
    else
      for (int j = 0; j < d; ++j) y[j] = x[j] * inv_rms;
  }

  std::vector<TensorT<T>> parents = {a};
  if (gain) parents.push_back(*gain);
  const bool has_gain = gain != nullptr;
  attach_node<T>(out, "rmsnorm", std::move(parents), [rows, d, inv_d, has_gain](TensorT<T>& o) {
    TensorT<T>& px = o.node->parents[0];
    TensorT<T>* pgain = has_gain ? &o.node->parents[1] : nullptr;
    const T* og = o.grad->data();
    const T* x = px.ptr();
    const T* gv = pgain ? pgain->ptr() : nullptr;
    T* gx = px.requires_grad ? px.gptr() : nullptr;
    T* gg = (pgain && pgain->requires_grad) ? pgain->gptr() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x + r * d;
      const T* gr = og + r * d;
      T ss = T(0);
      for (int j = 0; j < d; ++j) ss += xr[j] * xr[j];
      const T inv_rms = T(1) / std::sqrt(ss * inv_d + static_cast<T>(kRmsEps));
      if (gg) {
        for (int j = 0; j < d; ++j) gg[j] += gr[j] * xr[j] * inv_rms;
      }
      if (gx) {
        // d(x_j * r)/dx_m with r = (mean x^2 + eps)^{-1/2}:
        //   r * delta_jm - x_j x_m r^3 / d
        T dot = T(0);
        if (gv)
          for (int j = 0; j < d; ++j) dot += gr[j] * gv[j] * xr[j];
        else
          for (int j = 0; j < d; ++j) dot += gr[j] * xr[j];
        const T c = dot * inv_rms * inv_rms * inv_rms * inv_d;
        T* gxr = gx + r * d;
        if (gv)
          for (int j = 0; j < d; ++j) gxr[j] += gr[j] * gv[j] * inv_rms - xr[j] * c;
        else
          for (int j = 0; j < d; ++j) gxr[j] += gr[j] * inv_rms - xr[j] * c;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Inverted dropout with a hash-derived mask: the mask is a pure function of
// (seed, site, flat index), so backward replays it without storage and the
// draw is independent of evaluation order.
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> dropout(const TensorT<T>& a, double p, bool training, uint64_t seed, uint64_t site) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return a;
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const std::size_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  const float keep = 1.0f - static_cast<float>(p);
  const T scale_up = T(1) / static_cast<T>(keep);
  for (std::size_t i = 0; i < n; ++i)
    po[i] = hash_uniform(seed, site, i) < keep ? pa[i] * scale_up : T(0);
  attach_node<T>(out, "dropout", {a}, [n, keep, scale_up, seed, site](TensorT<T>& o) {
    TensorT<T>& p2 = o.node->parents[0];
    if (!p2.requires_grad) return;
    T* g = p2.gptr();
    const T* og = o.grad->data();
    for (std::size_t i = 0; i < n; ++i)
      if (hash_uniform(seed, site, i) < keep) g[i] += og[i] * scale_up;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup: rows of `table` gathered by token id.
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> embedding(const TensorT<T>& table, const std::vector<int>& ids,
                     std::vector<int> out_lead_shape) {
  if (table.shape.size() != 2) throw ConfigError("embedding: table must be 2-D");
  const int vocab = table.shape[0];
  const int d = table.shape[1];
  if (shape_numel(out_lead_shape) != ids.size())
    throw ConfigError("embedding: id count does not match requested shape");
  std::vector<int> out_shape = std::move(out_lead_shape);
  out_shape.push_back(d);
  TensorT<T> out = TensorT<T>::zeros(out_shape);
  const T* pt = table.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= vocab)
      throw ConfigError("embedding: id " + std::to_string(id) + " outside vocab " +
                        std::to_string(vocab));
    std::memcpy(po + i * d, pt + static_cast<std::size_t>(id) * d, sizeof(T) * d);
  }
  attach_node<T>(out, "embedding", {table}, [ids, d](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      T* row = g + static_cast<std::size_t>(ids[i]) * d;
      const T* orow = og + i * d;
      for (int j = 0; j < d; ++j) row[j] += orow[j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// head split / merge between [b, s, h*d] and [b, h, s, d]
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> split_heads(const TensorT<T>& x, int n_heads) {
  if (x.shape.size() != 3) throw ConfigError("split_heads: expected [b,s,E]");
  const int b = x.shape[0], s = x.shape[1], e = x.shape[2];
  if (e % n_heads != 0) throw ConfigError("split_heads: E not divisible by heads");
  const int d = e / n_heads;
  TensorT<T> out = TensorT<T>::zeros({b, n_heads, s, d});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int bi = 0; bi < b; ++bi)
    for (int si = 0; si < s; ++si)
      for (int h = 0; h < n_heads; ++h)
        std::memcpy(po + (((static_cast<std::size_t>(bi) * n_heads + h) * s + si) * d),
                    px + ((static_cast<std::size_t>(bi) * s + si) * e + static_cast<std::size_t>(h) * d),
                    sizeof(T) * d);
  attach_node<T>(out, "split_heads", {x}, [b, s, e, n_heads, d](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    for (int bi = 0; bi < b; ++bi)
      for (int si = 0; si < s; ++si)
        for (int h = 0; h < n_heads; ++h) {
          const T* src = og + (((static_cast<std::size_t>(bi) * n_heads + h) * s + si) * d);
          T* dst = g + ((static_cast<std::size_t>(bi) * s + si) * e + static_cast<std::size_t>(h) * d);
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
  });
  return out;
}

template <class T>
TensorT<T> merge_heads(const TensorT<T>& x) {
  if (x.shape.size() != 4) throw ConfigError("merge_heads: expected [b,h,s,d]");
  const int b = x.shape[0], h = x.shape[1], s = x.shape[2], d = x.shape[3];
  const int e = h * d;
  TensorT<T> out = TensorT<T>::zeros({b, s, e});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int bi = 0; bi < b; ++bi)
    for (int hi = 0; hi < h; ++hi)
      for (int si = 0; si < s; ++si)
        std::memcpy(po + ((static_cast<std::size_t>(bi) * s + si) * e + static_cast<std::size_t>(hi) * d),
                    px + (((static_cast<std::size_t>(bi) * h + hi) * s + si) * d), sizeof(T) * d);
  attach_node<T>(out, "merge_heads", {x}, [b, h, s, d, e](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    for (int bi = 0; bi < b; ++bi)
      for (int hi = 0; hi < h; ++hi)
        for (int si = 0; si < s; ++si) {
          const T* src = og + ((static_cast<std::size_t>(bi) * s + si) * e + static_cast<std::size_t>(hi) * d);
          T* dst = g + (((static_cast<std::size_t>(bi) * h + hi) * s + si) * d);
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
  });
  return out;
}

// [b, s, h] -> [b, h, s]; used for the per-head forget logits.
template <class T>
TensorT<T> transpose_last2(const TensorT<T>& x) {
  if (x.shape.size() != 3) throw ConfigError("transpose_last2: expected 3-D");
  const int b = x.shape[0], s = x.shape[1], h = x.shape[2];
  TensorT<T> out = TensorT<T>::zeros({b, h, s});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int bi = 0; bi < b; ++bi)
    for (int si = 0; si < s; ++si)
      for (int hi = 0; hi < h; ++hi)
        po[(static_cast<std::size_t>(bi) * h + hi) * s + si] =
            px[(static_cast<std::size_t>(bi) * s + si) * h + hi];
  attach_node<T>(out, "transpose_last2", {x}, [b, s, h](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T* og = o.grad->data();
    for (int bi = 0; bi < b; ++bi)
      for (int si = 0; si < s; ++si)
        for (int hi = 0; hi < h; ++hi)
          g[(static_cast<std::size_t>(bi) * s + si) * h + hi] +=
              og[(static_cast<std::size_t>(bi) * h + hi) * s + si];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Masked mean cross-entropy over [b, s, v] logits. Targets are token ids per
// position; only positions with mask != 0 contribute.
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets,
                         const std::vector<uint8_t>& loss_mask) {
  if (logits.shape.size() != 3) throw ConfigError("cross_entropy: logits must be [b,s,v]");
  const int v = logits.shape[2];
  const std::size_t rows = logits.numel() / v;
  if (targets.size() != rows || loss_mask.size() != rows)
    throw ConfigError("cross_entropy: targets/mask size mismatch");
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r)
    if (loss_mask[r]) ++count;
  if (count == 0) throw ConfigError("cross_entropy: empty loss mask");

  const T* pl = logits.ptr();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!loss_mask[r]) continue;
    const int t = targets[r];
    if (t < 0 || t >= v) throw ConfigError("cross_entropy: target id outside vocab");
    const T* x = pl + r * v;
    T mx = x[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int j = 0; j < v; ++j) sum += std::exp(x[j] - mx);
    total += static_cast<double>(std::log(sum) + mx - x[t]);
  }
  TensorT<T> out = TensorT<T>::from({1}, {static_cast<T>(total / static_cast<double>(count))});

  attach_node<T>(out, "cross_entropy", {logits},
                 [rows, v, targets, loss_mask, count](TensorT<T>& o) {
                   TensorT<T>& p = o.node->parents[0];
                   if (!p.requires_grad) return;
                   const T go = (*o.grad)[0] / static_cast<T>(count);
                   T* g = p.gptr();
                   const T* x0 = p.ptr();
                   for (std::size_t r = 0; r < rows; ++r) {
                     if (!loss_mask[r]) continue;
                     const T* x = x0 + r * v;
                     T* gr = g + r * v;
                     T mx = x[0];
                     for (int j = 1; j < v; ++j) mx = std::max(mx, x[j]);
                     T sum = T(0);
                     for (int j = 0; j < v; ++j) sum += std::exp(x[j] - mx);
                     const T inv = T(1) / sum;
                     for (int j = 0; j < v; ++j) gr[j] += go * std::exp(x[j] - mx) * inv;
                     gr[targets[r]] -= go;
                   }
                 });
  return out;
}

template <class T>
TensorT<T> sum_all(const TensorT<T>& a) {
  const std::size_t n = a.numel();
  const T* pa = a.ptr();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += static_cast<double>(pa[i]);
  TensorT<T> out = TensorT<T>::from({1}, {static_cast<T>(total)});
  attach_node<T>(out, "sum_all", {a}, [n](TensorT<T>& o) {
    TensorT<T>& p = o.node->parents[0];
    if (!p.requires_grad) return;
    T* g = p.gptr();
    const T go = (*o.grad)[0];
    for (std::size_t i = 0; i < n; ++i) g[i] += go;
  });
  return out;
}

}  // namespace tra
