#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "cmota/diag.hpp"
#include "cmota/rng.hpp"
#include "cmota/tensor.hpp"

namespace cmota::nn {

// ---------------------------------------------------------------------------
// raw kernels (row-major, accumulate into C)
// ---------------------------------------------------------------------------
namespace detail {

// Fixed-order vectorizable reduction: lane accumulators keep the summation
// order deterministic (no -ffast-math reassociation needed).
template <typename T>
T dot(const T* __restrict__ a, const T* __restrict__ b, int k) {
  constexpr int L = 8;
  T acc[L] = {};
  int p = 0;
  for (; p + L <= k; p += L)
    for (int l = 0; l < L; ++l) acc[l] += a[p + l] * b[p + l];
  T tail = T(0);
  for (; p < k; ++p) tail += a[p] * b[p];
  T total = tail;
  for (int l = 0; l < L; ++l) total += acc[l];
  return total;
}

template <typename T>
void axpy(T alpha, const T* __restrict__ x, T* __restrict__ y, int n) {
  for (int j = 0; j < n; ++j) y[j] += alpha * x[j];
}

// Register-tiled c[m x n] += a[m x k] * b[k x n]: output tiles stay in
// registers across the whole k loop.
template <typename T>
void mm_nn(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, int m, int k, int n) {
  constexpr int JT = 32;
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    int j0 = 0;
    for (; j0 + JT <= n; j0 += JT) {
      T acc[JT];
      for (int j = 0; j < JT; ++j) acc[j] = crow[j0 + j];
      for (int p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + static_cast<size_t>(p) * n + j0;
        for (int j = 0; j < JT; ++j) acc[j] += av * brow[j];
      }
      for (int j = 0; j < JT; ++j) crow[j0 + j] = acc[j];
    }
    if (j0 < n) {
      for (int p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T(0)) continue;
        const T* brow = b + static_cast<size_t>(p) * n;
        for (int j = j0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// c[m x n] += a[m x k] * b^T, b stored [n x k]
template <typename T>
void mm_nt(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] += dot(arow, b + static_cast<size_t>(j) * k, k);
  }
}

// c[k x n] += a^T * b, a stored [m x k], b stored [m x n]
template <typename T>
void mm_tn(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, int m, int k, int n) {
  constexpr int JT = 32;
  for (int j = 0; j < k; ++j) {
    T* crow = c + static_cast<size_t>(j) * n;
    int p0 = 0;
    for (; p0 + JT <= n; p0 += JT) {
      T acc[JT];
      for (int p = 0; p < JT; ++p) acc[p] = crow[p0 + p];
      for (int i = 0; i < m; ++i) {
        const T av = a[static_cast<size_t>(i) * k + j];
        const T* brow = b + static_cast<size_t>(i) * n + p0;
        for (int p = 0; p < JT; ++p) acc[p] += av * brow[p];
      }
      for (int p = 0; p < JT; ++p) crow[p0 + p] = acc[p];
    }
    if (p0 < n) {
      for (int i = 0; i < m; ++i) {
        const T av = a[static_cast<size_t>(i) * k + j];
        if (av == T(0)) continue;
        const T* brow = b + static_cast<size_t>(i) * n;
        for (int p = p0; p < n; ++p) crow[p] += av * brow[p];
      }
    }
  }
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2) throw DimensionError(std::string(op) + ": expected 2-D, got " + shape_str(t.shape));
}

}  // namespace detail

// Boolean mask over a 2-D slab; rows == 1 broadcasts across all rows.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> keep;

  static Mask all(int r, int c, bool value = true) {
    Mask m;
    m.rows = r;
    m.cols = c;
    m.keep.assign(static_cast<size_t>(r) * c, value ? 1 : 0);
    return m;
  }
  static Mask row_vector(std::vector<uint8_t> v) {
    Mask m;
    m.rows = 1;
    m.cols = static_cast<int>(v.size());
    m.keep = std::move(v);
    return m;
  }
  uint8_t& at(int i, int j) { return keep[static_cast<size_t>(i) * cols + j]; }
  bool get(int i, int j) const { return keep[static_cast<size_t>(i % rows) * cols + j] != 0; }
};

// ---------------------------------------------------------------------------
// elementwise & structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw DimensionError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  check_finite(out, "add");
  attach<T>(out, "add", {a, b}, [n](Node<T>& nd) {
    for (size_t i = 0; i < n; ++i) {
      if (nd.pneeds(0)) nd.pgrad(0)[i] += nd.og()[i];
      if (nd.pneeds(1)) nd.pgrad(1)[i] += nd.og()[i];
    }
  });
  return out;
}

// out = a + alpha * b
template <typename T>
Tensor<T> add_scaled(const Tensor<T>& a, T alpha, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw DimensionError("add_scaled: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + alpha * (*b.data)[i];
  check_finite(out, "add_scaled");
  attach<T>(out, "add_scaled", {a, b}, [n, alpha](Node<T>& nd) {
    for (size_t i = 0; i < n; ++i) {
      if (nd.pneeds(0)) nd.pgrad(0)[i] += nd.og()[i];
      if (nd.pneeds(1)) nd.pgrad(1)[i] += alpha * nd.og()[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw DimensionError("mul: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  check_finite(out, "mul");
  attach<T>(out, "mul", {a, b}, [n](Node<T>& nd) {
    for (size_t i = 0; i < n; ++i) {
      if (nd.pneeds(0)) nd.pgrad(0)[i] += nd.og()[i] * nd.pdata(1)[i];
      if (nd.pneeds(1)) nd.pgrad(1)[i] += nd.og()[i] * nd.pdata(0)[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * c;
  check_finite(out, "scale");
  attach<T>(out, "scale", {a}, [n, c](Node<T>& nd) {
    if (nd.pneeds(0))
      for (size_t i = 0; i < n; ++i) nd.pgrad(0)[i] += nd.og()[i] * c;
  });
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (const T v : *a.data) acc += v;
  (*out.data)[0] = acc;
  check_finite(out, "sum_all");
  const size_t n = a.numel();
  attach<T>(out, "sum_all", {a}, [n](Node<T>& nd) {
    if (nd.pneeds(0))
      for (size_t i = 0; i < n; ++i) nd.pgrad(0)[i] += nd.og()[0];
  });
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty list");
  const int c = parts[0].cols();
  int r = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.cols() != c) throw DimensionError("concat_rows: column mismatch");
    r += p.rows();
  }
  Tensor<T> out = Tensor<T>::zeros({r, c});
  int row = 0;
  for (const auto& p : parts) {
    std::copy(p.data->begin(), p.data->end(), out.data->begin() + static_cast<size_t>(row) * c);
    row += p.rows();
  }
  attach<T>(out, "concat_rows", parts, [c](Node<T>& nd) {
    size_t off = 0;
    for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
      const size_t len = nd.parents[pi].numel();
      if (nd.pneeds(pi))
        for (size_t i = 0; i < len; ++i) nd.pgrad(pi)[i] += nd.og()[off + i];
      off += len;
    }
    (void)c;
  });
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
  detail::require_2d(a, "slice_rows");
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw DimensionError("slice_rows: bad range");
  const int c = a.cols();
  Tensor<T> out = Tensor<T>::zeros({r1 - r0, c});
  std::copy(a.data->begin() + static_cast<size_t>(r0) * c, a.data->begin() + static_cast<size_t>(r1) * c,
            out.data->begin());
  attach<T>(out, "slice_rows", {a}, [r0, c](Node<T>& nd) {
    if (!nd.pneeds(0)) return;
    const size_t len = nd.og().size();
    for (size_t i = 0; i < len; ++i) nd.pgrad(0)[static_cast<size_t>(r0) * c + i] += nd.og()[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape) + " * " + shape_str(b.shape));
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::mm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  check_finite(out, "matmul");
  attach<T>(out, "matmul", {a, b}, [m, k, n](Node<T>& nd) {
    if (nd.pneeds(0)) detail::mm_nt(nd.og().data(), nd.pdata(1).data(), nd.pgrad(0).data(), m, n, k);
    if (nd.pneeds(1)) detail::mm_tn(nd.pdata(0).data(), nd.og().data(), nd.pgrad(1).data(), m, k, n);
  });
  return out;
}

// out = x * w + bias (bias broadcast across rows; pass undefined bias to skip)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  detail::require_2d(x, "linear");
  detail::require_2d(w, "linear");
  const int m = x.rows(), k = x.cols(), n = w.cols();
  if (w.rows() != k) throw DimensionError("linear: inner dimensions disagree");
  const bool has_bias = bias.defined();
  if (has_bias && static_cast<int>(bias.numel()) != n) throw DimensionError("linear: bias size mismatch");
  Tensor<T> out = Tensor<T>::zeros({m, n});
  if (has_bias)
    for (int i = 0; i < m; ++i)
      std::copy(bias.data->begin(), bias.data->end(), out.data->begin() + static_cast<size_t>(i) * n);
  detail::mm_nn(x.ptr(), w.ptr(), out.ptr(), m, k, n);
  check_finite(out, "linear");
  std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, bias} : std::vector<Tensor<T>>{x, w};
  attach<T>(out, "linear", std::move(parents), [m, k, n, has_bias](Node<T>& nd) {
    if (nd.pneeds(0)) detail::mm_nt(nd.og().data(), nd.pdata(1).data(), nd.pgrad(0).data(), m, n, k);
    if (nd.pneeds(1)) detail::mm_tn(nd.pdata(0).data(), nd.og().data(), nd.pgrad(1).data(), m, k, n);
    if (has_bias && nd.pneeds(2)) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) nd.pgrad(2)[j] += nd.og()[static_cast<size_t>(i) * n + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = T(1) / (T(1) + std::exp(-(*a.data)[i]));
  check_finite(out, "sigmoid");
  attach<T>(out, "sigmoid", {a}, [n, y = out.data](Node<T>& nd) {
    if (!nd.pneeds(0)) return;
    for (size_t i = 0; i < n; ++i) {
      const T s = (*y)[i];
      nd.pgrad(0)[i] += nd.og()[i] * s * (T(1) - s);
    }
  });
  return out;
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = std::tanh((*a.data)[i]);
  check_finite(out, "tanh");
  attach<T>(out, "tanh", {a}, [n, y = out.data](Node<T>& nd) {
    if (!nd.pneeds(0)) return;
    for (size_t i = 0; i < n; ++i) {
      const T t = (*y)[i];
      nd.pgrad(0)[i] += nd.og()[i] * (T(1) - t * t);
    }
  });
  return out;
}

// x * sigmoid(x); the FFN activation (smooth everywhere, which keeps central
// finite differences well behaved in gradient checks).
template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) {
    const T x = (*a.data)[i];
    (*out.data)[i] = x / (T(1) + std::exp(-x));
  }
  check_finite(out, "silu");
  attach<T>(out, "silu", {a}, [n](Node<T>& nd) {
    if (!nd.pneeds(0)) return;
    for (size_t i = 0; i < n; ++i) {
      const T x = nd.pdata(0)[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      nd.pgrad(0)[i] += nd.og()[i] * s * (T(1) + x * (T(1) - s));
    }
  });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const size_t n = a.numel();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  for (size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>((*a.data)[i]);
    (*out.data)[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  check_finite(out, "gelu");
  attach<T>(out, "gelu", {a}, [n](Node<T>& nd) {
    if (!nd.pneeds(0)) return;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    for (size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(nd.pdata(0)[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      nd.pgrad(0)[i] += nd.og()[i] * static_cast<T>(cdf + x * pdf);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// layer norm (row-wise)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  detail::require_2d(x, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(gain.numel()) != n || static_cast<int>(bias.numel()) != n)
    throw DimensionError("layer_norm: gain/bias size mismatch");
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  std::vector<T> xhat(static_cast<size_t>(m) * n);
  std::vector<T> inv_sigma(m);
  for (int i = 0; i < m; ++i) {
    const T* row = x.ptr() + static_cast<size_t>(i) * n;
    T mean = T(0);
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[i] = is;
    T* orow = out.ptr() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T xh = (row[j] - mean) * is;
      xhat[static_cast<size_t>(i) * n + j] = xh;
      orow[j] = xh * (*gain.data)[j] + (*bias.data)[j];
    }
  }
  check_finite(out, "layer_norm");
  Node<T>* nd = attach<T>(out, "layer_norm", {x, gain, bias}, [m, n](Node<T>& node) {
    const std::vector<T>& xh = node.saved[0];
    const std::vector<T>& is = node.saved[1];
    for (int i = 0; i < m; ++i) {
      const size_t base = static_cast<size_t>(i) * n;
      T sum_dy = T(0), sum_dy_xh = T(0);
      for (int j = 0; j < n; ++j) {
        const T dy = node.og()[base + j] * node.pdata(1)[j];  // through gain
        sum_dy += dy;
        sum_dy_xh += dy * xh[base + j];
      }
      for (int j = 0; j < n; ++j) {
        const T dy = node.og()[base + j] * node.pdata(1)[j];
        if (node.pneeds(0))
          node.pgrad(0)[base + j] += is[i] * (dy - sum_dy / T(n) - xh[base + j] * sum_dy_xh / T(n));
        if (node.pneeds(1)) node.pgrad(1)[j] += node.og()[base + j] * xh[base + j];
        if (node.pneeds(2)) node.pgrad(2)[j] += node.og()[base + j];
      }
    }
  });
  if (nd) {
    nd->saved.push_back(std::move(xhat));
    nd->saved.push_back(std::move(inv_sigma));
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax & attention
// ---------------------------------------------------------------------------

namespace detail {

// Row softmax with max-subtraction. Masked columns get exactly zero weight; a
// fully masked row falls back to uniform weights over the whole row and is
// counted in diagnostics. Returns per-row degenerate flags.
template <typename T>
std::vector<uint8_t> row_softmax(const T* logits, T* probs, int t_q, int t_k, const Mask* mask,
                                 int mask_row_offset = 0) {
  std::vector<uint8_t> degenerate(static_cast<size_t>(t_q), 0);
  for (int i = 0; i < t_q; ++i) {
    const T* lrow = logits + static_cast<size_t>(i) * t_k;
    T* prow = probs + static_cast<size_t>(i) * t_k;
    T mx = -std::numeric_limits<T>::infinity();
    int kept = 0;
    for (int j = 0; j < t_k; ++j) {
      const bool keep = !mask || mask->get(mask_row_offset + i, j);
      if (keep) {
        ++kept;
        mx = std::max(mx, lrow[j]);
      }
    }
    if (kept == 0) {
      for (int j = 0; j < t_k; ++j) prow[j] = T(1) / T(t_k);
      degenerate[static_cast<size_t>(i)] = 1;
      Diagnostics::degenerate_softmax_rows()++;
      warn("masked_softmax: fully masked row, falling back to uniform weights");
      continue;
    }
    T denom = T(0);
    for (int j = 0; j < t_k; ++j) {
      const bool keep = !mask || mask->get(mask_row_offset + i, j);
      if (keep) {
        prow[j] = std::exp(lrow[j] - mx);
        denom += prow[j];
      } else {
        prow[j] = T(0);
      }
    }
    for (int j = 0; j < t_k; ++j) prow[j] /= denom;
  }
  return degenerate;
}

}  // namespace detail

// Exp-normalisation along `axis` of a 2-D tensor (1 = rows, 0 = columns).
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, int axis = 1, const Mask* mask = nullptr) {
  detail::require_2d(x, "masked_softmax");
  if (axis != 0 && axis != 1) throw DimensionError("masked_softmax: axis must be 0 or 1");
  if (axis == 0) {
    // Transpose, reduce along rows, transpose back.
    const int m = x.rows(), n = x.cols();
    Tensor<T> xt = Tensor<T>::zeros({n, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) xt.at(j, i) = x.at(i, j);
    Mask mt;
    const Mask* mtp = nullptr;
    if (mask) {
      if (mask->cols == 1 && mask->rows == m) {
        std::vector<uint8_t> v(static_cast<size_t>(m));
        for (int j = 0; j < m; ++j) v[static_cast<size_t>(j)] = mask->keep[static_cast<size_t>(j)];
        mt = Mask::row_vector(std::move(v));
      } else {
        if (mask->cols != n || mask->rows != m) throw DimensionError("masked_softmax: mask not broadcastable");
        mt = Mask::all(n, m);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) mt.at(i, j) = mask->get(j, i) ? 1 : 0;
      }
      mtp = &mt;
    }
    Tensor<T> st = masked_softmax(xt, 1, mtp);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) = st.at(j, i);
    attach<T>(out, "masked_softmax_t", {st}, [m, n](Node<T>& nd) {
      if (!nd.pneeds(0)) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) nd.pgrad(0)[static_cast<size_t>(j) * m + i] += nd.og()[static_cast<size_t>(i) * n + j];
    });
    return out;
  }
  const int m = x.rows(), n = x.cols();
  if (mask && (mask->cols != n || (mask->rows != 1 && mask->rows != m)))
    throw DimensionError("masked_softmax: mask not broadcastable");
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  std::vector<uint8_t> degen = detail::row_softmax(x.ptr(), out.ptr(), m, n, mask);
  check_finite(out, "masked_softmax");
  Node<T>* nd = attach<T>(out, "masked_softmax", {x}, [m, n, y = out.data](Node<T>& node) {
    if (!node.pneeds(0)) return;
    const std::vector<T>& p = *y;
    for (int i = 0; i < m; ++i) {
      if (node.saved[0][static_cast<size_t>(i)] != 0) continue;  // uniform fallback: constant
      const size_t base = static_cast<size_t>(i) * n;
      T dot = T(0);
      for (int j = 0; j < n; ++j) dot += node.og()[base + j] * p[base + j];
      for (int j = 0; j < n; ++j) node.pgrad(0)[base + j] += p[base + j] * (node.og()[base + j] - dot);
    }
  });
  if (nd) {
    nd->saved.emplace_back(degen.begin(), degen.end());
  }
  return out;
}

// Records attention weights for offline inspection.
struct AttnRecord {
  int heads = 0, t_q = 0, t_k = 0;
  std::vector<double> w;  // [head][query][key]
  double get(int h, int i, int j) const {
    return w[(static_cast<size_t>(h) * t_q + i) * t_k + j];
  }
};

// Scaled dot-product attention over pre-projected q/k/v, split into `heads`
// column groups. Per-head scale is 1/sqrt(head_dim). Fully masked query rows
// fall back to uniform weights (treated as constants in the backward pass).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                               const Mask* mask = nullptr, AttnRecord* record = nullptr) {
  detail::require_2d(q, "attention");
  detail::require_2d(k, "attention");
  detail::require_2d(v, "attention");
  const int t_q = q.rows(), d = q.cols(), t_k = k.rows();
  if (t_k == 0 || k.rows() != v.rows()) throw DimensionError("attention: empty or mismatched key/value set");
  if (k.cols() != d) throw DimensionError("attention: query/key width mismatch");
  if (v.cols() != d) throw DimensionError("attention: value width mismatch");
  if (heads < 1 || d % heads != 0) throw DimensionError("attention: head count must divide width");
  if (mask && (mask->cols != t_k || (mask->rows != 1 && mask->rows != t_q)))
    throw DimensionError("attention: mask not broadcastable");
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Tensor<T> out = Tensor<T>::zeros({t_q, d});
  std::vector<T> weights(static_cast<size_t>(heads) * t_q * t_k);
  std::vector<T> logits(static_cast<size_t>(t_q) * t_k);
  std::vector<uint8_t> degen_all(static_cast<size_t>(heads) * t_q);

  for (int h = 0; h < heads; ++h) {
    const int c0 = h * dh;
    for (int i = 0; i < t_q; ++i) {
      const T* qrow = q.ptr() + static_cast<size_t>(i) * d + c0;
      for (int j = 0; j < t_k; ++j)
        logits[static_cast<size_t>(i) * t_k + j] =
            detail::dot(qrow, k.ptr() + static_cast<size_t>(j) * d + c0, dh) * scale;
    }
    T* w = weights.data() + static_cast<size_t>(h) * t_q * t_k;
    std::vector<uint8_t> degen = detail::row_softmax(logits.data(), w, t_q, t_k, mask);
    std::copy(degen.begin(), degen.end(), degen_all.begin() + static_cast<size_t>(h) * t_q);
    for (int i = 0; i < t_q; ++i) {
      T* orow = out.ptr() + static_cast<size_t>(i) * d + c0;
      const T* wrow = w + static_cast<size_t>(i) * t_k;
      for (int j = 0; j < t_k; ++j) {
        const T wij = wrow[j];
        if (wij == T(0)) continue;
        detail::axpy(wij, v.ptr() + static_cast<size_t>(j) * d + c0, orow, dh);
      }
    }
  }
  check_finite(out, "attention");

  if (record) {
    record->heads = heads;
    record->t_q = t_q;
    record->t_k = t_k;
    record->w.assign(weights.begin(), weights.end());
  }

  Node<T>* nd = attach<T>(out, "attention", {q, k, v}, [t_q, t_k, d, heads, dh, scale](Node<T>& node) {
    const std::vector<T>& w = node.saved[0];
    const std::vector<uint8_t> degen(node.saved[1].begin(), node.saved[1].end());
    std::vector<T> dw(static_cast<size_t>(t_q) * t_k);
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * dh;
      const T* wh = w.data() + static_cast<size_t>(h) * t_q * t_k;
      // dw = dout_h . v_h^T ; dv_h += w^T . dout_h
      for (int i = 0; i < t_q; ++i) {
        const T* grow = node.og().data() + static_cast<size_t>(i) * d + c0;
        for (int j = 0; j < t_k; ++j) {
          dw[static_cast<size_t>(i) * t_k + j] =
              detail::dot(grow, node.pdata(2).data() + static_cast<size_t>(j) * d + c0, dh);
          if (node.pneeds(2)) {
            const T wij = wh[static_cast<size_t>(i) * t_k + j];
            if (wij != T(0)) detail::axpy(wij, grow, node.pgrad(2).data() + static_cast<size_t>(j) * d + c0, dh);
          }
        }
      }
      // dlogits = w * (dw - rowdot(dw, w)); then into q and k
      for (int i = 0; i < t_q; ++i) {
        if (degen[static_cast<size_t>(h) * t_q + i] != 0) continue;  // uniform fallback row
        const size_t base = static_cast<size_t>(i) * t_k;
        T rowdot = T(0);
        for (int j = 0; j < t_k; ++j) rowdot += dw[base + j] * wh[base + j];
        for (int j = 0; j < t_k; ++j) {
          const T dl = wh[base + j] * (dw[base + j] - rowdot) * scale;
          if (dl == T(0)) continue;
          if (node.pneeds(0))
            detail::axpy(dl, node.pdata(1).data() + static_cast<size_t>(j) * d + c0,
                         node.pgrad(0).data() + static_cast<size_t>(i) * d + c0, dh);
          if (node.pneeds(1))
            detail::axpy(dl, node.pdata(0).data() + static_cast<size_t>(i) * d + c0,
                         node.pgrad(1).data() + static_cast<size_t>(j) * d + c0, dh);
        }
      }
    }
  });
  if (nd) {
    nd->saved.push_back(std::move(weights));
    nd->saved.emplace_back(degen_all.begin(), degen_all.end());
  }
  return out;
}

// Single-head attention: softmax(q k^T / sqrt(d)) v with optional key mask.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Mask* mask = nullptr,
                    AttnRecord* record = nullptr) {
  return multi_head_attention(q, k, v, 1, mask, record);
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

template <typename T>
struct GruParams {
  Tensor<T> w_update, u_update, b_update;
  Tensor<T> w_reset, u_reset, b_reset;
  Tensor<T> w_cand, u_cand, b_cand;

  void validate(int d) const {
    for (const Tensor<T>* w : {&w_update, &u_update, &w_reset, &u_reset, &w_cand, &u_cand})
      if (w->ndim() != 2 || w->rows() != d || w->cols() != d)
        throw DimensionError("gru: weight matrices must be d x d");
    for (const Tensor<T>* b : {&b_update, &b_reset, &b_cand})
      if (static_cast<int>(b->numel()) != d) throw DimensionError("gru: bias vectors must have length d");
  }
};

// z = sig(xWz + hUz + bz); r = sig(xWr + hUr + br);
// c = tanh(xWc + (r*h)Uc + bc); h' = (1-z)*h + z*c
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h, const GruParams<T>& p) {
  detail::require_2d(x, "gru_cell");
  if (!x.same_shape(h)) throw DimensionError("gru_cell: x and h must share shape");
  const int m = x.rows(), d = x.cols();
  p.validate(d);
  const size_t n = static_cast<size_t>(m) * d;

  auto affine = [&](const Tensor<T>& a, const Tensor<T>& w, const T* other, const Tensor<T>& u,
                    const Tensor<T>& b, std::vector<T>& dst) {
    dst.assign(n, T(0));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) dst[static_cast<size_t>(i) * d + j] = (*b.data)[j];
    detail::mm_nn(a.ptr(), w.ptr(), dst.data(), m, d, d);
    detail::mm_nn(other, u.ptr(), dst.data(), m, d, d);
  };

  std::vector<T> z(n), r(n), c(n), rh(n), tmp;
  affine(x, p.w_update, h.ptr(), p.u_update, p.b_update, tmp);
  for (size_t i = 0; i < n; ++i) z[i] = T(1) / (T(1) + std::exp(-tmp[i]));
  affine(x, p.w_reset, h.ptr(), p.u_reset, p.b_reset, tmp);
  for (size_t i = 0; i < n; ++i) r[i] = T(1) / (T(1) + std::exp(-tmp[i]));
  for (size_t i = 0; i < n; ++i) rh[i] = r[i] * (*h.data)[i];
  affine(x, p.w_cand, rh.data(), p.u_cand, p.b_cand, tmp);
  for (size_t i = 0; i < n; ++i) c[i] = std::tanh(tmp[i]);

  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (T(1) - z[i]) * (*h.data)[i] + z[i] * c[i];
  check_finite(out, "gru_cell");

  Node<T>* nd = attach<T>(
      out, "gru_cell",
      {x, h, p.w_update, p.u_update, p.b_update, p.w_reset, p.u_reset, p.b_reset, p.w_cand, p.u_cand, p.b_cand},
      [m, d, n](Node<T>& node) {
        enum { X = 0, H, WZ, UZ, BZ, WR, UR, BR, WC, UC, BC };
        const std::vector<T>&z = node.saved[0], &r = node.saved[1], &c = node.saved[2], &rh = node.saved[3];
        const std::vector<T>& hv = node.pdata(H);
        std::vector<T> da_z(n), da_r(n), da_c(n), dx(n, T(0)), dh(n, T(0)), drh(n);

        for (size_t i = 0; i < n; ++i) {
          const T g = node.og()[i];
          const T dz = g * (c[i] - hv[i]);
          const T dc = g * z[i];
          dh[i] += g * (T(1) - z[i]);
          da_c[i] = dc * (T(1) - c[i] * c[i]);
          da_z[i] = dz * z[i] * (T(1) - z[i]);
        }
        // through candidate branch: a_c = xWc + rh Uc + bc
        std::fill(drh.begin(), drh.end(), T(0));
        detail::mm_nt(da_c.data(), node.pdata(UC).data(), drh.data(), m, d, d);
        for (size_t i = 0; i < n; ++i) {
          const T dr = drh[i] * hv[i];
          dh[i] += drh[i] * r[i];
          da_r[i] = dr * r[i] * (T(1) - r[i]);
        }
        auto accumulate_affine = [&](int wi, int ui, int bi, const std::vector<T>& da, const T* other) {
          if (node.pneeds(wi)) detail::mm_tn(node.pdata(X).data(), da.data(), node.pgrad(wi).data(), m, d, d);
          if (node.pneeds(ui)) detail::mm_tn(other, da.data(), node.pgrad(ui).data(), m, d, d);
          if (node.pneeds(bi))
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < d; ++j) node.pgrad(bi)[j] += da[static_cast<size_t>(i) * d + j];
          if (node.pneeds(X)) detail::mm_nt(da.data(), node.pdata(wi).data(), dx.data(), m, d, d);
        };
        accumulate_affine(WC, UC, BC, da_c, rh.data());
        accumulate_affine(WR, UR, BR, da_r, hv.data());
        accumulate_affine(WZ, UZ, BZ, da_z, hv.data());
        // h paths through the Uz / Ur matmuls
        if (node.pneeds(H)) {
          detail::mm_nt(da_r.data(), node.pdata(UR).data(), dh.data(), m, d, d);
          detail::mm_nt(da_z.data(), node.pdata(UZ).data(), dh.data(), m, d, d);
          for (size_t i = 0; i < n; ++i) node.pgrad(H)[i] += dh[i];
        }
        if (node.pneeds(X))
          for (size_t i = 0; i < n; ++i) node.pgrad(X)[i] += dx[i];
      });
  if (nd) {
    nd->saved.push_back(std::move(z));
    nd->saved.push_back(std::move(r));
    nd->saved.push_back(std::move(c));
    nd->saved.push_back(std::move(rh));
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding & cross entropy
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& indices) {
  detail::require_2d(table, "embedding");
  const int v = table.rows(), d = table.cols();
  for (int ix : indices)
    if (ix < 0 || ix >= v)
      throw DimensionError("embedding: index " + std::to_string(ix) + " out of table range [0," + std::to_string(v) + ")");
  const int m = static_cast<int>(indices.size());
  if (m == 0) throw DimensionError("embedding: empty index list");
  Tensor<T> out = Tensor<T>::zeros({m, d});
  for (int i = 0; i < m; ++i)
    std::copy(table.data->begin() + static_cast<size_t>(indices[i]) * d,
              table.data->begin() + static_cast<size_t>(indices[i] + 1) * d,
              out.data->begin() + static_cast<size_t>(i) * d);
  Node<T>* nd = attach<T>(out, "embedding", {table}, [d](Node<T>& node) {
    if (!node.pneeds(0)) return;
    const std::vector<int>& ix = node.iargs;
    for (size_t i = 0; i < ix.size(); ++i)
      for (int j = 0; j < d; ++j)
        node.pgrad(0)[static_cast<size_t>(ix[i]) * d + j] += node.og()[i * d + j];
  });
  if (nd) nd->iargs = indices;
  return out;
}

enum class Reduction { Sum, Mean };

// Mean or sum of -log softmax(logits)[target] over rows.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        Reduction reduction = Reduction::Sum) {
  detail::require_2d(logits, "cross_entropy");
  const int m = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != m) throw DimensionError("cross_entropy: one target per row required");
  for (int t : targets)
    if (t < 0 || t >= v)
      throw DimensionError("cross_entropy: target " + std::to_string(t) + " out of range [0," + std::to_string(v) + ")");
  std::vector<T> lse(m);
  T total = T(0);
  for (int i = 0; i < m; ++i) {
    const T* row = logits.ptr() + static_cast<size_t>(i) * v;
    T mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T s = T(0);
    for (int j = 0; j < v; ++j) s += std::exp(row[j] - mx);
    lse[i] = mx + std::log(s);
    total += lse[i] - row[targets[i]];
  }
  if (reduction == Reduction::Mean) total /= T(m);
  Tensor<T> out = Tensor<T>::scalar(total);
  check_finite(out, "cross_entropy");
  Node<T>* nd = attach<T>(out, "cross_entropy", {logits}, [m, v, reduction](Node<T>& node) {
    if (!node.pneeds(0)) return;
    const std::vector<T>& lse = node.saved[0];
    const std::vector<int>& tg = node.iargs;
    const T gscale = node.og()[0] * (reduction == Reduction::Mean ? T(1) / T(m) : T(1));
    for (int i = 0; i < m; ++i) {
      const T* row = node.pdata(0).data() + static_cast<size_t>(i) * v;
      T* grow = node.pgrad(0).data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) {
        T p = std::exp(row[j] - lse[i]);
        if (j == tg[i]) p -= T(1);
        grow[j] += gscale * p;
      }
    }
  });
  if (nd) {
    nd->saved.push_back(std::move(lse));
    nd->iargs = targets;
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout (inverted; active only when rate > 0)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw DimensionError("dropout: rate must be < 1");
  const size_t n = x.numel();
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(n);
  for (size_t i = 0; i < n; ++i) mask[i] = rng.next_real() < rate ? T(0) : keep_scale;
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * mask[i];
  Node<T>* nd = attach<T>(out, "dropout", {x}, [n](Node<T>& node) {
    if (!node.pneeds(0)) return;
    const std::vector<T>& m = node.saved[0];
    for (size_t i = 0; i < n; ++i) node.pgrad(0)[i] += node.og()[i] * m[i];
  });
  if (nd) nd->saved.push_back(std::move(mask));
  return out;
}

}  // namespace cmota::nn
