#include "dfd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dfd/autograd.hpp"

namespace dfd {

using autograd::grad_of;
using autograd::Impl;
using autograd::make_result;

namespace {

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

// C += A * B, all row-major and contiguous. Four rows of A share each load of
// a B row; blocking over k and n keeps the B panel cache resident.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c) {
  constexpr std::size_t kBlockK = 256;
  constexpr std::size_t kBlockN = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::size_t j1 = std::min(n, j0 + kBlockN);
    const std::size_t width = j1 - j0;
    for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
      const std::size_t p1 = std::min(k, p0 + kBlockK);
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        T* __restrict c0 = c + i * n + j0;
        T* __restrict c1 = c0 + n;
        T* __restrict c2 = c1 + n;
        T* __restrict c3 = c2 + n;
        for (std::size_t p = p0; p < p1; ++p) {
          const T a0 = a[i * k + p], a1 = a[(i + 1) * k + p];
          const T a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
          const T* __restrict brow = b + p * n + j0;
          for (std::size_t j = 0; j < width; ++j) {
            const T bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        T* __restrict crow = c + i * n + j0;
        for (std::size_t p = p0; p < p1; ++p) {
          const T av = a[i * k + p];
          const T* __restrict brow = b + p * n + j0;
          for (std::size_t j = 0; j < width; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

struct AxisSplit {
  std::size_t outer, length, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                     to_string(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> a_buf, b_buf;
  if (trans_a) {
    a_buf = transposed(a, k, m);
    a = a_buf.data();
  }
  if (trans_b) {
    b_buf = transposed(b, n, k);
    b = b_buf.data();
  }
  gemm_nn(m, n, k, a, b, c);
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: rank-2 operands required, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimension mismatch " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  std::vector<T> out(m * n);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(
      {m, n}, std::move(out), {ai, bi},
      [ai, bi, m, n, k](Impl<T>& o) {
        if (ai->requires_grad)
          gemm(false, true, m, k, n, o.grad.data(), bi->data.data(), grad_of(*ai).data(), true);
        if (bi->requires_grad)
          gemm(true, false, k, n, m, ai->data.data(), o.grad.data(), grad_of(*bi).data(), true);
      },
      "matmul");
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw ShapeError("bmm: rank-3 operands required");
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = trans_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != g || bk != k)
    throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  std::vector<T> out(g * m * n);
  for (std::size_t i = 0; i < g; ++i)
    gemm(false, trans_b, m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
         out.data() + i * m * n, false);
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(
      {g, m, n}, std::move(out), {ai, bi},
      [ai, bi, g, m, n, k, trans_b](Impl<T>& o) {
        for (std::size_t i = 0; i < g; ++i) {
          const T* go = o.grad.data() + i * m * n;
          const T* av = ai->data.data() + i * m * k;
          const T* bv = bi->data.data() + i * k * n;
          if (ai->requires_grad)
            gemm(false, !trans_b, m, k, n, go, bv, grad_of(*ai).data() + i * m * k, true);
          if (bi->requires_grad) {
            if (trans_b)  // dB[n,k] = dC^T[n,m] A[m,k]
              gemm(true, false, n, k, m, go, av, grad_of(*bi).data() + i * k * n, true);
            else  // dB[k,n] = A^T[k,m] dC[m,n]
              gemm(true, false, k, n, m, av, go, grad_of(*bi).data() + i * k * n, true);
          }
        }
      },
      "bmm");
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai, bi},
      [ai, bi](Impl<T>& o) {
        for (auto* in : {ai.get(), bi.get()}) {
          if (!in->requires_grad) continue;
          auto& g = grad_of(*in);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
      },
      "add");
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai, bi},
      [ai, bi](Impl<T>& o) {
        if (ai->requires_grad) {
          auto& g = grad_of(*ai);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bi->requires_grad) {
          auto& g = grad_of(*bi);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
      },
      "sub");
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai, bi},
      [ai, bi](Impl<T>& o) {
        if (ai->requires_grad) {
          auto& g = grad_of(*ai);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
          auto& g = grad_of(*bi);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * ai->data[i];
        }
      },
      "mul");
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& x : out) x += s;
  auto ai = a.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai},
      [ai](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      },
      "add_scalar");
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& x : out) x *= s;
  auto ai = a.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai},
      [ai, s](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
      },
      "mul_scalar");
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& x : out) x = std::exp(x);
  auto ai = a.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai},
      [ai](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i];
      },
      "exp");
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& x : out) {
    if (!(x > T(0))) throw DomainError("log: non-positive input " + std::to_string(x));
    x = std::log(x);
  }
  auto ai = a.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai},
      [ai](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / ai->data[i];
      },
      "log");
}

template <typename T>
BasicTensor<T> maximum(const BasicTensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& x : out) x = std::max(x, s);
  auto ai = a.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai},
      [ai, s](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (ai->data[i] >= s) g[i] += o.grad[i];
      },
      "maximum");
}

template <typename T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  switch (op) {
    case Elementwise::add: return add(a, b);
    case Elementwise::sub: return sub(a, b);
    case Elementwise::mul: return mul(a, b);
    default: break;
  }
  if (b.numel() != 1) throw ShapeError("elementwise: unary/scalar op expects a scalar operand");
  return elementwise(op, a, b.item());
}

template <typename T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a, T scalar) {
  switch (op) {
    case Elementwise::add: return add_scalar(a, scalar);
    case Elementwise::sub: return add_scalar(a, -scalar);
    case Elementwise::mul: return mul_scalar(a, scalar);
    case Elementwise::exp: return exp(a);
    case Elementwise::log: return log(a);
    case Elementwise::max_scalar: return maximum(a, scalar);
  }
  throw Error("elementwise: unknown op");
}

template <typename T>
BasicTensor<T> add_trailing(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - bs.size()))
    throw ShapeError("add_trailing: " + to_string(bs) + " is not a trailing shape of " +
                     to_string(as));
  const std::size_t inner = b.numel();
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % inner];
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(
      as, std::move(out), {ai, bi},
      [ai, bi, inner](Impl<T>& o) {
        if (ai->requires_grad) {
          auto& g = grad_of(*ai);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (bi->requires_grad) {
          auto& g = grad_of(*bi);
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % inner] += o.grad[i];
        }
      },
      "add_trailing");
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T total = 0;
  for (auto x : a.data()) total += x;
  auto ai = a.impl();
  return make_result<T>(
      {}, {total}, {ai},
      [ai](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (auto& x : g) x += o.grad[0];
      },
      "sum");
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a, std::size_t axis) {
  const auto s = split_at(a.shape(), axis, "sum");
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.length; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += a.data()[(o * s.length + l) * s.inner + i];
  auto ai = a.impl();
  return make_result<T>(
      std::move(shape), std::move(out), {ai},
      [ai, s](Impl<T>& r) {
        auto& g = grad_of(*ai);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t l = 0; l < s.length; ++l)
            for (std::size_t i = 0; i < s.inner; ++i)
              g[(o * s.length + l) * s.inner + i] += r.grad[o * s.inner + i];
      },
      "sum_axis");
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a, std::size_t axis) {
  const auto s = split_at(a.shape(), axis, "mean");
  if (s.length == 0) throw ShapeError("mean: empty axis");
  return mul_scalar(sum(a, axis), T(1) / static_cast<T>(s.length));
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a, std::size_t axis) {
  const auto s = split_at(a.shape(), axis, "softmax");
  if (s.length == 0) throw ShapeError("softmax: empty axis");
  std::vector<T> out(a.numel());
  const auto& in = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.length * s.inner + i;
      T peak = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.length; ++l) peak = std::max(peak, in[base + l * s.inner]);
      T total = 0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const T e = std::exp(in[base + l * s.inner] - peak);
        out[base + l * s.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) out[base + l * s.inner] /= total;
    }
  auto ai = a.impl();
  return make_result<T>(
      a.shape(), std::move(out), {ai},
      [ai, s](Impl<T>& r) {
        auto& g = grad_of(*ai);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.length * s.inner + i;
            T dot = 0;
            for (std::size_t l = 0; l < s.length; ++l)
              dot += r.grad[base + l * s.inner] * r.data[base + l * s.inner];
            for (std::size_t l = 0; l < s.length; ++l) {
              const std::size_t idx = base + l * s.inner;
              g[idx] += r.data[idx] * (r.grad[idx] - dot);
            }
          }
      },
      "softmax");
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  auto ai = a.impl();
  return make_result<T>(
      std::move(shape), a.values(), {ai},
      [ai](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      },
      "reshape");
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  const Shape& in_shape = a.shape();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // source index for each output element, walked with an odometer
  const std::size_t n = a.numel();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*index)[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      src += src_stride[ax];
      if (++counter[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[(*index)[i]];
  auto ai = a.impl();
  return make_result<T>(
      std::move(out_shape), std::move(out), {ai},
      [ai, index](Impl<T>& o) {
        auto& g = grad_of(*ai);
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*index)[i]] += o.grad[i];
      },
      "permute");
}

#define DFD_INSTANTIATE_OPS(T)                                                                    \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*,   \
                        T*, bool);                                                                \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&, bool);                \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, T);                                   \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                             \
  template BasicTensor<T> log(const BasicTensor<T>&);                                             \
  template BasicTensor<T> maximum(const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> elementwise(Elementwise, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> elementwise(Elementwise, const BasicTensor<T>&, T);                     \
  template BasicTensor<T> add_trailing(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                             \
  template BasicTensor<T> sum(const BasicTensor<T>&, std::size_t);                                \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                            \
  template BasicTensor<T> mean(const BasicTensor<T>&, std::size_t);                               \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                            \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                  \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);

DFD_INSTANTIATE_OPS(float)
DFD_INSTANTIATE_OPS(double)

}  // namespace dfd
