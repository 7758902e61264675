#pragma once

#include <cstddef>
#include <optional>

#include "dfd/tensor.hpp"

namespace dfd {

/// C[M,N] (+)= op(A) * op(B) for row-major buffers, where op transposes when
/// the matching flag is set. A is M x K (or K x M when trans_a), B is K x N
/// (or N x K when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

/// Rank-2 matrix product.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Batched product over a leading axis: [G,M,K] x [G,K,N] -> [G,M,N], or
/// [G,M,K] x [G,N,K]^T when trans_b.
template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_b = false);

enum class Elementwise { add, sub, mul, exp, log, max_scalar };

// Binary elementwise ops require equal shapes; the only broadcast is with a
// scalar operand.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s);
template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, T s);
template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a);
/// Throws DomainError on any non-positive element.
template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a);
/// max(a, s) elementwise; at a tie the gradient goes to a.
template <typename T>
BasicTensor<T> maximum(const BasicTensor<T>& a, T s);

/// Dispatch by kind; unary kinds ignore `scalar`, max_scalar reads it.
template <typename T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> elementwise(Elementwise op, const BasicTensor<T>& a, T scalar = T(0));

/// `b` broadcast over the leading axes of `a`: b.shape must equal the
/// trailing dims of a.shape. Used for biases and position embeddings.
template <typename T>
BasicTensor<T> add_trailing(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a, std::size_t axis);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a, std::size_t axis);

/// Max-subtracted softmax along `axis`.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a, std::size_t axis);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
/// General axis permutation; out.shape[i] = a.shape[perm[i]].
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<std::size_t>& perm);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add(a, b);
}
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return sub(a, b);
}
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return mul(a, b);
}

}  // namespace dfd
