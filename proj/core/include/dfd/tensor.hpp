#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dfd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on any shape or rank disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation's input lies outside its mathematical domain
/// (log of a non-positive value, dropout rate >= 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Seedable generator used for every random draw in the toolkit.
///
/// Backed by std::mt19937_64. Real-valued draws are built from the raw 64-bit
/// output (top 53 bits) rather than std::uniform_real_distribution so the
/// sequence is identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer applied to (base, tag); used to expand one user seed
/// into independent sub-seeds.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

template <typename T>
class BasicTensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  std::string_view name;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;
};

}  // namespace detail

/// Whether operations record backward rules. Thread-local; defaults to on.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// N-dimensional dense array with optional participation in reverse-mode
/// differentiation.
///
/// A tensor is a handle: copies share storage and gradient. Parameters are
/// leaves created with set_requires_grad(true); every op whose inputs require
/// gradients records a backward rule on its result, and backward() on a scalar
/// result walks those rules in reverse topological order.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();

  static BasicTensor zeros(Shape shape);
  static BasicTensor ones(Shape shape);
  static BasicTensor full(Shape shape, T value);
  /// Throws ShapeError if values.size() != numel(shape).
  static BasicTensor from_values(Shape shape, std::vector<T> values);
  static BasicTensor scalar(T value) { return from_values({}, {value}); }
  /// Uniform on [lo, hi); identical seeds give identical tensors.
  static BasicTensor uniform(Shape shape, std::uint64_t seed, T lo = T(-1), T hi = T(1));
  static BasicTensor uniform(Shape shape, Rng& rng, T lo, T hi);
  static BasicTensor normal(Shape shape, Rng& rng, T stddev);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }
  bool is_leaf() const { return impl_->node == nullptr; }

  /// Populates grad on every requires_grad ancestor. The receiver must be a
  /// scalar that was produced with recording enabled.
  void backward() const;

  /// New leaf holding a copy of the values and no graph.
  BasicTensor detach() const;

  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }
  explicit BasicTensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Names of the recorded operations reachable from root, inputs before
/// outputs; each op appears once. This is the order backward() reverses.
template <typename T>
std::vector<std::string_view> recorded_ops(const BasicTensor<T>& root);

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& t);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace dfd
