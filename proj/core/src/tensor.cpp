#include "dfd/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace dfd {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw DomainError("Rng::below: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % n);
}

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

thread_local bool t_grad_enabled = true;

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  // FNV-1a over the tag, then mixed with the base seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix(base ^ splitmix(h));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix(base ^ splitmix(index + 0x632be59bd9b4e019ULL));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
BasicTensor<T>::BasicTensor() : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  impl_->shape = {0};
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->data.assign(dfd::numel(shape), value);
  impl->shape = std::move(shape);
  return BasicTensor(std::move(impl));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::ones(Shape shape) {
  return full(std::move(shape), T(1));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_values(Shape shape, std::vector<T> values) {
  if (values.size() != dfd::numel(shape))
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + to_string(shape));
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return BasicTensor(std::move(impl));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::uniform(Shape shape, Rng& rng, T lo, T hi) {
  std::vector<T> v(dfd::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return from_values(std::move(shape), std::move(v));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::uniform(Shape shape, std::uint64_t seed, T lo, T hi) {
  Rng rng(seed);
  return uniform(std::move(shape), rng, lo, hi);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::normal(Shape shape, Rng& rng, T stddev) {
  std::vector<T> v(dfd::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return from_values(std::move(shape), std::move(v));
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape()));
  return impl_->shape[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + to_string(shape()) + " is not a scalar");
  return impl_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at: wrong number of indices");
  std::size_t flat = 0, axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("at: index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw Error("set_requires_grad: only leaves can be toggled");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_values(impl_->shape, impl_->data);
}

namespace {

// Post-order over the recorded graph: every input precedes its consumers.
template <typename T>
std::vector<detail::TensorImpl<T>*> topological_order(detail::TensorImpl<T>* root) {
  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<detail::TensorImpl<T>*> visited;
  std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      auto* child = impl->node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + to_string(shape()));
  if (!impl_->node) throw Error("backward: nothing was recorded for this tensor");
  auto order = topological_order(impl_.get());
  impl_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* impl = *it;
    if (!impl->node) continue;
    if (!impl->grad.empty()) impl->node->backward(*impl);
    // Intermediate gradients are not kept once propagated.
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

template <typename T>
std::vector<std::string_view> recorded_ops(const BasicTensor<T>& root) {
  std::vector<std::string_view> names;
  for (auto* impl : topological_order(root.impl().get()))
    if (impl->node) names.push_back(impl->node->name);
  return names;
}

template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& t) {
  std::vector<To> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(t.data()[i]);
  return BasicTensor<To>::from_values(t.shape(), std::move(v));
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template std::vector<std::string_view> recorded_ops(const BasicTensor<float>&);
template std::vector<std::string_view> recorded_ops(const BasicTensor<double>&);
template BasicTensor<float> cast(const BasicTensor<double>&);
template BasicTensor<double> cast(const BasicTensor<float>&);
template BasicTensor<float> cast(const BasicTensor<float>&);
template BasicTensor<double> cast(const BasicTensor<double>&);

}  // namespace dfd
