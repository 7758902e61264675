#pragma once

// Helpers for writing differentiable operations. Each op computes its forward
// values eagerly, then calls make_result() with the inputs it depends on and a
// backward rule. The rule receives the output (data and upstream grad) and
// accumulates into the inputs through grad_of().

#include <span>
#include <vector>

#include "dfd/tensor.hpp"

namespace dfd::autograd {

template <typename T>
using Impl = detail::TensorImpl<T>;

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

/// Gradient accumulator for an input, allocated as zeros on first use.
template <typename T>
std::vector<T>& grad_of(Impl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
  return impl.grad;
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::vector<ImplPtr<T>> inputs,
                           std::function<void(Impl<T>&)> backward,
                           std::string_view name) {
  auto out = std::make_shared<Impl<T>>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  if (numel(out->shape) != out->data.size())
    throw ShapeError(std::string(name) + ": result size does not match shape " +
                     to_string(out->shape));
  bool record = false;
  if (grad_enabled())
    for (const auto& in : inputs) record = record || in->requires_grad;
  if (record) {
    out->requires_grad = true;
    auto node = std::make_shared<detail::Node<T>>();
    node->name = name;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out->node = std::move(node);
  }
  return BasicTensor<T>(std::move(out));
}

}  // namespace dfd::autograd
