#include "fdepth/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace fdepth {

namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> values,
                                              bool requires_grad) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw std::invalid_argument("negative extent in shape " + shape.str());
  }
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    std::ostringstream msg;
    msg << "shape " << shape.str() << " needs " << shape.numel() << " values, got "
        << values.size();
    throw std::invalid_argument(msg.str());
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->id = next_id();
  impl->shape = shape;
  impl->value = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream out;
  out << n << "x" << c << "x" << h << "x" << w;
  return out.str();
}

Tensor::Tensor() : impl_(make_impl(Shape{0, 0, 0, 0}, {}, false)) {}

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {
  if (impl_->id == 0) impl_->id = next_id();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(static_cast<std::size_t>(std::max<std::int64_t>(shape.numel(), 0)),
                             value);
  return Tensor(make_impl(shape, std::move(values), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_impl(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full(Shape{1, 1, 1, 1}, value, requires_grad);
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) {
    throw std::logic_error("mutable access to a non-leaf tensor");
  }
  return impl_->value;
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const Shape& s = impl_->shape;
  if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
    throw std::out_of_range("index out of range for shape " + s.str());
  }
  return impl_->value[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape().str());
  }
  return impl_->value[0];
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  return Tensor(make_impl(impl_->shape, impl_->value, false));
}

Graph Graph::collect(const Tensor& root) {
  Graph graph;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<const detail::TensorImpl*> stack{root.impl().get()};
  while (!stack.empty()) {
    const detail::TensorImpl* cur = stack.back();
    stack.pop_back();
    if (!seen.insert(cur).second) continue;
    if (!cur->node) continue;
    graph.order.push_back(cur);
    for (const auto& in : cur->node->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  std::sort(graph.order.begin(), graph.order.end(),
            [](const auto* a, const auto* b) { return a->id < b->id; });
  return graph;
}

void Tensor::backward() const {
  if (!(impl_->shape == Shape{1, 1, 1, 1})) {
    throw std::invalid_argument("backward() needs a 1x1x1x1 loss, got " + shape().str());
  }
  if (!impl_->requires_grad) {
    throw std::logic_error("backward() on a tensor that does not require grad");
  }
  if (!impl_->node) {
    auto& g = impl_->grad;
    if (g.empty()) g.assign(1, 0.0);
    g[0] += 1.0;
    return;
  }

  const Graph graph = Graph::collect(*this);
  std::unordered_map<const detail::TensorImpl*, std::vector<double>> pending;
  pending[impl_.get()] = {1.0};

  std::vector<std::span<double>> grad_in;
  for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
    const detail::TensorImpl* cur = *it;
    auto found = pending.find(cur);
    if (found == pending.end()) continue;
    const std::vector<double> grad_out = std::move(found->second);
    pending.erase(found);

    const detail::Node& node = *cur->node;
    grad_in.assign(node.inputs.size(), std::span<double>{});
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      detail::TensorImpl* in = node.inputs[i].get();
      if (!in->requires_grad) continue;
      const auto count = static_cast<std::size_t>(in->shape.numel());
      if (!in->node) {
        if (in->grad.empty()) in->grad.assign(count, 0.0);
        grad_in[i] = in->grad;
      } else {
        auto& buf = pending[in];
        if (buf.empty()) buf.assign(count, 0.0);
        grad_in[i] = buf;
      }
    }
    node.backward(grad_out, grad_in);
  }
}

void require_finite(const Tensor& t, const char* where) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string("non-finite value produced by ") + where);
    }
  }
}

}  // namespace fdepth
