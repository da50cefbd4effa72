#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fdepth {

/// Extents of a rank-4 tensor in (batch, channel, height, width) order.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  constexpr std::int64_t numel() const { return n * c * h * w; }
  constexpr std::int64_t operator[](int axis) const {
    return axis == 0 ? n : axis == 1 ? c : axis == 2 ? h : w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor;

namespace detail {

struct TensorImpl;

/// One recorded operation. Inputs are always created before the output,
/// so sorting by output id gives a valid topological order.
struct Node {
  const char* kind = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Accumulates into grad_in[i] (empty span when input i needs no gradient).
  std::function<void(std::span<const double> grad_out,
                     std::span<const std::span<double>> grad_in)>
      backward;
};

struct TensorImpl {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;  // leaves only; empty until first backward
  std::shared_ptr<Node> node;
};

}  // namespace detail

/// Dense double-precision NCHW array that may take part in a reverse-mode
/// differentiation graph. Copies share storage.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->shape.numel(); }
  std::span<const double> values() const { return impl_->value; }
  // Mutable access is reserved for leaves (parameters, inputs being built).
  std::span<double> mutable_values();

  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->node == nullptr; }
  std::span<const double> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  /// Populates grad() of every requires_grad leaf reachable from this
  /// scalar. Repeated calls accumulate.
  void backward() const;

  /// Copy of the values without any graph history.
  Tensor detach() const;

  std::uint64_t id() const { return impl_->id; }

  // Used by op implementations.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Operation records reachable from a root, inputs before outputs.
struct Graph {
  std::vector<const detail::TensorImpl*> order;

  static Graph collect(const Tensor& root);
};

/// Throws std::domain_error naming `where` when any value is NaN or Inf.
void require_finite(const Tensor& t, const char* where);

}  // namespace fdepth
