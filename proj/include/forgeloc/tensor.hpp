#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace forgeloc {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Process-wide accounting of bytes held by tensor data and gradients.
/// Used for the peak working-set estimates in pruning reports.
struct MemoryStats {
  static int64_t current_bytes();
  static int64_t peak_bytes();
  static void reset_peak();
  static void add(int64_t bytes);
};

/// Gradient recording is enabled by default; a NoGradGuard disables it for
/// the current thread until destroyed.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward_fn;

  Node(Shape s, std::vector<T> d);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Allocates a zero gradient buffer on first use.
  std::vector<T>& ensure_grad();
  bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

/// Dense row-major tensor. Copies are shallow: two Tensor handles may refer
/// to the same storage and tape node.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  using BackwardFn = std::function<void(detail::Node<T>&)>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  /// Builds an op result. Records the backward closure only when grad mode
  /// is on and at least one input requires grad.
  static Tensor make_result(Shape shape, std::vector<T> values,
                            const std::vector<Tensor>& inputs,
                            BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t ndim() const { return static_cast<int64_t>(shape().size()); }
  int64_t dim(int64_t axis) const;
  int64_t numel() const;

  std::span<const T> data() const;
  /// In-place access for initializers, optimizers and checkpoint loading.
  std::span<T> data_mut();
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const T> grad() const;
  std::span<T> grad_mut();
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Gradients accumulate into leaves
  /// across calls; intermediate gradients are recomputed every call.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  template <class U>
  Tensor<U> cast() const {
    auto src = data();
    std::vector<U> out(src.begin(), src.end());
    return Tensor<U>(shape(), std::move(out), false);
  }

  const NodePtr& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace forgeloc
