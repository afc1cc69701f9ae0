#include "forgeloc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "forgeloc/errors.hpp"

namespace forgeloc {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
std::atomic<int64_t> g_current_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};
thread_local bool t_grad_enabled = true;
}  // namespace

int64_t MemoryStats::current_bytes() { return g_current_bytes.load(); }
int64_t MemoryStats::peak_bytes() { return g_peak_bytes.load(); }
void MemoryStats::reset_peak() { g_peak_bytes.store(g_current_bytes.load()); }
void MemoryStats::add(int64_t bytes) {
  int64_t now = g_current_bytes.fetch_add(bytes) + bytes;
  int64_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

template <class T>
Node<T>::Node(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
  MemoryStats::add(static_cast<int64_t>(data.size() * sizeof(T)));
}

template <class T>
Node<T>::~Node() {
  MemoryStats::add(-static_cast<int64_t>((data.size() + grad.size()) * sizeof(T)));
}

template <class T>
std::vector<T>& Node<T>::ensure_grad() {
  if (grad.empty() && !data.empty()) {
    grad.assign(data.size(), T(0));
    MemoryStats::add(static_cast<int64_t>(grad.size() * sizeof(T)));
  }
  return grad;
}

}  // namespace detail

template <class T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : Tensor(std::move(shape), std::vector<T>{}, requires_grad) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  if (values.empty() && n > 0) values.assign(static_cast<size_t>(n), T(0));
  if (static_cast<int64_t>(values.size()) != n) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node<T>>(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(static_cast<size_t>(n), value));
}

template <class T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values,
                                 const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values), false);
#ifndef NDEBUG
  for (T v : out.node_->data) {
    if (!std::isfinite(static_cast<double>(v))) {
      bool finite_inputs = true;
      for (const auto& in : inputs) {
        for (T x : in.data())
          if (!std::isfinite(static_cast<double>(x))) finite_inputs = false;
      }
      if (finite_inputs) throw NumericalError("non-finite value produced from finite inputs");
      break;
    }
  }
#endif
  if (!t_grad_enabled || !backward) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (const auto& in : inputs) out.node_->inputs.push_back(in.node_);
  out.node_->backward_fn = std::move(backward);
  return out;
}

template <class T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw UsageError("access to undefined tensor");
  return node_->shape;
}

template <class T>
int64_t Tensor<T>::dim(int64_t axis) const {
  const int64_t n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return shape()[static_cast<size_t>(axis)];
}

template <class T>
int64_t Tensor<T>::numel() const {
  return static_cast<int64_t>(node_ ? node_->data.size() : 0);
}

template <class T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw UsageError("access to undefined tensor");
  return node_->data;
}

template <class T>
std::span<T> Tensor<T>::data_mut() {
  if (!node_) throw UsageError("access to undefined tensor");
  return node_->data;
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <class T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <class T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!node_) throw UsageError("access to undefined tensor");
  if (!node_->is_leaf()) throw UsageError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = value;
}

template <class T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <class T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return node_->grad;
}

template <class T>
std::span<T> Tensor<T>::grad_mut() {
  if (!node_) throw UsageError("access to undefined tensor");
  return node_->ensure_grad();
}

template <class T>
void Tensor<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
void Tensor<T>::backward() const {
  if (!node_) throw UsageError("backward() on undefined tensor");
  if (numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) throw UsageError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf() && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node_->data, false);
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), node_->data, node_->requires_grad && node_->is_leaf());
}

template struct detail::Node<float>;
template struct detail::Node<double>;
template class Tensor<float>;
template class Tensor<double>;

}  // namespace forgeloc
