#pragma once

// Dense row-major tensor with a dynamic reverse-mode tape.
//
// A BasicTensor is a cheap shared handle to a Node. Operations that see at
// least one input with requires_grad (and grad mode enabled) link the output
// node to its parents and attach a backward closure; everything else is a
// plain value computation.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace lfusion {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Raised by every primitive when its inputs have incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] inline void throw_shape(const std::string& op, const Shape& a, const Shape& b,
                                     const std::string& detail = {}) {
  std::string msg = op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!detail.empty()) msg += " (" + detail + ")";
  throw ShapeError(msg);
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    validate_shape(shape);
    auto n = std::make_shared<NodeT>();
    n->data.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }

  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<NodeT>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t i) const { return node().shape.at(i); }
  std::size_t numel() const { return node().data.size(); }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  const std::vector<T>& values() const { return node().data; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }
  void zero_grad() { node().grad.clear(); }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool v) { node().requires_grad = v; }
  const char* op_name() const { return node().op; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return node().data[0];
  }

  T& at(std::size_t flat) { return node().data.at(flat); }
  T at(std::size_t flat) const { return node().data.at(flat); }

  /// Value copy that is detached from the tape.
  BasicTensor detach() const { return from(shape(), node().data, false); }

  /// Reverse pass from a scalar. Gradients accumulate into every node that
  /// requires them; leaves keep them until zero_grad().
  void backward() const {
    if (numel() != 1) {
      throw ShapeError(std::string("backward: loss must be scalar, got shape ") + shape_str(shape()));
    }
    if (!node().requires_grad) {
      throw std::invalid_argument("backward: loss does not depend on any tensor requiring grad");
    }
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    // Iterative post-order DFS; graphs are deep enough to matter for recursion.
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        NodeT* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    // Interior gradients are per-pass; only leaves accumulate across calls.
    for (NodeT* n : order)
      if (n->backward_fn) n->grad.clear();
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeT* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

  NodeT& node() {
    if (!node_) throw std::logic_error("tensor: use of undefined tensor");
    return *node_;
  }
  const NodeT& node() const {
    if (!node_) throw std::logic_error("tensor: use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
    }
  }

  std::shared_ptr<NodeT> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Creates an output node; when `track` the parents and closure are kept.
template <class T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                           std::vector<std::shared_ptr<Node<T>>> parents, bool track,
                           std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(n));
}

template <class T>
void accumulate(Node<T>& target, std::span<const T> g) {
  if (!target.requires_grad) return;
  auto& dst = target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

template <class To, class From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t, bool requires_grad = false) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return BasicTensor<To>::from(t.shape(), std::move(out), requires_grad);
}

}  // namespace lfusion
