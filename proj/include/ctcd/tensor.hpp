#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// Every op that produces a tensor from inputs requiring gradients records
// its parents and a backward closure on the result node. The graph is the
// tape: it is built per forward pass and consumed by a single backward()
// call, after which it is released. A second backward() through the same
// graph throws TapeError.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctcd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Whether ops currently record onto the tape (thread-local).
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
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool released = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  bool is_interior() const { return static_cast<bool>(backward_fn) || released; }
};

}  // namespace detail

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = detail::TensorNode<T>;
  using NodePtr = std::shared_ptr<Node>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return checked().data.size(); }

  std::span<T> data() { return checked().data; }
  std::span<const T> data() const { return checked().data; }
  T operator[](std::size_t flat) const { return checked().data[flat]; }
  T item() const;

  bool requires_grad() const { return checked().requires_grad; }
  void set_requires_grad(bool flag);

  bool has_grad() const { return !checked().grad.empty(); }
  std::span<const T> grad() const { return checked().grad; }
  std::span<T> grad_mut() {
    checked().ensure_grad();
    return checked().grad;
  }
  void zero_grad() { checked().grad.clear(); }

  /// Back-propagates from this scalar through the tape and releases it.
  void backward();

  /// Same values, no history.
  BasicTensor detach() const;

  bool is_same(const BasicTensor& other) const { return node_ == other.node_; }
  const NodePtr& node() const { return node_; }

  /// Wraps a freshly computed result. Records `parents` and `backward_fn`
  /// on the tape when grad mode is on and any parent requires grad.
  static BasicTensor make_result(Shape shape, std::vector<T> values,
                                 std::initializer_list<const BasicTensor*> parents,
                                 std::function<void(Node&)> backward_fn);
  static BasicTensor make_result(Shape shape, std::vector<T> values,
                                 const std::vector<const BasicTensor*>& parents,
                                 std::function<void(Node&)> backward_fn);

 private:
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}
  Node& checked() const;

  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace ctcd
