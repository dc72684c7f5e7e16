#include "ctcd/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ctcd {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->data.assign(shape_numel(shape), T(0));
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <class T>
typename BasicTensor<T>::Node& BasicTensor<T>::checked() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return *node_;
}

template <class T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return checked().data[0];
}

template <class T>
void BasicTensor<T>::set_requires_grad(bool flag) {
  auto& n = checked();
  if (n.is_interior()) throw UsageError("requires_grad can only be set on leaf tensors");
  n.requires_grad = flag;
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), checked().data, false);
}

template <class T>
BasicTensor<T> BasicTensor<T>::make_result(Shape shape, std::vector<T> values,
                                           std::initializer_list<const BasicTensor*> parents,
                                           std::function<void(Node&)> backward_fn) {
  return make_result(std::move(shape), std::move(values),
                     std::vector<const BasicTensor*>(parents), std::move(backward_fn));
}

template <class T>
BasicTensor<T> BasicTensor<T>::make_result(Shape shape, std::vector<T> values,
                                           const std::vector<const BasicTensor*>& parents,
                                           std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto* p : parents) {
      if (p->node_ && p->node_->requires_grad) {
        if (p->node_->released) {
          throw TapeError("op consumes a tensor whose tape was already released by backward()");
        }
        track = true;
      }
    }
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto* p : parents) node->parents.push_back(p->node_);
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor(std::move(node));
}

template <class T>
void BasicTensor<T>::backward() {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (root.released) throw TapeError("backward() called twice on the same tape");
  if (!std::isfinite(static_cast<double>(root.data[0]))) {
    throw UsageError("backward() on a non-finite loss");
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Processed nodes drop their parent links, so hold every node until done.
  std::vector<NodePtr> alive;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->released) throw TapeError("backward() reached a tape that was already released");
    if (next < node->parents.size()) {
      const NodePtr& parent_ptr = node->parents[next++];
      Node* parent = parent_ptr.get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        alive.push_back(parent_ptr);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.ensure_grad();
  root.grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn) continue;
    for (auto& p : node->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    node->backward_fn(*node);
    node->backward_fn = nullptr;
    node->parents.clear();
    node->released = true;
    if (node != &root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace ctcd
