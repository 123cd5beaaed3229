#include "esbn/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace esbn {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), S(0), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<S>(n, value), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::from_data(Shape shape, std::vector<S> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw TensorError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw TensorError("data length " + std::to_string(data.size()) + " does not match shape " +
                      shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <typename S>
std::size_t Tensor<S>::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw TensorError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

template <typename S>
std::span<S> Tensor<S>::mutable_data() {
  auto& n = checked();
  if (n.backward) throw TensorError("cannot mutate the output of op '" + std::string(n.op) + "'");
  return n.value;
}

template <typename S>
void Tensor<S>::zero_grad() {
  auto& n = checked();
  n.grad.clear();
}

template <typename S>
void Tensor<S>::set_requires_grad(bool flag) {
  auto& n = checked();
  if (n.backward) throw TensorError("requires_grad can only be set on leaf tensors");
  n.requires_grad = flag;
}

template <typename S>
S Tensor<S>::item() const {
  const auto& n = checked();
  if (n.value.size() != 1) throw TensorError("item() on tensor of shape " + shape_str(n.shape));
  return n.value[0];
}

template <typename S>
S Tensor<S>::at(std::initializer_list<std::size_t> index) const {
  const auto& n = checked();
  if (index.size() != n.shape.size()) throw TensorError("at(): rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) throw TensorError("at(): index out of range");
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.value[flat];
}

template <typename S>
void Tensor<S>::backward() const {
  const auto& root = checked();
  if (root.value.size() != 1) {
    throw TensorError("backward() requires a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw TensorError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
      n->grad.clear();
    }
  }
}

template <typename S>
Tensor<S> Tensor<S>::detach() const {
  const auto& n = checked();
  return from_data(n.shape, n.value, false);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace esbn
