#pragma once

// Dense n-dimensional tensor with reverse-mode gradient tracking.
//
// A Tensor is a shared handle to a graph node. Ops create new nodes that keep
// their inputs alive through `parents`; calling backward() on a scalar walks
// the graph in reverse topological order. There is no global tape, so
// independent graphs can be built on different threads.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace esbn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<S>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Node = detail::Node<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false);
  static Tensor scalar(S value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return checked().shape; }
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return checked().value.size(); }

  std::span<const S> data() const { return checked().value; }
  /// Writable view of a leaf's buffer (parameters, inputs). Throws for op results.
  std::span<S> mutable_data();

  bool has_grad() const { return !checked().grad.empty(); }
  std::span<const S> grad() const { return checked().grad; }
  void zero_grad();

  bool requires_grad() const { return checked().requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return !checked().backward; }

  S item() const;
  S at(std::initializer_list<std::size_t> index) const;

  /// Backpropagates d(this)/d(leaf) into every reachable leaf's grad buffer.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  const Node& checked() const {
    if (!node_) throw TensorError("use of undefined tensor");
    return *node_;
  }
  Node& checked() {
    if (!node_) throw TensorError("use of undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace esbn
