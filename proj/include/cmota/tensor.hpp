#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace cmota::nn {

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when an op produces NaN/Inf from finite inputs; carries the op name.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("tensor extent must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename T>
struct Node;

// Dense row-major tensor with reverse-mode gradient support. Value semantics:
// copies share the underlying buffers, and a tensor is treated as immutable
// once it has been produced by an op.
template <typename T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // same length as data when present
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  Tensor() = default;

  static Tensor zeros(Shape s, bool rg = false) {
    Tensor t;
    const size_t n = shape_numel(s);
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(n, T(0));
    t.requires_grad = rg;
    if (rg) t.grad = std::make_shared<std::vector<T>>(n, T(0));
    return t;
  }

  static Tensor from(Shape s, std::vector<T> values, bool rg = false) {
    Tensor t = zeros(std::move(s), rg);
    if (values.size() != t.data->size())
      throw DimensionError("tensor init: " + std::to_string(values.size()) + " values for shape " +
                           shape_str(t.shape));
    *t.data = std::move(values);
    return t;
  }

  static Tensor scalar(T v, bool rg = false) { return from({1}, {v}, rg); }

  bool defined() const { return static_cast<bool>(data); }
  size_t numel() const { return data ? data->size() : 0; }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return ndim() < 2 ? 1 : shape[1]; }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T& at(int i) { return (*data)[static_cast<size_t>(i)]; }
  T at(int i) const { return (*data)[static_cast<size_t>(i)]; }
  T& at(int i, int j) { return (*data)[static_cast<size_t>(i) * cols() + j]; }
  T at(int i, int j) const { return (*data)[static_cast<size_t>(i) * cols() + j]; }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape));
    return (*data)[0];
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Creator record for one op application. Holds the output's grad buffer
// directly (not the output tensor) so ownership stays a back-pointing DAG.
template <typename T>
struct Node {
  const char* op = "";
  std::vector<Tensor<T>> parents;
  std::shared_ptr<std::vector<T>> out_grad;
  std::function<void(Node<T>&)> backward;
  std::vector<std::vector<T>> saved;  // forward activations needed by backward
  std::vector<int> iargs;

  const std::vector<T>& og() const { return *out_grad; }
  std::vector<T>& pgrad(size_t i) { return *parents[i].grad; }
  const std::vector<T>& pdata(size_t i) const { return *parents[i].data; }
  bool pneeds(size_t i) const { return parents[i].requires_grad; }
};

// Graph-construction switch; generation and evaluation run with grads off.
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_enabled_flag(); }

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (const T v : *t.data) {
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericalError(std::string("non-finite value produced by op '") + op + "'");
  }
}

// Attaches a creator node to `out` when any parent is on the tape. The op's
// backward lambda reads node.og() and accumulates into parent grads.
template <typename T>
Node<T>* attach(Tensor<T>& out, const char* op, std::vector<Tensor<T>> parents,
                std::function<void(Node<T>&)> bw) {
  bool need = false;
  if (grad_enabled())
    for (const auto& p : parents)
      if (p.requires_grad) need = true;
  if (!need) return nullptr;
  out.requires_grad = true;
  if (!out.grad) out.grad = std::make_shared<std::vector<T>>(out.data->size(), T(0));
  out.node = std::make_shared<Node<T>>();
  out.node->op = op;
  out.node->parents = std::move(parents);
  out.node->out_grad = out.grad;
  out.node->backward = std::move(bw);
  return out.node.get();
}

// Reverse pass from a scalar loss. Deterministic: iterative DFS fixes a
// topological order, then nodes run exactly once in reverse.
template <typename T>
void backward(const Tensor<T>& root) {
  if (root.numel() != 1) throw DimensionError("backward() root must be scalar");
  if (!root.node) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  struct Frame {
    Node<T>* n;
    size_t next_child;
  };
  std::vector<Frame> stack;
  seen.insert(root.node.get());
  stack.push_back({root.node.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node<T>* child = f.n->parents[f.next_child].node.get();
      ++f.next_child;
      if (child && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  (*root.grad)[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace cmota::nn
