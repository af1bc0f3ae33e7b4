#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace eventface {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

struct TensorImpl;

// One recorded operation. `backward` reads the output's grad buffer and
// accumulates into the grad buffers of inputs that require grad.
struct GradFn {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradFn> grad_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void accumulate(std::size_t i, double g) { grad[i] += g; }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), value);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = dist(rng);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = dist(rng);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const {
    if (numel() != 1) throw DimensionError("item: tensor has " + std::to_string(numel()) + " values");
    return impl_->data[0];
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const double> grad() const { return impl_->grad; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  void set_requires_grad(bool flag) {
    if (!is_leaf()) throw std::logic_error("set_requires_grad: only leaf tensors can change flags");
    impl_->requires_grad = flag;
    if (!flag) impl_->grad.clear();
  }
  void zero_grad() { impl_->grad.clear(); }

  // Copy of the values with no tape history.
  Tensor detach() const { return from(shape(), impl_->data, false); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Build an op output. The node is only recorded when some input requires grad.
inline Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                          std::vector<Tensor> inputs,
                          std::function<void(const TensorImpl&)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto fn = std::make_shared<GradFn>();
  fn->name = name;
  for (auto& in : inputs) fn->inputs.push_back(in.impl());
  fn->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(fn);
  return out;
}

// Topologically ordered record of the operations reachable from a root.
class GradTape {
 public:
  static GradTape record(const Tensor& root) {
    GradTape tape;
    std::unordered_set<const TensorImpl*> seen;
    // iterative post-order DFS: inputs land before the node that consumes them
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(root.impl().get(), 0);
    seen.insert(root.impl().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      const auto* fn = node->grad_fn.get();
      if (fn && next < fn->inputs.size()) {
        TensorImpl* child = fn->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        continue;
      }
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
    return tape;
  }

  const std::vector<TensorImpl*>& nodes() const { return nodes_; }

 private:
  std::vector<TensorImpl*> nodes_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("backward: loss does not depend on any trainable tensor");
  GradTape tape = GradTape::record(loss);
  for (TensorImpl* node : tape.nodes())
    if (node->grad_fn) node->grad.assign(node->data.size(), 0.0);
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    for (auto& in : node->grad_fn->inputs)
      if (in->requires_grad) in->ensure_grad();
    node->grad_fn->backward(*node);
  }
}

inline void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace eventface
