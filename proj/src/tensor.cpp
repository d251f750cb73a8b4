#include "cs3d/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace cs3d {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("zero extent in shape " + str());
  }
}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("zero extent in shape " + str());
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::vector<std::size_t> Shape::strides() const {
  std::vector<std::size_t> s(dims_.size(), 1);
  for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
  return s;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape.numel() != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape.str());
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.numel(), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape().rank()) throw ShapeError("index rank mismatch for " + shape().str());
  auto strides = shape().strides();
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= shape()[i]) throw ShapeError("index out of range for " + shape().str());
    flat += v * strides[i++];
  }
  return impl_->data[flat];
}

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = on;
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->data, false);
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, impl_->requires_grad && is_leaf());
}

Tensor Tensor::reshape(const Shape& shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("cannot reshape " + this->shape().str() + " to " + shape.str());
  }
  return make_result("reshape", shape, impl_->data, {*this},
                     [](const TensorImpl& out, const GradSink& sink) {
                       double* g = sink.grad(0);
                       for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
                     });
}

void Tensor::backward() const {
  cs3d::backward(build_graph(*this), *this);
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->op = op;
  node->backward = std::move(fn);
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::move(node);
  return out;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, BackwardFn fn) {
  return make_result(op, std::move(shape), std::move(data), std::vector<Tensor>(inputs),
                     std::move(fn));
}

Graph build_graph(const Tensor& root) {
  Graph g;
  if (!root.defined() || root.impl()->grad_fn == nullptr) return g;
  // Iterative post-order DFS so deep networks do not overflow the stack.
  std::unordered_set<const TensorImpl*> seen;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto& inputs = impl->grad_fn->inputs;
    if (next < inputs.size()) {
      auto child = inputs[next++];
      if (child->grad_fn && seen.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    g.nodes.push_back(impl);
    stack.pop_back();
  }
  return g;
}

void backward(const Graph& graph, const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + loss.shape().str());
  }
  if (!loss.requires_grad()) return;
  auto& seed = loss.impl()->grad;
  if (seed.empty()) seed.assign(1, 0.0);
  seed[0] += 1.0;
  if (graph.nodes.empty()) return;  // loss is itself a leaf

  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    TensorImpl& out = **it;
    auto node = out.grad_fn;
    if (!out.grad.empty()) {
      std::vector<double*> slots;
      slots.reserve(node->inputs.size());
      for (auto& in : node->inputs) {
        if (!in->requires_grad) {
          slots.push_back(nullptr);
          continue;
        }
        if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
        slots.push_back(in->grad.data());
      }
      node->backward(out, GradSink(std::move(slots)));
    }
    // Tape is single-use: release saved state and intermediate gradients.
    out.grad_fn.reset();
    out.requires_grad = false;
    out.grad.clear();
    out.grad.shrink_to_fit();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace cs3d
