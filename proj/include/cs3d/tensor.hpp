#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cs3d {

/// Dense row-major extents, W fastest. Rank 0 (scalar) through 5.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t& operator[](std::size_t i) { return dims_[i]; }
  std::size_t numel() const;
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::vector<std::size_t> strides() const;

  std::string str() const;
  bool operator==(const Shape& other) const = default;

 private:
  std::vector<std::size_t> dims_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;
struct TensorImpl;

/// Hands a node's backward function the gradient buffers of its inputs.
/// `grad(i)` is null when input i does not need a gradient.
class GradSink {
 public:
  explicit GradSink(std::vector<double*> slots) : slots_(std::move(slots)) {}
  double* grad(std::size_t i) const { return slots_[i]; }
  bool wants(std::size_t i) const { return slots_[i] != nullptr; }

 private:
  std::vector<double*> slots_;
};

/// Backward rule: receives the output tensor (data + accumulated grad) and
/// adds each input's contribution into the sink.
using BackwardFn = std::function<void(const TensorImpl& out, const GradSink& sink)>;

struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until populated
  std::shared_ptr<Node> grad_fn;
};

/// Handle to shared tensor storage. Copies alias the same storage, like a
/// framework tensor; use `clone()` for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access, for parameter updates and construction only.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  /// Reverse-mode sweep from this scalar. Populates grad of every
  /// requires_grad leaf reachable from here, then discards the tape.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor reshape(const Shape& shape) const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(const char*, Shape, std::vector<double>,
                            std::initializer_list<Tensor>, BackwardFn);
  friend Tensor make_result(const char*, Shape, std::vector<double>,
                            const std::vector<Tensor>&, BackwardFn);

  std::shared_ptr<TensorImpl> impl_;
};

/// Creates an op output. The node is recorded only when grad mode is on and
/// at least one input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, BackwardFn fn);
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn fn);

/// Topologically ordered view of the tape reachable from a root.
struct Graph {
  std::vector<std::shared_ptr<TensorImpl>> nodes;  // inputs precede consumers
};

Graph build_graph(const Tensor& root);

/// Runs reverse mode over `graph` seeded at `loss` (must be scalar).
void backward(const Graph& graph, const Tensor& loss);

bool grad_enabled();

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace cs3d
