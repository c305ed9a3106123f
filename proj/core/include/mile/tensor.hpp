#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mile {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until something accumulates into it; same length as data otherwise.
  std::vector<double> grad;
  bool requires_grad = false;
  // False for tensors produced by a recorded operation.
  bool is_leaf = true;
};

/// Shared handle to a dense row-major double tensor.
///
/// Copies alias the same storage, the way parameters and activations are
/// passed around a tape. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  /// Grad buffer, allocated as zeros on first use.
  std::span<double> grad_mut() const;
  void zero_grad();

  Tensor clone() const;
  /// Same values, detached from any graph, no gradient.
  Tensor detach() const { return clone(); }

  TensorImpl* impl() const noexcept { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered tape of executed differentiable operations.
///
/// Operations record themselves into the graph that is active on the calling
/// thread (see Graph::Scope) whenever one of their inputs requires a gradient.
/// backward() replays the tape once, in reverse.
class Graph {
 public:
  // Receives d(loss)/d(output) and accumulates into the inputs' grads.
  using BackwardFn = std::function<void(std::span<const double>)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Makes a graph the recording target for the current thread.
  class Scope {
   public:
    explicit Scope(Graph& graph);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* previous_;
  };

  static Graph* active() noexcept;

  void record(const Tensor& output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward step that is
  /// reachable from `loss`. Intermediate gradients are released afterwards.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Record> records_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* previous_;
};

/// Backward through the graph active on this thread.
void backward(const Tensor& loss);

}  // namespace mile
