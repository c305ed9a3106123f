#include "mile/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mile/error.hpp"

namespace mile {

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->data[0];
}

std::span<double> Tensor::grad_mut() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

namespace {
thread_local Graph* t_active_graph = nullptr;
}  // namespace

Graph::Scope::Scope(Graph& graph) : previous_(t_active_graph) {
  t_active_graph = &graph;
}

Graph::Scope::~Scope() { t_active_graph = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_graph) { t_active_graph = nullptr; }

NoGradScope::~NoGradScope() { t_active_graph = previous_; }

Graph* Graph::active() noexcept { return t_active_graph; }

void Graph::record(const Tensor& output, BackwardFn fn) {
  output.impl()->is_leaf = false;
  records_.push_back(Record{output, std::move(fn)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  Tensor seed = loss;
  if (!seed.requires_grad()) return;
  seed.grad_mut()[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    TensorImpl* out = it->output.impl();
    if (out->grad.empty()) continue;  // not reachable from loss
    it->fn(out->grad);
  }
  for (Record& r : records_) {
    r.output.impl()->grad.clear();
    r.output.impl()->grad.shrink_to_fit();
  }
}

void backward(const Tensor& loss) {
  Graph* g = Graph::active();
  if (g == nullptr) {
    Tensor t = loss;
    if (!t.defined() || t.numel() != 1) throw ContractError("backward() needs a scalar loss");
    if (t.requires_grad()) t.grad_mut()[0] += 1.0;
    return;
  }
  g->backward(loss);
}

}  // namespace mile
