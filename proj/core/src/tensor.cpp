#include "s2tl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "s2tl/errors.hpp"

namespace s2tl {

std::size_t numel(const Shape& shape) {
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

namespace memory {
namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
}  // namespace

std::size_t live_bytes() { return g_live.load(); }
std::size_t peak_bytes() { return g_peak.load(); }
void reset_peak() { g_peak.store(g_live.load()); }

void note_alloc(std::size_t bytes) {
  const auto now = g_live.fetch_add(bytes) + bytes;
  auto peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void note_free(std::size_t bytes) { g_live.fetch_sub(bytes); }

}  // namespace memory

Tensor make_result(Shape shape, Buffer data) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = s2tl::numel(shape);
  return make_result(std::move(shape), Buffer(n, 0.0f));
}

Tensor Tensor::full(Shape shape, float value) {
  const auto n = s2tl::numel(shape);
  return make_result(std::move(shape), Buffer(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  return from(std::move(shape), std::span<const float>(values));
}

Tensor Tensor::from(Shape shape, std::span<const float> values) {
  return make_result(std::move(shape), Buffer(values.begin(), values.end()));
}

Tensor Tensor::scalar(float value) { return make_result({}, Buffer{value}); }

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const float> Tensor::data() const { return impl().data; }

std::span<float> Tensor::mutable_data() {
  if (impl().on_tape) throw ContractError("cannot mutate a tensor recorded on the tape");
  return impl().data;
}

float Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (impl().on_tape) throw ContractError("requires_grad can only be set on leaf tensors");
  impl().requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor " + shape_str(shape()) + " has no gradient");
  return impl().grad;
}

std::span<float> Tensor::mutable_grad() {
  auto& g = impl().grad;
  if (g.empty()) g.assign(impl().data.size(), 0.0f);
  return g;
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), 0.0f);
}

Tensor Tensor::detach() const { return make_result(shape(), impl().data); }

float* grad_sink(const Tensor& t) {
  auto& impl = t.impl();
  if (!impl.requires_grad) return nullptr;
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0f);
  return impl.grad.data();
}

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::clear() {
  for (auto& e : entries_) e.output->on_tape = false;
  entries_.clear();
}

Tensor Tape::record(Tensor output, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  if (!enabled_) return output;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return output;
  auto& impl = output.impl();
  impl.requires_grad = true;
  impl.on_tape = true;
  entries_.push_back({output.impl_ptr(), std::move(fn)});
  return output;
}

NoGradGuard::NoGradGuard() : previous_(Tape::active().enabled_) {
  Tape::active().enabled_ = false;
}

NoGradGuard::~NoGradGuard() { Tape::active().enabled_ = previous_; }

void backward(const Tensor& loss) {
  auto& tape = Tape::active();
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto& root = loss.impl();
  if (!root.on_tape && !root.requires_grad) {
    throw ContractError("backward() called on a loss that is not on the active tape");
  }
  if (root.grad.empty()) root.grad.assign(1, 0.0f);
  root.grad[0] += 1.0f;

  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.empty()) continue;  // not reachable from the loss
    it->backward(std::span<const float>(out.grad));
  }
  tape.clear();
}

}  // namespace s2tl
