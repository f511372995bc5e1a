#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace s2tl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Allocation accounting for tensor storage and attention scratch buffers.
// Counters are process-wide; the benchmark reads them around a forward pass.
namespace memory {

std::size_t live_bytes();
std::size_t peak_bytes();
/// Resets the peak watermark to the current live byte count.
void reset_peak();

void note_alloc(std::size_t bytes);
void note_free(std::size_t bytes);

template <class T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <class U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    note_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace memory

using Buffer = std::vector<float, memory::TrackedAllocator<float>>;

namespace detail {

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  bool on_tape = false;  // produced by a recorded operation
};

}  // namespace detail

/// Dense row-major float32 array with optional participation in the gradient
/// tape. Copies are shallow: two Tensor handles may refer to the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor from(Shape shape, std::span<const float> values);
  static Tensor scalar(float value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  /// Mutable access; only valid for tensors not produced by a recorded op.
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// New leaf holding a copy of the data, detached from any tape.
  Tensor detach() const;

  // Internal handle used by op implementations.
  detail::TensorImpl& impl() const;
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_result(Shape shape, Buffer data);
};

/// Wraps freshly computed data into a tensor (no tape involvement).
Tensor make_result(Shape shape, Buffer data);

/// Backward rule of a recorded op: receives dL/d(output) and accumulates into
/// the inputs it captured.
using BackwardFn = std::function<void(std::span<const float> grad_out)>;

/// Ordered record of differentiable operations on the current thread.
/// Entries are appended in execution order, so inputs always precede the ops
/// that consume them; backward() walks the record once in reverse.
class Tape {
 public:
  static Tape& active();

  bool recording() const noexcept { return enabled_; }
  std::size_t size() const noexcept { return entries_.size(); }
  void clear();

  /// Records `output` if any input requires grad; marks the output
  /// accordingly. Returns `output` for chaining.
  Tensor record(Tensor output, std::initializer_list<Tensor> inputs, BackwardFn fn);

 private:
  struct Entry {
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  bool enabled_ = true;

  friend class NoGradGuard;
  friend void backward(const Tensor& loss);
};

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar loss. Gradients are added into every
/// reachable tensor that requires grad; the tape is consumed.
void backward(const Tensor& loss);

/// Grad buffer of `t`, allocated (zero-filled) on first use. Returns nullptr
/// when `t` does not require grad.
float* grad_sink(const Tensor& t);

}  // namespace s2tl
