#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace adma::numerics {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// 64-byte aligned storage, so vectorized kernels split every buffer into the
/// same scalar head and packet body regardless of where the heap placed it.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode graph. Leaves have no backward rule.
struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until a gradient is first written
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  /// Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;

  [[nodiscard]] bool is_leaf() const noexcept { return !backward; }
  /// Grad buffer, zero-filled on first access.
  Buffer& grad_buffer();
};

/// Dense row-major f64 array with optional gradient tracking.
///
/// Tensors are cheap handles: copies share the underlying node. Values are
/// immutable after construction except through `mutable_data()` on leaves,
/// which is reserved for optimizer updates and checkpoint loading.
///
/// Gradients accumulate: calling `backward()` twice without `zero_grad()`
/// adds both contributions into every leaf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, const std::vector<double>& data, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, Buffer data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major matrix literal, e.g. matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  [[nodiscard]] std::size_t numel() const { return node_->data.size(); }
  /// Rows/cols of a rank-2 tensor; a rank-1 tensor is treated as one row.
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;

  [[nodiscard]] std::span<const double> data() const { return node_->data; }
  [[nodiscard]] std::span<double> mutable_data();
  [[nodiscard]] double item() const;
  [[nodiscard]] double operator[](std::size_t i) const { return node_->data[i]; }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const;
  [[nodiscard]] std::vector<double> to_vector() const { return {node_->data.begin(), node_->data.end()}; }

  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  /// Marks a leaf as trainable (or frozen).
  Tensor& set_requires_grad(bool value);
  [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; all zeros if nothing has been accumulated yet.
  [[nodiscard]] std::vector<double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Every gradient-tracked leaf reachable
  /// from here receives d(this)/d(leaf), added to whatever it already holds.
  void backward() const;

  /// Same values, no graph history, not gradient-tracked.
  [[nodiscard]] Tensor detach() const;
  /// Independent leaf copy of the values.
  [[nodiscard]] Tensor clone(bool requires_grad = false) const;

  [[nodiscard]] const char* op_name() const { return node_->op; }
  [[nodiscard]] const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Global switch for graph recording; thread-local.
bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (inference, target extraction).
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Keeps large freed buffers inside the process heap so that the next step's
/// tensors reuse already-mapped pages. glibc only; a no-op elsewhere.
void tune_allocator() noexcept;

/// When enabled, every op checks its output for NaN/Inf and throws NonFiniteError.
void set_finite_checks(bool enabled) noexcept;
bool finite_checks() noexcept;

/// Builds an op result. The backward rule is attached only when grad mode is on
/// and at least one input tracks gradients.
Tensor make_result(const char* op, Shape shape, Buffer data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

/// Adds `delta` into the input's gradient buffer, if that input tracks gradients.
void accumulate_grad(Node& input, std::span<const double> delta);

}  // namespace adma::numerics
