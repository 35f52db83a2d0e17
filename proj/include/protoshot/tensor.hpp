#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A tensor is a cheap handle onto a shared node. Every operation whose inputs
// require gradients (and which runs while grad mode is enabled) records a
// backward rule on its output node; backward() then walks the recorded graph
// in reverse topological order. The core is instantiated for float (training)
// and double (test oracles).

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace protoshot {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

/// Allocates on 64-byte boundaries. Vectorized kernels peel unaligned heads,
/// so a fixed alignment keeps their summation order, and therefore results,
/// independent of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename Real>
using Buffer = std::vector<Real, AlignedAllocator<Real>>;

template <typename Real>
struct Node {
  Shape shape;
  Buffer<Real> values;
  Buffer<Real> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<detail::Node<Real>>;

  BasicTensor() = default;

  /// Throws std::invalid_argument when the extents do not match the value count.
  BasicTensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, Real value, bool requires_grad = false);
  static BasicTensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return values().size(); }

  std::span<const Real> values() const;
  /// Direct write access; intended for leaves (optimizer updates, perturbation).
  std::span<Real> mutable_values();
  Real item() const;

  bool requires_grad() const;
  /// Leaves only. Enabling allocates a zero gradient.
  void set_requires_grad(bool flag);

  bool has_grad() const;
  /// Empty span when no gradient has been allocated.
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;

  /// New leaf holding a copy of the values and no history.
  BasicTensor detach() const;

  const NodePtr& node() const { return node_; }
  static BasicTensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Whether operations currently record backward rules (thread-local).
bool grad_enabled();

/// Disables graph recording for the lifetime of the guard on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Topologically ordered view of the operations reachable from a root tensor.
template <typename Real>
class Graph {
 public:
  using NodePtr = typename BasicTensor<Real>::NodePtr;

  /// Collects every node reachable from root that requires a gradient.
  static Graph trace(const BasicTensor<Real>& root);

  /// Inputs precede the operations that consume them; root is last.
  std::span<const NodePtr> order() const { return order_; }

  /// Seeds the root gradient with one and runs each backward rule once.
  void run_backward() const;

 private:
  std::vector<NodePtr> order_;
};

/// Populates grad on every requires_grad tensor the scalar loss depends on.
/// Leaf gradients accumulate across calls; call zero_grad() between steps.
template <typename Real>
void backward(const BasicTensor<Real>& loss);

// ---------------------------------------------------------------------------
// Operations. All shape violations throw std::invalid_argument naming the
// offending dimension; non-finite outputs throw NumericalError.

/// input [B,C,H,W] or [C,H,W]; kernel [O,C,kh,kw]. Output keeps input rank.
template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel,
                         int stride, int padding);
/// As above with a per-output-channel bias [O].
template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel,
                         const BasicTensor<Real>& bias, int stride, int padding);

template <typename Real>
BasicTensor<Real> relu(const BasicTensor<Real>& x);

/// Non-overlapping max pooling over the last two axes. Extents must be
/// divisible by the window; ties route the gradient to the first cell in
/// row-major order.
template <typename Real>
BasicTensor<Real> max_pool2d(const BasicTensor<Real>& x, int window);

/// x [n,d_in] or [d_in]; weight [d_out,d_in]; bias [d_out]. Computes x Wᵀ + b.
template <typename Real>
BasicTensor<Real> linear(const BasicTensor<Real>& x, const BasicTensor<Real>& weight,
                         const BasicTensor<Real>& bias);
template <typename Real>
BasicTensor<Real> linear(const BasicTensor<Real>& x, const BasicTensor<Real>& weight);

template <typename Real>
BasicTensor<Real> reshape(const BasicTensor<Real>& x, Shape shape);

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> sub(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> mul(const BasicTensor<Real>& a, const BasicTensor<Real>& b);
template <typename Real>
BasicTensor<Real> scale(const BasicTensor<Real>& x, Real factor);

/// Elementwise square root; the derivative at exactly zero is taken as zero.
template <typename Real>
BasicTensor<Real> sqrt(const BasicTensor<Real>& x);

template <typename Real>
BasicTensor<Real> sum(const BasicTensor<Real>& x);
template <typename Real>
BasicTensor<Real> mean(const BasicTensor<Real>& x);

/// a [Q,H], b [K,H] -> [Q,K] of squared Euclidean distances.
template <typename Real>
BasicTensor<Real> pairwise_sq_distances(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

/// Row-wise log-softmax of x [n,k], computed with a max shift.
template <typename Real>
BasicTensor<Real> log_softmax_rows(const BasicTensor<Real>& x);

/// Mean over rows of -max(log_probs[i, labels[i]], log_floor). Entries below
/// the floor receive no gradient and are counted in *clamped when given.
template <typename Real>
BasicTensor<Real> nll_mean(const BasicTensor<Real>& log_probs, std::span<const int> labels,
                           Real log_floor, std::size_t* clamped = nullptr);

/// x [n,h] -> [groups,h]; row g is the mean of rows whose label is g.
/// Throws std::invalid_argument naming the first empty group.
template <typename Real>
BasicTensor<Real> group_mean_rows(const BasicTensor<Real>& x, std::span<const int> labels,
                                  int groups);

/// Gathers rows (first-axis slices) of x.
template <typename Real>
BasicTensor<Real> select_rows(const BasicTensor<Real>& x, std::span<const std::size_t> rows);

/// Stacks equally shaped tensors along a new leading axis.
template <typename Real>
BasicTensor<Real> stack(std::span<const BasicTensor<Real>> parts);

}  // namespace protoshot
