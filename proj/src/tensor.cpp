#include "protoshot/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "protoshot/errors.hpp"

namespace protoshot {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

thread_local bool g_grad_enabled = true;

template <typename Real>
using Node = detail::Node<Real>;
using detail::Buffer;

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

template <typename Real>
void require_defined(const BasicTensor<Real>& t, const char* op, const char* arg) {
  if (!t.defined()) shape_fail(op, std::string(arg) + " is an undefined tensor");
}

template <typename Real>
bool wants_graph(std::initializer_list<const BasicTensor<Real>*> inputs) {
  if (!g_grad_enabled) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds the output node; attaches the backward rule only when recording.
template <typename Real>
BasicTensor<Real> make_result(const char* op, Shape shape, Buffer<Real> values, bool record,
                              std::initializer_list<const BasicTensor<Real>*> inputs,
                              std::function<void(Node<Real>&)> rule) {
  for (const Real v : values) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(op) + ": produced a non-finite value");
    }
  }
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  if (record) {
    node->requires_grad = true;
    for (const auto* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(rule);
  }
  return BasicTensor<Real>::from_node(std::move(node));
}

template <typename Real>
bool input_needs_grad(const Node<Real>& out, std::size_t i) {
  return out.inputs[i]->requires_grad;
}

template <typename Real>
Buffer<Real>& input_grad(Node<Real>& out, std::size_t i) {
  return out.inputs[i]->grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// BasicTensor

template <typename Real>
BasicTensor<Real>::BasicTensor(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw std::invalid_argument("tensor: extent of dimension " + std::to_string(i) +
                                  " must be positive in " + shape_string(shape));
    }
  }
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + shape_string(shape) + " holds " +
                                std::to_string(shape_size(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node<Real>>();
  node_->shape = std::move(shape);
  node_->values.assign(values.begin(), values.end());
  set_requires_grad(requires_grad);
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real{0}, requires_grad);
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return BasicTensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::scalar(Real value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<Real>{value}, requires_grad);
}

template <typename Real>
const Shape& BasicTensor<Real>::shape() const {
  if (!node_) throw std::logic_error("tensor: access to undefined tensor");
  return node_->shape;
}

template <typename Real>
std::size_t BasicTensor<Real>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for " +
                                shape_string(s));
  }
  return s[axis];
}

template <typename Real>
std::span<const Real> BasicTensor<Real>::values() const {
  if (!node_) throw std::logic_error("tensor: access to undefined tensor");
  return node_->values;
}

template <typename Real>
std::span<Real> BasicTensor<Real>::mutable_values() {
  if (!node_) throw std::logic_error("tensor: access to undefined tensor");
  return node_->values;
}

template <typename Real>
Real BasicTensor<Real>::item() const {
  if (size() != 1) {
    throw std::invalid_argument("tensor: item() needs exactly one value, shape is " +
                                shape_string(shape()));
  }
  return node_->values[0];
}

template <typename Real>
bool BasicTensor<Real>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename Real>
void BasicTensor<Real>::set_requires_grad(bool flag) {
  if (!node_) throw std::logic_error("tensor: access to undefined tensor");
  if (!node_->is_leaf()) {
    throw std::logic_error("tensor: requires_grad can only be changed on leaves");
  }
  node_->requires_grad = flag;
  if (flag) {
    node_->grad.assign(node_->values.size(), Real{0});
  } else {
    node_->grad.clear();
  }
}

template <typename Real>
bool BasicTensor<Real>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename Real>
std::span<const Real> BasicTensor<Real>::grad() const {
  if (!node_) return {};
  return node_->grad;
}

template <typename Real>
std::span<Real> BasicTensor<Real>::mutable_grad() {
  if (!node_) throw std::logic_error("tensor: access to undefined tensor");
  if (node_->grad.size() != node_->values.size()) node_->grad.assign(node_->values.size(), Real{0});
  return node_->grad;
}

template <typename Real>
void BasicTensor<Real>::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.assign(node_->values.size(), Real{0});
}

template <typename Real>
bool BasicTensor<Real>::is_leaf() const {
  return !node_ || node_->is_leaf();
}

template <typename Real>
const char* BasicTensor<Real>::op_name() const {
  return node_ ? node_->op : "undefined";
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::detach() const {
  return BasicTensor(shape(), std::vector<Real>(values().begin(), values().end()));
}

template <typename Real>
BasicTensor<Real> BasicTensor<Real>::from_node(NodePtr node) {
  BasicTensor t;
  t.node_ = std::move(node);
  return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Graph and backward

template <typename Real>
Graph<Real> Graph<Real>::trace(const BasicTensor<Real>& root) {
  Graph graph;
  if (!root.defined() || !root.requires_grad()) return graph;
  // Iterative post-order DFS; inputs are emitted before their consumers.
  std::unordered_set<const detail::Node<Real>*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const NodePtr& child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    graph.order_.push_back(node);
    stack.pop_back();
  }
  return graph;
}

template <typename Real>
void Graph<Real>::run_backward() const {
  if (order_.empty()) return;
  for (const auto& node : order_) {
    if (node->is_leaf()) {
      if (node->grad.size() != node->values.size()) node->grad.assign(node->values.size(), Real{0});
    } else {
      node->grad.assign(node->values.size(), Real{0});
    }
  }
  order_.back()->grad[0] += Real{1};
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

template <typename Real>
void backward(const BasicTensor<Real>& loss) {
  require_defined(loss, "backward", "loss");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_string(loss.shape()));
  }
  Graph<Real>::trace(loss).run_backward();
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kh, kw;
  std::size_t out_h, out_w;
  int stride, padding;

  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
};

template <typename Real>
ConvGeometry conv_geometry(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel,
                           int stride, int padding) {
  const char* op = "conv2d";
  require_defined(input, op, "input");
  require_defined(kernel, op, "kernel");
  if (input.rank() != 3 && input.rank() != 4) {
    shape_fail(op, "input must be [C,H,W] or [B,C,H,W], got " + shape_string(input.shape()));
  }
  if (kernel.rank() != 4) {
    shape_fail(op, "kernel must be [C_out,C_in,kh,kw], got " + shape_string(kernel.shape()));
  }
  if (stride < 1) shape_fail(op, "stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) shape_fail(op, "padding must be >= 0, got " + std::to_string(padding));
  const std::size_t off = input.rank() == 4 ? 1 : 0;
  ConvGeometry g{};
  g.batch = off ? input.dim(0) : 1;
  g.in_ch = input.dim(off);
  g.height = input.dim(off + 1);
  g.width = input.dim(off + 2);
  g.out_ch = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (kernel.dim(1) != g.in_ch) {
    shape_fail(op, "channel dimension mismatch: input has " + std::to_string(g.in_ch) +
                       " channels, kernel expects " + std::to_string(kernel.dim(1)));
  }
  const std::size_t padded_h = g.height + 2 * static_cast<std::size_t>(padding);
  const std::size_t padded_w = g.width + 2 * static_cast<std::size_t>(padding);
  if (g.kh > padded_h) {
    shape_fail(op, "kernel height " + std::to_string(g.kh) + " exceeds padded input height " +
                       std::to_string(padded_h));
  }
  if (g.kw > padded_w) {
    shape_fail(op, "kernel width " + std::to_string(g.kw) + " exceeds padded input width " +
                       std::to_string(padded_w));
  }
  g.out_h = (padded_h - g.kh) / g.stride + 1;
  g.out_w = (padded_w - g.kw) / g.stride + 1;
  return g;
}

// cols is [C*kh*kw, out_h*out_w] for one image.
template <typename Real>
void im2col(const Real* image, const ConvGeometry& g, Real* cols) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const Real* channel = image + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        Real* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(i);
          Real* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, Real{0});
            continue;
          }
          const Real* src = channel + static_cast<std::size_t>(y) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(j);
            dst[ox] = (x < 0 || x >= static_cast<long>(g.width)) ? Real{0}
                                                                 : src[static_cast<std::size_t>(x)];
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* cols, const ConvGeometry& g, Real* image_grad) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    Real* channel = image_grad + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Real* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy) * g.stride - g.padding + static_cast<long>(i);
          if (y < 0 || y >= static_cast<long>(g.height)) continue;
          Real* dst = channel + static_cast<std::size_t>(y) * g.width;
          const Real* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox) * g.stride - g.padding + static_cast<long>(j);
            if (x >= 0 && x < static_cast<long>(g.width)) dst[static_cast<std::size_t>(x)] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Real>
BasicTensor<Real> conv2d_impl(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel,
                              const BasicTensor<Real>* bias, int stride, int padding) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  if (bias) {
    require_defined(*bias, "conv2d", "bias");
    if (bias->rank() != 1 || bias->dim(0) != g.out_ch) {
      shape_fail("conv2d", "bias must be [" + std::to_string(g.out_ch) + "], got " +
                               shape_string(bias->shape()));
    }
  }
  const bool record = bias ? wants_graph({&input, &kernel, bias}) : wants_graph({&input, &kernel});
  const bool keep_cols = record && kernel.requires_grad();

  const std::size_t patch = g.patch();
  const std::size_t plane = g.out_plane();
  const std::size_t in_image = g.in_ch * g.height * g.width;
  const std::size_t out_image = g.out_ch * plane;

  Buffer<Real> out(g.batch * out_image);
  Buffer<Real> cols_all(keep_cols ? g.batch * patch * plane : 0);
  Buffer<Real> scratch(keep_cols ? 0 : patch * plane);

  ConstMatMap<Real> weights(kernel.values().data(), g.out_ch, patch);
  for (std::size_t b = 0; b < g.batch; ++b) {
    Real* cols = keep_cols ? cols_all.data() + b * patch * plane : scratch.data();
    im2col(input.values().data() + b * in_image, g, cols);
    MatMap<Real> result(out.data() + b * out_image, g.out_ch, plane);
    result.noalias() = weights * ConstMatMap<Real>(cols, patch, plane);
    if (bias) {
      for (std::size_t o = 0; o < g.out_ch; ++o) result.row(o).array() += bias->values()[o];
    }
  }

  Shape out_shape = input.rank() == 4 ? Shape{g.batch, g.out_ch, g.out_h, g.out_w}
                                      : Shape{g.out_ch, g.out_h, g.out_w};
  auto rule = [g, cols = std::move(cols_all), has_bias = bias != nullptr](Node<Real>& self) {
    const std::size_t patch = g.patch();
    const std::size_t plane = g.out_plane();
    const std::size_t in_image = g.in_ch * g.height * g.width;
    const std::size_t out_image = g.out_ch * plane;
    const auto& kernel_node = *self.inputs[1];
    ConstMatMap<Real> weights(kernel_node.values.data(), g.out_ch, patch);
    Buffer<Real> dcols(input_needs_grad(self, 0) ? patch * plane : 0);
    for (std::size_t b = 0; b < g.batch; ++b) {
      ConstMatMap<Real> dy(self.grad.data() + b * out_image, g.out_ch, plane);
      if (input_needs_grad(self, 1)) {
        MatMap<Real> dk(input_grad(self, 1).data(), g.out_ch, patch);
        dk.noalias() += dy * ConstMatMap<Real>(cols.data() + b * patch * plane, patch, plane).transpose();
      }
      if (has_bias && input_needs_grad(self, 2)) {
        auto& db = input_grad(self, 2);
        for (std::size_t o = 0; o < g.out_ch; ++o) db[o] += dy.row(o).sum();
      }
      if (input_needs_grad(self, 0)) {
        MatMap<Real> dc(dcols.data(), patch, plane);
        dc.noalias() = weights.transpose() * dy;
        col2im_add(dcols.data(), g, input_grad(self, 0).data() + b * in_image);
      }
    }
  };
  if (bias) {
    return make_result<Real>("conv2d", std::move(out_shape), std::move(out), record,
                             {&input, &kernel, bias}, std::move(rule));
  }
  return make_result<Real>("conv2d", std::move(out_shape), std::move(out), record,
                           {&input, &kernel}, std::move(rule));
}

}  // namespace

template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel,
                         int stride, int padding) {
  return conv2d_impl<Real>(input, kernel, nullptr, stride, padding);
}

template <typename Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& input, const BasicTensor<Real>& kernel,
                         const BasicTensor<Real>& bias, int stride, int padding) {
  return conv2d_impl<Real>(input, kernel, &bias, stride, padding);
}

// ---------------------------------------------------------------------------
// Elementwise and pooling

template <typename Real>
BasicTensor<Real> relu(const BasicTensor<Real>& x) {
  require_defined(x, "relu", "x");
  Buffer<Real> out(x.values().begin(), x.values().end());
  for (Real& v : out) v = v > Real{0} ? v : Real{0};
  return make_result<Real>("relu", x.shape(), std::move(out), wants_graph({&x}), {&x},
                           [](Node<Real>& self) {
                             auto& dx = input_grad(self, 0);
                             const auto& in = self.inputs[0]->values;
                             for (std::size_t i = 0; i < dx.size(); ++i) {
                               if (in[i] > Real{0}) dx[i] += self.grad[i];
                             }
                           });
}

template <typename Real>
BasicTensor<Real> max_pool2d(const BasicTensor<Real>& x, int window) {
  const char* op = "max_pool2d";
  require_defined(x, op, "x");
  if (window < 1) shape_fail(op, "window must be >= 1, got " + std::to_string(window));
  if (x.rank() < 2) shape_fail(op, "input needs two spatial axes, got " + shape_string(x.shape()));
  const std::size_t w = static_cast<std::size_t>(window);
  const std::size_t h_axis = x.rank() - 2;
  const std::size_t height = x.dim(h_axis);
  const std::size_t width = x.dim(h_axis + 1);
  if (height % w != 0) {
    shape_fail(op, "height " + std::to_string(height) + " (dimension " + std::to_string(h_axis) +
                       ") is not divisible by window " + std::to_string(window));
  }
  if (width % w != 0) {
    shape_fail(op, "width " + std::to_string(width) + " (dimension " +
                       std::to_string(h_axis + 1) + ") is not divisible by window " +
                       std::to_string(window));
  }
  const std::size_t planes = x.size() / (height * width);
  const std::size_t oh = height / w;
  const std::size_t ow = width / w;
  Buffer<Real> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto in = x.values();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * height * width;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * w * width + ox * w;
        for (std::size_t i = 0; i < w; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t idx = base + (oy * w + i) * width + ox * w + j;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  Shape shape = x.shape();
  shape[h_axis] = oh;
  shape[h_axis + 1] = ow;
  return make_result<Real>(op, std::move(shape), std::move(out), wants_graph({&x}), {&x},
                           [argmax = std::move(argmax)](Node<Real>& self) {
                             auto& dx = input_grad(self, 0);
                             for (std::size_t o = 0; o < argmax.size(); ++o) {
                               dx[argmax[o]] += self.grad[o];
                             }
                           });
}

// ---------------------------------------------------------------------------
// Linear

namespace {

template <typename Real>
BasicTensor<Real> linear_impl(const BasicTensor<Real>& x, const BasicTensor<Real>& weight,
                              const BasicTensor<Real>* bias) {
  const char* op = "linear";
  require_defined(x, op, "x");
  require_defined(weight, op, "weight");
  if (x.rank() != 1 && x.rank() != 2) {
    shape_fail(op, "x must be [n,d_in] or [d_in], got " + shape_string(x.shape()));
  }
  if (weight.rank() != 2) {
    shape_fail(op, "weight must be [d_out,d_in], got " + shape_string(weight.shape()));
  }
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t d_in = x.dim(x.rank() - 1);
  const std::size_t d_out = weight.dim(0);
  if (weight.dim(1) != d_in) {
    shape_fail(op, "inner dimension mismatch: x has d_in=" + std::to_string(d_in) +
                       ", weight has d_in=" + std::to_string(weight.dim(1)));
  }
  if (bias) {
    require_defined(*bias, op, "bias");
    if (bias->rank() != 1 || bias->dim(0) != d_out) {
      shape_fail(op, "bias must be [" + std::to_string(d_out) + "], got " +
                         shape_string(bias->shape()));
    }
  }
  Buffer<Real> out(rows * d_out);
  MatMap<Real> y(out.data(), rows, d_out);
  ConstMatMap<Real> xm(x.values().data(), rows, d_in);
  ConstMatMap<Real> wm(weight.values().data(), d_out, d_in);
  y.noalias() = xm * wm.transpose();
  if (bias) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < d_out; ++o) out[r * d_out + o] += bias->values()[o];
    }
  }
  Shape shape = x.rank() == 2 ? Shape{rows, d_out} : Shape{d_out};
  const bool record = bias ? wants_graph({&x, &weight, bias}) : wants_graph({&x, &weight});
  auto rule = [rows, d_in, d_out, has_bias = bias != nullptr](Node<Real>& self) {
    ConstMatMap<Real> dy(self.grad.data(), rows, d_out);
    if (input_needs_grad(self, 0)) {
      MatMap<Real> dx(input_grad(self, 0).data(), rows, d_in);
      dx.noalias() += dy * ConstMatMap<Real>(self.inputs[1]->values.data(), d_out, d_in);
    }
    if (input_needs_grad(self, 1)) {
      MatMap<Real> dw(input_grad(self, 1).data(), d_out, d_in);
      dw.noalias() += dy.transpose() * ConstMatMap<Real>(self.inputs[0]->values.data(), rows, d_in);
    }
    if (has_bias && input_needs_grad(self, 2)) {
      auto& db = input_grad(self, 2);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < d_out; ++o) db[o] += self.grad[r * d_out + o];
      }
    }
  };
  if (bias) {
    return make_result<Real>(op, std::move(shape), std::move(out), record, {&x, &weight, bias},
                             std::move(rule));
  }
  return make_result<Real>(op, std::move(shape), std::move(out), record, {&x, &weight},
                           std::move(rule));
}

}  // namespace

template <typename Real>
BasicTensor<Real> linear(const BasicTensor<Real>& x, const BasicTensor<Real>& weight,
                         const BasicTensor<Real>& bias) {
  return linear_impl<Real>(x, weight, &bias);
}

template <typename Real>
BasicTensor<Real> linear(const BasicTensor<Real>& x, const BasicTensor<Real>& weight) {
  return linear_impl<Real>(x, weight, nullptr);
}

// ---------------------------------------------------------------------------
// Shape manipulation and arithmetic

template <typename Real>
BasicTensor<Real> reshape(const BasicTensor<Real>& x, Shape shape) {
  require_defined(x, "reshape", "x");
  if (shape_size(shape) != x.size()) {
    shape_fail("reshape", "cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Buffer<Real> out(x.values().begin(), x.values().end());
  return make_result<Real>("reshape", std::move(shape), std::move(out), wants_graph({&x}), {&x},
                           [](Node<Real>& self) {
                             auto& dx = input_grad(self, 0);
                             for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
                           });
}

namespace {

template <typename Real>
void require_same_shape(const BasicTensor<Real>& a, const BasicTensor<Real>& b, const char* op) {
  require_defined(a, op, "a");
  require_defined(b, op, "b");
  if (a.shape() != b.shape()) {
    const std::size_t n = std::min(a.rank(), b.rank());
    std::size_t axis = 0;
    while (axis < n && a.shape()[axis] == b.shape()[axis]) ++axis;
    shape_fail(op, "operands differ at dimension " + std::to_string(axis) + ": " +
                       shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

template <typename Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_same_shape(a, b, "add");
  Buffer<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<Real>("add", a.shape(), std::move(out), wants_graph({&a, &b}), {&a, &b},
                           [](Node<Real>& self) {
                             for (std::size_t k = 0; k < 2; ++k) {
                               if (!input_needs_grad(self, k)) continue;
                               auto& d = input_grad(self, k);
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
                             }
                           });
}

template <typename Real>
BasicTensor<Real> sub(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_same_shape(a, b, "sub");
  Buffer<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<Real>("sub", a.shape(), std::move(out), wants_graph({&a, &b}), {&a, &b},
                           [](Node<Real>& self) {
                             if (input_needs_grad(self, 0)) {
                               auto& d = input_grad(self, 0);
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
                             }
                             if (input_needs_grad(self, 1)) {
                               auto& d = input_grad(self, 1);
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
                             }
                           });
}

template <typename Real>
BasicTensor<Real> mul(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_same_shape(a, b, "mul");
  Buffer<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<Real>("mul", a.shape(), std::move(out), wants_graph({&a, &b}), {&a, &b},
                           [](Node<Real>& self) {
                             const auto& av = self.inputs[0]->values;
                             const auto& bv = self.inputs[1]->values;
                             if (input_needs_grad(self, 0)) {
                               auto& d = input_grad(self, 0);
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * bv[i];
                             }
                             if (input_needs_grad(self, 1)) {
                               auto& d = input_grad(self, 1);
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * av[i];
                             }
                           });
}

template <typename Real>
BasicTensor<Real> scale(const BasicTensor<Real>& x, Real factor) {
  require_defined(x, "scale", "x");
  Buffer<Real> out(x.values().begin(), x.values().end());
  for (Real& v : out) v *= factor;
  return make_result<Real>("scale", x.shape(), std::move(out), wants_graph({&x}), {&x},
                           [factor](Node<Real>& self) {
                             auto& d = input_grad(self, 0);
                             for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * self.grad[i];
                           });
}

template <typename Real>
BasicTensor<Real> sqrt(const BasicTensor<Real>& x) {
  require_defined(x, "sqrt", "x");
  Buffer<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = x.values()[i];
    if (v < Real{0}) throw NumericalError("sqrt: negative argument at index " + std::to_string(i));
    out[i] = std::sqrt(v);
  }
  return make_result<Real>("sqrt", x.shape(), std::move(out), wants_graph({&x}), {&x},
                           [](Node<Real>& self) {
                             auto& d = input_grad(self, 0);
                             for (std::size_t i = 0; i < d.size(); ++i) {
                               if (self.values[i] > Real{0}) {
                                 d[i] += self.grad[i] / (Real{2} * self.values[i]);
                               }
                             }
                           });
}

template <typename Real>
BasicTensor<Real> sum(const BasicTensor<Real>& x) {
  require_defined(x, "sum", "x");
  double total = 0.0;
  for (const Real v : x.values()) total += static_cast<double>(v);
  return make_result<Real>("sum", Shape{}, {static_cast<Real>(total)}, wants_graph({&x}), {&x},
                           [](Node<Real>& self) {
                             auto& d = input_grad(self, 0);
                             for (Real& v : d) v += self.grad[0];
                           });
}

template <typename Real>
BasicTensor<Real> mean(const BasicTensor<Real>& x) {
  require_defined(x, "mean", "x");
  double total = 0.0;
  for (const Real v : x.values()) total += static_cast<double>(v);
  const double n = static_cast<double>(x.size());
  return make_result<Real>("mean", Shape{}, {static_cast<Real>(total / n)}, wants_graph({&x}),
                           {&x}, [n](Node<Real>& self) {
                             auto& d = input_grad(self, 0);
                             const Real g = static_cast<Real>(self.grad[0] / n);
                             for (Real& v : d) v += g;
                           });
}

// ---------------------------------------------------------------------------
// Metric-learning primitives

template <typename Real>
BasicTensor<Real> pairwise_sq_distances(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  const char* op = "pairwise_sq_distances";
  require_defined(a, op, "a");
  require_defined(b, op, "b");
  if (a.rank() != 2) shape_fail(op, "a must be [Q,H], got " + shape_string(a.shape()));
  if (b.rank() != 2) shape_fail(op, "b must be [K,H], got " + shape_string(b.shape()));
  const std::size_t q = a.dim(0), k = b.dim(0), h = a.dim(1);
  if (b.dim(1) != h) {
    shape_fail(op, "embedding dimension mismatch: " + std::to_string(h) + " vs " +
                       std::to_string(b.dim(1)));
  }
  Buffer<Real> out(q * k);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < h; ++c) {
        const double diff = static_cast<double>(av[i * h + c]) - static_cast<double>(bv[j * h + c]);
        acc += diff * diff;
      }
      out[i * k + j] = static_cast<Real>(acc);
    }
  }
  return make_result<Real>(op, Shape{q, k}, std::move(out), wants_graph({&a, &b}), {&a, &b},
                           [q, k, h](Node<Real>& self) {
                             const auto& av = self.inputs[0]->values;
                             const auto& bv = self.inputs[1]->values;
                             const bool da_needed = input_needs_grad(self, 0);
                             const bool db_needed = input_needs_grad(self, 1);
                             for (std::size_t i = 0; i < q; ++i) {
                               for (std::size_t j = 0; j < k; ++j) {
                                 const Real g = Real{2} * self.grad[i * k + j];
                                 for (std::size_t c = 0; c < h; ++c) {
                                   const Real diff = av[i * h + c] - bv[j * h + c];
                                   if (da_needed) input_grad(self, 0)[i * h + c] += g * diff;
                                   if (db_needed) input_grad(self, 1)[j * h + c] -= g * diff;
                                 }
                               }
                             }
                           });
}

template <typename Real>
BasicTensor<Real> log_softmax_rows(const BasicTensor<Real>& x) {
  const char* op = "log_softmax_rows";
  require_defined(x, op, "x");
  if (x.rank() != 2) shape_fail(op, "x must be [n,k], got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), k = x.dim(1);
  Buffer<Real> out(n * k);
  const auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = xv.data() + i * k;
    const double shift = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j]) - shift);
    const double log_total = std::log(total);
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = static_cast<Real>(static_cast<double>(row[j]) - shift - log_total);
    }
  }
  return make_result<Real>(op, Shape{n, k}, std::move(out), wants_graph({&x}), {&x},
                           [n, k](Node<Real>& self) {
                             auto& dx = input_grad(self, 0);
                             for (std::size_t i = 0; i < n; ++i) {
                               Real total = 0;
                               for (std::size_t j = 0; j < k; ++j) total += self.grad[i * k + j];
                               for (std::size_t j = 0; j < k; ++j) {
                                 const Real p = std::exp(self.values[i * k + j]);
                                 dx[i * k + j] += self.grad[i * k + j] - p * total;
                               }
                             }
                           });
}

template <typename Real>
BasicTensor<Real> nll_mean(const BasicTensor<Real>& log_probs, std::span<const int> labels,
                           Real log_floor, std::size_t* clamped) {
  const char* op = "nll_mean";
  require_defined(log_probs, op, "log_probs");
  if (log_probs.rank() != 2) {
    shape_fail(op, "log_probs must be [n,k], got " + shape_string(log_probs.shape()));
  }
  const std::size_t n = log_probs.dim(0), k = log_probs.dim(1);
  if (labels.size() != n) {
    shape_fail(op, "expected " + std::to_string(n) + " labels, got " +
                       std::to_string(labels.size()));
  }
  std::vector<char> floored(n, 0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      shape_fail(op, "label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                         " outside [0," + std::to_string(k) + ")");
    }
    Real lp = log_probs.values()[i * k + static_cast<std::size_t>(labels[i])];
    if (lp < log_floor) {
      lp = log_floor;
      floored[i] = 1;
      ++count;
    }
    total -= static_cast<double>(lp);
  }
  if (clamped) *clamped = count;
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result<Real>(op, Shape{}, {static_cast<Real>(total / static_cast<double>(n))},
                           wants_graph({&log_probs}), {&log_probs},
                           [n, k, floored = std::move(floored),
                            label_copy = std::move(label_copy)](Node<Real>& self) {
                             auto& d = input_grad(self, 0);
                             const Real g = self.grad[0] / static_cast<Real>(n);
                             for (std::size_t i = 0; i < n; ++i) {
                               if (floored[i]) continue;
                               d[i * k + static_cast<std::size_t>(label_copy[i])] -= g;
                             }
                           });
}

template <typename Real>
BasicTensor<Real> group_mean_rows(const BasicTensor<Real>& x, std::span<const int> labels,
                                  int groups) {
  const char* op = "group_mean_rows";
  require_defined(x, op, "x");
  if (x.rank() != 2) shape_fail(op, "x must be [n,h], got " + shape_string(x.shape()));
  if (groups < 1) shape_fail(op, "need at least one group");
  const std::size_t n = x.dim(0), h = x.dim(1);
  const std::size_t g = static_cast<std::size_t>(groups);
  if (labels.size() != n) {
    shape_fail(op, "expected " + std::to_string(n) + " labels, got " +
                       std::to_string(labels.size()));
  }
  std::vector<std::size_t> counts(g, 0);
  for (const int label : labels) {
    if (label < 0 || label >= groups) {
      shape_fail(op, "label " + std::to_string(label) + " outside [0," + std::to_string(groups) + ")");
    }
    ++counts[static_cast<std::size_t>(label)];
  }
  for (std::size_t c = 0; c < g; ++c) {
    if (counts[c] == 0) shape_fail(op, "class " + std::to_string(c) + " has no rows");
  }
  std::vector<double> acc(g * h, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < h; ++j) acc[c * h + j] += static_cast<double>(x.values()[i * h + j]);
  }
  Buffer<Real> out(g * h);
  for (std::size_t c = 0; c < g; ++c) {
    for (std::size_t j = 0; j < h; ++j) {
      out[c * h + j] = static_cast<Real>(acc[c * h + j] / static_cast<double>(counts[c]));
    }
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result<Real>(op, Shape{g, h}, std::move(out), wants_graph({&x}), {&x},
                           [h, counts = std::move(counts),
                            label_copy = std::move(label_copy)](Node<Real>& self) {
                             auto& d = input_grad(self, 0);
                             for (std::size_t i = 0; i < label_copy.size(); ++i) {
                               const std::size_t c = static_cast<std::size_t>(label_copy[i]);
                               const Real inv = Real{1} / static_cast<Real>(counts[c]);
                               for (std::size_t j = 0; j < h; ++j) {
                                 d[i * h + j] += self.grad[c * h + j] * inv;
                               }
                             }
                           });
}

template <typename Real>
BasicTensor<Real> select_rows(const BasicTensor<Real>& x, std::span<const std::size_t> rows) {
  const char* op = "select_rows";
  require_defined(x, op, "x");
  if (x.rank() < 1) shape_fail(op, "x must have a leading axis");
  if (rows.empty()) shape_fail(op, "no rows selected");
  const std::size_t stride = x.size() / x.dim(0);
  Buffer<Real> out(rows.size() * stride);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) {
      shape_fail(op, "row " + std::to_string(rows[r]) + " outside dimension 0 of extent " +
                         std::to_string(x.dim(0)));
    }
    std::copy_n(x.values().data() + rows[r] * stride, stride, out.data() + r * stride);
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  return make_result<Real>(op, std::move(shape), std::move(out), wants_graph({&x}), {&x},
                           [stride, picked = std::move(picked)](Node<Real>& self) {
                             auto& d = input_grad(self, 0);
                             for (std::size_t r = 0; r < picked.size(); ++r) {
                               for (std::size_t j = 0; j < stride; ++j) {
                                 d[picked[r] * stride + j] += self.grad[r * stride + j];
                               }
                             }
                           });
}

template <typename Real>
BasicTensor<Real> stack(std::span<const BasicTensor<Real>> parts) {
  const char* op = "stack";
  if (parts.empty()) shape_fail(op, "nothing to stack");
  for (const auto& p : parts) require_defined(p, op, "part");
  const Shape& inner = parts[0].shape();
  const std::size_t stride = parts[0].size();
  Buffer<Real> out;
  out.reserve(parts.size() * stride);
  bool record = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].shape() != inner) {
      shape_fail(op, "part " + std::to_string(i) + " has shape " + shape_string(parts[i].shape()) +
                         ", expected " + shape_string(inner));
    }
    out.insert(out.end(), parts[i].values().begin(), parts[i].values().end());
    record = record || parts[i].requires_grad();
  }
  record = record && g_grad_enabled;
  for (const Real v : out) {
    if (!std::isfinite(v)) throw NumericalError("stack: produced a non-finite value");
  }
  Shape shape;
  shape.push_back(parts.size());
  shape.insert(shape.end(), inner.begin(), inner.end());
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->values = std::move(out);
  node->op = op;
  if (record) {
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node());
    node->backward = [stride](Node<Real>& self) {
      for (std::size_t i = 0; i < self.inputs.size(); ++i) {
        if (!self.inputs[i]->requires_grad) continue;
        auto& d = self.inputs[i]->grad;
        for (std::size_t j = 0; j < stride; ++j) d[j] += self.grad[i * stride + j];
      }
    };
  }
  return BasicTensor<Real>::from_node(std::move(node));
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define PROTOSHOT_INSTANTIATE(Real)                                                               \
  template class BasicTensor<Real>;                                                               \
  template class Graph<Real>;                                                                     \
  template void backward<Real>(const BasicTensor<Real>&);                                         \
  template BasicTensor<Real> conv2d<Real>(const BasicTensor<Real>&, const BasicTensor<Real>&, int, \
                                          int);                                                   \
  template BasicTensor<Real> conv2d<Real>(const BasicTensor<Real>&, const BasicTensor<Real>&,     \
                                          const BasicTensor<Real>&, int, int);                    \
  template BasicTensor<Real> relu<Real>(const BasicTensor<Real>&);                                \
  template BasicTensor<Real> max_pool2d<Real>(const BasicTensor<Real>&, int);                     \
  template BasicTensor<Real> linear<Real>(const BasicTensor<Real>&, const BasicTensor<Real>&,     \
                                          const BasicTensor<Real>&);                              \
  template BasicTensor<Real> linear<Real>(const BasicTensor<Real>&, const BasicTensor<Real>&);    \
  template BasicTensor<Real> reshape<Real>(const BasicTensor<Real>&, Shape);                      \
  template BasicTensor<Real> add<Real>(const BasicTensor<Real>&, const BasicTensor<Real>&);       \
  template BasicTensor<Real> sub<Real>(const BasicTensor<Real>&, const BasicTensor<Real>&);       \
  template BasicTensor<Real> mul<Real>(const BasicTensor<Real>&, const BasicTensor<Real>&);       \
  template BasicTensor<Real> scale<Real>(const BasicTensor<Real>&, Real);                         \
  template BasicTensor<Real> sqrt<Real>(const BasicTensor<Real>&);                                \
  template BasicTensor<Real> sum<Real>(const BasicTensor<Real>&);                                 \
  template BasicTensor<Real> mean<Real>(const BasicTensor<Real>&);                                \
  template BasicTensor<Real> pairwise_sq_distances<Real>(const BasicTensor<Real>&,                \
                                                         const BasicTensor<Real>&);               \
  template BasicTensor<Real> log_softmax_rows<Real>(const BasicTensor<Real>&);                    \
  template BasicTensor<Real> nll_mean<Real>(const BasicTensor<Real>&, std::span<const int>, Real, \
                                            std::size_t*);                                        \
  template BasicTensor<Real> group_mean_rows<Real>(const BasicTensor<Real>&,                      \
                                                   std::span<const int>, int);                    \
  template BasicTensor<Real> select_rows<Real>(const BasicTensor<Real>&,                          \
                                               std::span<const std::size_t>);                     \
  template BasicTensor<Real> stack<Real>(std::span<const BasicTensor<Real>>);

PROTOSHOT_INSTANTIATE(float)
PROTOSHOT_INSTANTIATE(double)

#undef PROTOSHOT_INSTANTIATE

}  // namespace protoshot
