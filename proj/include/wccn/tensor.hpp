#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace wccn {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// One entry of the (implicit) computation graph. Nodes hold shared_ptrs to
// their inputs, so the graph is acyclic by construction and ids give the
// topological (insertion) order used by backward().
struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  std::uint64_t id = 0;
  const char* op = "leaf";

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

std::shared_ptr<Node> make_node(std::vector<std::size_t> shape, const char* op);
std::string shape_str(const std::vector<std::size_t>& s);
[[noreturn]] void shape_fail(const char* op, const std::string& expected,
                             const std::vector<std::size_t>& actual);

}  // namespace detail

// Value-semantic handle to a graph node. fp64 everywhere, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  explicit operator bool() const { return n_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return n_->shape; }
  std::size_t size() const { return n_->data.size(); }
  std::size_t rank() const { return n_->shape.size(); }
  std::vector<double>& data() { return n_->data; }
  const std::vector<double>& data() const { return n_->data; }
  std::vector<double>& grad() { return n_->grad; }
  const std::vector<double>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  double item() const;
  void zero_grad() { n_->grad.assign(n_->data.size(), 0.0); }
  std::shared_ptr<detail::Node> node() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

// ROI for roi_pool: {batch index, x0, y0, x1, y1}, half-open pixel coords in
// the feature map grid.
using Roi = std::array<int, 5>;

// Elementwise / basic ops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
// Copies values and cuts the graph: backward stops here, nothing flows to a.
Tensor detach(const Tensor& a);

// Reductions / normalization along one axis.
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor max_axis(const Tensor& a, std::size_t axis);
Tensor softmax_axis(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
// y = x * w^T + b with x: [N, in], w: [out, in], b: [out] (b may be empty).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Spatial ops on NCHW tensors.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor max_pool2d(const Tensor& x, int k, int stride);
Tensor avg_pool2d(const Tensor& x, int k, int stride);
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor global_max_pool(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, int factor);
// Max-pools each roi into [num_rois, C, ph, pw]; bin k covers
// [floor(k*L/ph), floor((k+1)*L/ph)). Gradient routes to argmax cells only
// (ties to the lowest linear index).
Tensor roi_pool(const Tensor& x, const std::vector<Roi>& rois, int ph, int pw);

// Reverse-mode sweep from a scalar loss. Visits reachable nodes once, in
// reverse insertion order; gradients accumulate additively across uses.
void backward(const Tensor& loss);

}  // namespace wccn
