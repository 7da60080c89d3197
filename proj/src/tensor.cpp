#include "wccn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "wccn/kernels.hpp"

namespace wccn {

namespace detail {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

std::shared_ptr<Node> make_node(std::vector<std::size_t> shape, const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  std::size_t sz = 1;
  for (auto d : n->shape) sz *= d;
  n->data.assign(sz, 0.0);
  n->id = g_next_id.fetch_add(1);
  n->op = op;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void shape_fail(const char* op, const std::string& expected,
                const std::vector<std::size_t>& actual) {
  throw ShapeError(std::string(op) + ": expected " + expected + ", got " +
                   shape_str(actual));
}

}  // namespace detail

using detail::Node;

namespace {

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) d ? n *= d : n = 0;
  return n;
}

Tensor make_op(std::vector<std::size_t> shape, const char* op,
               std::vector<Tensor> inputs, std::function<void(Node&)> bwd) {
  auto n = detail::make_node(std::move(shape), op);
  bool req = false;
  for (auto& t : inputs) {
    n->inputs.push_back(t.node());
    req = req || t.node()->requires_grad;
  }
  n->requires_grad = req;
  if (req) n->backward_fn = std::move(bwd);
  return Tensor(std::move(n));
}

// Accumulate v into input i of self, if it tracks gradients.
void acc(Node& self, std::size_t i, const std::vector<double>& v) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return;
  in.ensure_grad();
  for (std::size_t k = 0; k < v.size(); ++k) in.grad[k] += v[k];
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis,
                     const char* op) {
  if (axis >= shape.size()) detail::shape_fail(op, "axis < rank", shape);
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto n = detail::make_node(std::move(shape), "leaf");
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), v);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data,
                    bool requires_grad) {
  if (numel(shape) != data.size())
    detail::shape_fail("from", "shape matching data length", shape);
  Tensor t = zeros(std::move(shape), requires_grad);
  t.data() = std::move(data);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) detail::shape_fail("item", "scalar", shape());
  return n_->data[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::shape_fail("add", detail::shape_str(a.shape()), b.shape());
  Tensor out = make_op(a.shape(), "add", {a, b}, [](Node& self) {
    acc(self, 0, self.grad);
    acc(self, 1, self.grad);
  });
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::shape_fail("mul", detail::shape_str(a.shape()), b.shape());
  Tensor out = make_op(a.shape(), "mul", {a, b}, [](Node& self) {
    std::vector<double> ga(self.size()), gb(self.size());
    const auto& av = self.inputs[0]->data;
    const auto& bv = self.inputs[1]->data;
    for (std::size_t i = 0; i < self.size(); ++i) {
      ga[i] = self.grad[i] * bv[i];
      gb[i] = self.grad[i] * av[i];
    }
    acc(self, 0, ga);
    acc(self, 1, gb);
  });
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = make_op(a.shape(), "scale", {a}, [s](Node& self) {
    std::vector<double> g(self.size());
    for (std::size_t i = 0; i < self.size(); ++i) g[i] = self.grad[i] * s;
    acc(self, 0, g);
  });
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  return out;
}

Tensor detach(const Tensor& a) {
  Tensor out = Tensor::from(a.shape(), a.data());
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_op(a.shape(), "relu", {a}, [](Node& self) {
    std::vector<double> g(self.size());
    const auto& x = self.inputs[0]->data;
    for (std::size_t i = 0; i < self.size(); ++i)
      g[i] = x[i] > 0.0 ? self.grad[i] : 0.0;
    acc(self, 0, g);
  });
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return out;
}

Tensor exp_op(const Tensor& a) {
  Tensor out = make_op(a.shape(), "exp", {a}, [](Node& self) {
    std::vector<double> g(self.size());
    for (std::size_t i = 0; i < self.size(); ++i) g[i] = self.grad[i] * self.data[i];
    acc(self, 0, g);
  });
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::exp(a.data()[i]);
  return out;
}

Tensor log_op(const Tensor& a) {
  Tensor out = make_op(a.shape(), "log", {a}, [](Node& self) {
    std::vector<double> g(self.size());
    const auto& x = self.inputs[0]->data;
    for (std::size_t i = 0; i < self.size(); ++i) g[i] = self.grad[i] / x[i];
    acc(self, 0, g);
  });
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = std::log(a.data()[i]);
  return out;
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (numel(shape) != a.size())
    detail::shape_fail("reshape", "same element count as " + detail::shape_str(a.shape()), shape);
  Tensor out = make_op(std::move(shape), "reshape", {a},
                       [](Node& self) { acc(self, 0, self.grad); });
  out.data() = a.data();
  return out;
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  auto sp = split_axis(a.shape(), axis, "sum_axis");
  std::vector<std::size_t> oshape = a.shape();
  oshape.erase(oshape.begin() + axis);
  if (oshape.empty()) oshape = {1};
  Tensor out = make_op(oshape, "sum_axis", {a}, [sp](Node& self) {
    std::vector<double> g(self.inputs[0]->size());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.len; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i)
          g[(o * sp.len + k) * sp.inner + i] = self.grad[o * sp.inner + i];
    acc(self, 0, g);
  });
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k)
        s += a.data()[(o * sp.len + k) * sp.inner + i];
      out.data()[o * sp.inner + i] = s;
    }
  return out;
}

Tensor max_axis(const Tensor& a, std::size_t axis) {
  auto sp = split_axis(a.shape(), axis, "max_axis");
  std::vector<std::size_t> oshape = a.shape();
  oshape.erase(oshape.begin() + axis);
  if (oshape.empty()) oshape = {1};
  auto argmax = std::make_shared<std::vector<std::size_t>>(sp.outer * sp.inner);
  Tensor out = make_op(oshape, "max_axis", {a}, [argmax](Node& self) {
    std::vector<double> g(self.inputs[0]->size(), 0.0);
    for (std::size_t j = 0; j < argmax->size(); ++j) g[(*argmax)[j]] += self.grad[j];
    acc(self, 0, g);
  });
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = (o * sp.len) * sp.inner + i;
      double bv = a.data()[best];
      for (std::size_t k = 1; k < sp.len; ++k) {
        std::size_t idx = (o * sp.len + k) * sp.inner + i;
        if (a.data()[idx] > bv) {
          bv = a.data()[idx];
          best = idx;
        }
      }
      out.data()[o * sp.inner + i] = bv;
      (*argmax)[o * sp.inner + i] = best;
    }
  return out;
}

Tensor softmax_axis(const Tensor& a, std::size_t axis) {
  auto sp = split_axis(a.shape(), axis, "softmax_axis");
  Tensor out = make_op(a.shape(), "softmax_axis", {a}, [sp](Node& self) {
    std::vector<double> g(self.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.len; ++k) {
          std::size_t idx = (o * sp.len + k) * sp.inner + i;
          dot += self.grad[idx] * self.data[idx];
        }
        for (std::size_t k = 0; k < sp.len; ++k) {
          std::size_t idx = (o * sp.len + k) * sp.inner + i;
          g[idx] = self.data[idx] * (self.grad[idx] - dot);
        }
      }
    acc(self, 0, g);
  });
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -1e300;
      for (std::size_t k = 0; k < sp.len; ++k)
        m = std::max(m, a.data()[(o * sp.len + k) * sp.inner + i]);
      double sum = 0.0;
      for (std::size_t k = 0; k < sp.len; ++k) {
        std::size_t idx = (o * sp.len + k) * sp.inner + i;
        double e = std::exp(a.data()[idx] - m);
        out.data()[idx] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < sp.len; ++k)
        out.data()[(o * sp.len + k) * sp.inner + i] /= sum;
    }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = make_op({1}, "sum_all", {a}, [](Node& self) {
    std::vector<double> g(self.inputs[0]->size(), self.grad[0]);
    acc(self, 0, g);
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) detail::shape_fail("matmul", "rank-2 lhs", a.shape());
  if (b.rank() != 2 || b.shape()[0] != a.shape()[1])
    detail::shape_fail("matmul", "[" + std::to_string(a.shape()[1]) + ",N]", b.shape());
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  Tensor out = make_op({M, N}, "matmul", {a, b}, [M, K, N](Node& self) {
    const auto& av = self.inputs[0]->data;
    const auto& bv = self.inputs[1]->data;
    if (self.inputs[0]->requires_grad) {
      std::vector<double> ga(M * K, 0.0);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < N; ++j) s += self.grad[i * N + j] * bv[k * N + j];
          ga[i * K + k] = s;
        }
      acc(self, 0, ga);
    }
    if (self.inputs[1]->requires_grad) {
      std::vector<double> gb(K * N, 0.0);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < N; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < M; ++i) s += av[i * K + k] * self.grad[i * N + j];
          gb[k * N + j] = s;
        }
      acc(self, 1, gb);
    }
  });
  kernels::matmul_omp(M, K, N, a.data().data(), b.data().data(), out.data().data());
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2) detail::shape_fail("linear", "rank-2 input", x.shape());
  if (w.rank() != 2 || w.shape()[1] != x.shape()[1])
    detail::shape_fail("linear", "[out," + std::to_string(x.shape()[1]) + "]", w.shape());
  const std::size_t N = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
  const bool has_b = static_cast<bool>(b);
  if (has_b && (b.rank() != 1 || b.shape()[0] != out_dim))
    detail::shape_fail("linear", "[" + std::to_string(out_dim) + "]", b.shape());
  std::vector<Tensor> ins = {x, w};
  if (has_b) ins.push_back(b);
  Tensor out = make_op({N, out_dim}, "linear", std::move(ins),
                       [N, in, out_dim, has_b](Node& self) {
    const auto& xv = self.inputs[0]->data;
    const auto& wv = self.inputs[1]->data;
    if (self.inputs[0]->requires_grad) {
      std::vector<double> gx(N * in, 0.0);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < in; ++i) {
          double s = 0.0;
          for (std::size_t o = 0; o < out_dim; ++o)
            s += self.grad[n * out_dim + o] * wv[o * in + i];
          gx[n * in + i] = s;
        }
      acc(self, 0, gx);
    }
    if (self.inputs[1]->requires_grad) {
      std::vector<double> gw(out_dim * in, 0.0);
      for (std::size_t o = 0; o < out_dim; ++o)
        for (std::size_t i = 0; i < in; ++i) {
          double s = 0.0;
          for (std::size_t n = 0; n < N; ++n)
            s += self.grad[n * out_dim + o] * xv[n * in + i];
          gw[o * in + i] = s;
        }
      acc(self, 1, gw);
    }
    if (has_b && self.inputs[2]->requires_grad) {
      std::vector<double> gb(out_dim, 0.0);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += self.grad[n * out_dim + o];
      acc(self, 2, gb);
    }
  });
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = has_b ? b.data()[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x.data()[n * in + i] * w.data()[o * in + i];
      out.data()[n * out_dim + o] = s;
    }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 4) detail::shape_fail("conv2d", "rank-4 input", x.shape());
  if (w.rank() != 4 || w.shape()[1] != x.shape()[1])
    detail::shape_fail("conv2d", "[OC," + std::to_string(x.shape()[1]) + ",KH,KW]", w.shape());
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  kernels::ConvDims d;
  d.n = (int)x.shape()[0];
  d.ic = (int)x.shape()[1];
  d.ih = (int)x.shape()[2];
  d.iw = (int)x.shape()[3];
  d.oc = (int)w.shape()[0];
  d.kh = (int)w.shape()[2];
  d.kw = (int)w.shape()[3];
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.ih + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.iw + 2 * pad - d.kw) / stride + 1;
  if (d.ih + 2 * pad < d.kh || d.iw + 2 * pad < d.kw)
    detail::shape_fail("conv2d", "input at least kernel size", x.shape());
  const bool has_b = static_cast<bool>(b);
  if (has_b && (b.rank() != 1 || (int)b.shape()[0] != d.oc))
    detail::shape_fail("conv2d", "[" + std::to_string(d.oc) + "]", b.shape());
  std::vector<Tensor> ins = {x, w};
  if (has_b) ins.push_back(b);
  Tensor out = make_op({(std::size_t)d.n, (std::size_t)d.oc, (std::size_t)d.oh,
                        (std::size_t)d.ow},
                       "conv2d", std::move(ins), [d, has_b](Node& self) {
    const auto& xv = self.inputs[0]->data;
    const auto& wv = self.inputs[1]->data;
    const bool need_x = self.inputs[0]->requires_grad;
    const bool need_w = self.inputs[1]->requires_grad;
    const bool need_b = has_b && self.inputs[2]->requires_grad;
    std::vector<double> gx(need_x ? xv.size() : 0), gw(need_w ? wv.size() : 0),
        gb(need_b ? self.inputs[2]->size() : 0);
    kernels::conv2d_backward_omp(d, xv.data(), wv.data(), self.grad.data(),
                                 need_x ? gx.data() : nullptr,
                                 need_w ? gw.data() : nullptr,
                                 need_b ? gb.data() : nullptr);
    if (need_x) acc(self, 0, gx);
    if (need_w) acc(self, 1, gw);
    if (need_b) acc(self, 2, gb);
  });
  kernels::conv2d_forward_omp(d, x.data().data(), w.data().data(),
                              has_b ? b.data().data() : nullptr, out.data().data());
  return out;
}

namespace {

Tensor pool2d(const Tensor& x, int k, int stride, bool is_max, const char* name) {
  if (x.rank() != 4) detail::shape_fail(name, "rank-4 input", x.shape());
  if (k < 1 || stride < 1) throw ShapeError(std::string(name) + ": invalid kernel/stride");
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  const int H = (int)x.shape()[2], W = (int)x.shape()[3];
  if (H < k || W < k) detail::shape_fail(name, "input at least kernel size", x.shape());
  const int OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (is_max) argmax->resize(N * C * OH * OW);
  Tensor out = make_op({N, C, (std::size_t)OH, (std::size_t)OW}, name, {x},
                       [=](Node& self) {
    std::vector<double> g(self.inputs[0]->size(), 0.0);
    if (is_max) {
      for (std::size_t j = 0; j < self.size(); ++j) g[(*argmax)[j]] += self.grad[j];
    } else {
      const double inv = 1.0 / (k * k);
      for (std::size_t nc = 0; nc < N * C; ++nc)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            double gv = self.grad[(nc * OH + oy) * OW + ox] * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                g[(nc * H + oy * stride + dy) * W + ox * stride + dx] += gv;
          }
    }
    acc(self, 0, g);
  });
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        if (is_max) {
          std::size_t best = (nc * H + oy * stride) * W + ox * stride;
          double bv = x.data()[best];
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              std::size_t idx = (nc * H + oy * stride + dy) * W + ox * stride + dx;
              if (x.data()[idx] > bv) {
                bv = x.data()[idx];
                best = idx;
              }
            }
          out.data()[(nc * OH + oy) * OW + ox] = bv;
          (*argmax)[(nc * OH + oy) * OW + ox] = best;
        } else {
          double s = 0.0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              s += x.data()[(nc * H + oy * stride + dy) * W + ox * stride + dx];
          out.data()[(nc * OH + oy) * OW + ox] = s / (k * k);
        }
      }
  return out;
}

}  // namespace

Tensor max_pool2d(const Tensor& x, int k, int stride) {
  return pool2d(x, k, stride, true, "max_pool2d");
}

Tensor avg_pool2d(const Tensor& x, int k, int stride) {
  return pool2d(x, k, stride, false, "avg_pool2d");
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) detail::shape_fail("global_avg_pool", "rank-4 input", x.shape());
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  const std::size_t HW = x.shape()[2] * x.shape()[3];
  Tensor out = make_op({N, C}, "global_avg_pool", {x}, [N, C, HW](Node& self) {
    std::vector<double> g(self.inputs[0]->size());
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double gv = self.grad[nc] / (double)HW;
      for (std::size_t i = 0; i < HW; ++i) g[nc * HW + i] = gv;
    }
    acc(self, 0, g);
  });
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += x.data()[nc * HW + i];
    out.data()[nc] = s / (double)HW;
  }
  return out;
}

Tensor global_max_pool(const Tensor& x) {
  if (x.rank() != 4) detail::shape_fail("global_max_pool", "rank-4 input", x.shape());
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  const std::size_t HW = x.shape()[2] * x.shape()[3];
  auto argmax = std::make_shared<std::vector<std::size_t>>(N * C);
  Tensor out = make_op({N, C}, "global_max_pool", {x}, [argmax](Node& self) {
    std::vector<double> g(self.inputs[0]->size(), 0.0);
    for (std::size_t j = 0; j < self.size(); ++j) g[(*argmax)[j]] += self.grad[j];
    acc(self, 0, g);
  });
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    std::size_t best = nc * HW;
    double bv = x.data()[best];
    for (std::size_t i = 1; i < HW; ++i)
      if (x.data()[nc * HW + i] > bv) {
        bv = x.data()[nc * HW + i];
        best = nc * HW + i;
      }
    out.data()[nc] = bv;
    (*argmax)[nc] = best;
  }
  return out;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (x.rank() != 4) detail::shape_fail("upsample_nearest", "rank-4 input", x.shape());
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t OH = H * factor, OW = W * factor;
  Tensor out = make_op({N, C, OH, OW}, "upsample_nearest", {x},
                       [N, C, H, W, factor](Node& self) {
    const std::size_t OW2 = W * factor;
    std::vector<double> g(self.inputs[0]->size(), 0.0);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t oy = 0; oy < H * (std::size_t)factor; ++oy)
        for (std::size_t ox = 0; ox < OW2; ++ox)
          g[(nc * H + oy / factor) * W + ox / factor] +=
              self.grad[(nc * H * factor + oy) * OW2 + ox];
    acc(self, 0, g);
  });
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox)
        out.data()[(nc * OH + oy) * OW + ox] =
            x.data()[(nc * H + oy / factor) * W + ox / factor];
  return out;
}

Tensor roi_pool(const Tensor& x, const std::vector<Roi>& rois, int ph, int pw) {
  if (x.rank() != 4) detail::shape_fail("roi_pool", "rank-4 input", x.shape());
  if (ph < 1 || pw < 1) throw ShapeError("roi_pool: output size must be >= 1x1");
  const int N = (int)x.shape()[0];
  const std::size_t C = x.shape()[1];
  const int H = (int)x.shape()[2], W = (int)x.shape()[3];
  const std::size_t R = rois.size();
  auto argmax = std::make_shared<std::vector<std::size_t>>(R * C * ph * pw);
  Tensor out = make_op({R, C, (std::size_t)ph, (std::size_t)pw}, "roi_pool", {x},
                       [argmax](Node& self) {
    std::vector<double> g(self.inputs[0]->size(), 0.0);
    for (std::size_t j = 0; j < self.size(); ++j) g[(*argmax)[j]] += self.grad[j];
    acc(self, 0, g);
  });
  for (std::size_t r = 0; r < R; ++r) {
    const auto& roi = rois[r];
    const int bi = roi[0];
    if (bi < 0 || bi >= N)
      throw std::runtime_error("roi_pool: batch index out of range at roi " + std::to_string(r));
    const int x0 = std::max(roi[1], 0), y0 = std::max(roi[2], 0);
    const int x1 = std::min(roi[3], W), y1 = std::min(roi[4], H);
    if (x1 <= x0 || y1 <= y0)
      throw std::runtime_error("roi_pool: empty roi after clamping at index " + std::to_string(r));
    const int LW = x1 - x0, LH = y1 - y0;
    for (std::size_t c = 0; c < C; ++c) {
      const double* fp = x.data().data() + ((std::size_t)bi * C + c) * H * W;
      for (int by = 0; by < ph; ++by) {
        int b0y = y0 + (int)((long long)by * LH / ph);
        int b1y = y0 + (int)((long long)(by + 1) * LH / ph);
        if (b1y <= b0y) b1y = std::min(b0y + 1, y1);
        if (b1y <= b0y) b0y = b1y - 1;
        for (int bx = 0; bx < pw; ++bx) {
          int b0x = x0 + (int)((long long)bx * LW / pw);
          int b1x = x0 + (int)((long long)(bx + 1) * LW / pw);
          if (b1x <= b0x) b1x = std::min(b0x + 1, x1);
          if (b1x <= b0x) b0x = b1x - 1;
          std::size_t best = (std::size_t)b0y * W + b0x;
          double bv = fp[best];
          for (int yy = b0y; yy < b1y; ++yy)
            for (int xx = b0x; xx < b1x; ++xx) {
              std::size_t idx = (std::size_t)yy * W + xx;
              if (fp[idx] > bv) {
                bv = fp[idx];
                best = idx;
              }
            }
          std::size_t oidx = ((r * C + c) * ph + by) * pw + bx;
          out.data()[oidx] = bv;
          (*argmax)[oidx] = ((std::size_t)bi * C + c) * H * W + best;
        }
      }
    }
  }
  return out;
}

void backward(const Tensor& loss) {
  if (!loss || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar tensor");
  // Collect reachable nodes, then run in reverse insertion (= topological) order.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{loss.node()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    order.push_back(n);
    for (auto& in : n->inputs) stack.push_back(in);
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto& n : order) {
    if (!n->requires_grad || !n->backward_fn) continue;
    n->ensure_grad();
    n->backward_fn(*n);
  }
}

}  // namespace wccn
