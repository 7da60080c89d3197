#include <doctest.h>

#include <random>
#include <sstream>

#include "fd_check.hpp"
#include "wccn/kernels.hpp"
#include "wccn/serialize.hpp"
#include "wccn/tensor.hpp"

using namespace wccn;
using testutil::max_rel_error;
using testutil::random_tensor;

namespace {

// Keeps values away from relu/max kinks so finite differences stay valid.
Tensor random_offzero(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) v += (v >= 0 ? 0.05 : -0.05);
  return t;
}

}  // namespace

TEST_CASE("forward op examples") {
  // global_avg_pool on constant map
  Tensor x = Tensor::full({1, 1, 4, 4}, 3.0);
  CHECK(global_avg_pool(x).data()[0] == doctest::Approx(3.0).epsilon(1e-12));

  // relu by definition
  Tensor r = relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(r.data() == std::vector<double>{0, 0, 2});

  // conv2d all-ones 3x3, hand oracle: sum of 9 products
  Tensor img = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor ker = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(img, ker, Tensor(), 1, 0);
  CHECK(y.size() == 1);
  CHECK(y.data()[0] == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("shape errors are structured") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(backward(Tensor::zeros({3}, true)), ShapeError);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  backward(sum_all(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  // loss = sum(x*x), x=[1,2] -> grad [2,4] (analytic oracle)
  Tensor z = Tensor::from({2}, {1, 2}, true);
  backward(sum_all(mul(z, z)));
  CHECK(z.grad()[0] == doctest::Approx(2.0));
  CHECK(z.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("grad accumulates across uses") {
  Tensor x = Tensor::from({2}, {3, 4}, true);
  Tensor y = add(x, x);
  backward(sum_all(y));
  CHECK(x.grad() == std::vector<double>{2, 2});
}

TEST_CASE("requires_grad=false never accumulates") {
  Tensor x = Tensor::from({2}, {1, 2}, false);
  Tensor w = Tensor::from({2}, {3, 4}, true);
  backward(sum_all(mul(x, w)));
  CHECK(x.grad().empty());
  CHECK(w.grad() == std::vector<double>{1, 2});
}

TEST_CASE("finite differences across all ops, 20 seeds") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
      CHECK(max_rel_error([&] { return sum_all(mul(add(a, b), b)); }, {a, b}) < 1e-4);
    }
    {
      Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 4}, rng);
      CHECK(max_rel_error([&] { return sum_all(mul(matmul(a, b), matmul(a, b))); },
                          {a, b}) < 1e-4);
    }
    {
      Tensor x = random_tensor({2, 5}, rng), w = random_tensor({3, 5}, rng),
             b = random_tensor({3}, rng);
      CHECK(max_rel_error([&] { return sum_all(exp_op(scale(linear(x, w, b), 0.3))); },
                          {x, w, b}) < 1e-4);
    }
    {
      Tensor x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng),
             b = random_tensor({3}, rng);
      CHECK(max_rel_error(
                [&] { return sum_all(mul(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1))); },
                {x, w, b}) < 1e-4);
    }
    {
      Tensor x = random_offzero({1, 2, 4, 4}, rng);
      CHECK(max_rel_error([&] { return sum_all(relu(x)); }, {x}) < 1e-4);
      CHECK(max_rel_error([&] { return sum_all(max_pool2d(x, 2, 2)); }, {x}) < 1e-4);
      CHECK(max_rel_error([&] { return sum_all(avg_pool2d(x, 2, 1)); }, {x}) < 1e-4);
      CHECK(max_rel_error([&] { return sum_all(global_avg_pool(x)); }, {x}) < 1e-4);
      CHECK(max_rel_error([&] { return sum_all(global_max_pool(x)); }, {x}) < 1e-4);
      CHECK(max_rel_error([&] { return sum_all(upsample_nearest(x, 2)); }, {x}) < 1e-4);
    }
    {
      Tensor x = random_tensor({3, 4}, rng, true, 0.5, 2.0);
      CHECK(max_rel_error([&] { return sum_all(mul(log_op(x), x)); }, {x}) < 1e-4);
      CHECK(max_rel_error([&] { return sum_all(mul(softmax_axis(x, 1), x)); }, {x}) <
            1e-4);
      CHECK(max_rel_error([&] { return sum_all(mul(sum_axis(x, 0), sum_axis(x, 0))); },
                          {x}) < 1e-4);
    }
    {
      Tensor x = random_offzero({2, 6}, rng);
      CHECK(max_rel_error([&] { return sum_all(max_axis(x, 1)); }, {x}) < 1e-4);
    }
    {
      Tensor x = random_offzero({1, 2, 6, 6}, rng);
      std::vector<Roi> rois = {{0, 0, 0, 6, 6}, {0, 1, 2, 5, 6}, {0, 0, 0, 2, 2}};
      CHECK(max_rel_error(
                [&] {
                  Tensor p = roi_pool(x, rois, 2, 2);
                  return sum_all(mul(p, p));
                },
                {x}) < 1e-4);
    }
  }
}

TEST_CASE("softmax normalization and shift invariance") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({5, 8}, rng, false, -3, 3);
  Tensor s = softmax_axis(x, 1);
  for (int r = 0; r < 5; ++r) {
    double sum = 0;
    for (int c = 0; c < 8; ++c) sum += s.data()[r * 8 + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  Tensor shifted = Tensor::from(x.shape(), x.data());
  for (auto& v : shifted.data()) v += 123.456;
  Tensor s2 = softmax_axis(shifted, 1);
  for (std::size_t i = 0; i < s.size(); ++i)
    CHECK(std::abs(s.data()[i] - s2.data()[i]) < 1e-9);
}

TEST_CASE("roi_pool examples") {
  // identity: roi covers whole map, output size == map size
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = roi_pool(x, {{0, 0, 0, 2, 2}}, 2, 2);
  CHECK(y.data() == x.data());

  // constant map -> constant output for any roi
  Tensor c = Tensor::full({1, 1, 5, 5}, 7.0);
  Tensor yc = roi_pool(c, {{0, 1, 1, 4, 3}}, 3, 3);
  for (double v : yc.data()) CHECK(v == 7.0);

  // 4x4 distinct values, full-map roi, 2x2 output -> per-quadrant maxima
  std::vector<double> vals(16);
  for (int i = 0; i < 16; ++i) vals[i] = i * (i % 3 == 0 ? -1.0 : 1.0);
  Tensor d = Tensor::from({1, 1, 4, 4}, vals);
  Tensor q = roi_pool(d, {{0, 0, 0, 4, 4}}, 2, 2);
  auto quad_max = [&](int y0, int x0) {
    double m = -1e300;
    for (int yy = y0; yy < y0 + 2; ++yy)
      for (int xx = x0; xx < x0 + 2; ++xx) m = std::max(m, vals[yy * 4 + xx]);
    return m;
  };
  CHECK(q.data()[0] == quad_max(0, 0));
  CHECK(q.data()[1] == quad_max(0, 2));
  CHECK(q.data()[2] == quad_max(2, 0));
  CHECK(q.data()[3] == quad_max(2, 2));

  // empty roi after clamping names the roi index
  CHECK_THROWS_WITH(roi_pool(x, {{0, 0, 0, 2, 2}, {0, 5, 5, 9, 9}}, 1, 1),
                    doctest::Contains("index 1"));
}

TEST_CASE("detach copies values and blocks gradient") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 3}, rng);
  Tensor d = detach(x);
  CHECK(d.data() == x.data());
  Tensor loss = sum_all(add(mul(d, d), x));
  backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("graph replay determinism") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor x = random_tensor({1, 2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor loss = sum_all(relu(conv2d(x, w, Tensor(), 1, 1)));
    backward(loss);
    return std::make_pair(loss.item(), x.grad());
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("serial and omp kernels match bit for bit") {
  std::mt19937_64 rng(3);
  kernels::ConvDims d{2, 3, 9, 9, 4, 3, 3, 2, 1, 0, 0};
  d.oh = (d.ih + 2 * d.pad - d.kh) / d.stride + 1;
  d.ow = (d.iw + 2 * d.pad - d.kw) / d.stride + 1;
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x(d.n * d.ic * d.ih * d.iw), w(d.oc * d.ic * d.kh * d.kw),
      b(d.oc), gy(d.n * d.oc * d.oh * d.ow);
  for (auto* v : {&x, &w, &gy})
    for (auto& e : *v) e = u(rng);
  for (auto& e : b) e = u(rng);

  std::vector<double> y1(gy.size()), y2(gy.size());
  kernels::conv2d_forward_serial(d, x.data(), w.data(), b.data(), y1.data());
  kernels::conv2d_forward_omp(d, x.data(), w.data(), b.data(), y2.data());
  CHECK(y1 == y2);

  std::vector<double> gx1(x.size()), gw1(w.size()), gb1(b.size());
  std::vector<double> gx2(x.size()), gw2(w.size()), gb2(b.size());
  kernels::conv2d_backward_serial(d, x.data(), w.data(), gy.data(), gx1.data(),
                                  gw1.data(), gb1.data());
  kernels::conv2d_backward_omp(d, x.data(), w.data(), gy.data(), gx2.data(),
                               gw2.data(), gb2.data());
  CHECK(gx1 == gx2);
  CHECK(gw1 == gw2);
  CHECK(gb1 == gb2);

  std::vector<double> a(6 * 7), bb(7 * 5), c1(6 * 5), c2(6 * 5);
  for (auto& e : a) e = u(rng);
  for (auto& e : bb) e = u(rng);
  kernels::matmul_serial(6, 7, 5, a.data(), bb.data(), c1.data());
  kernels::matmul_omp(6, 7, 5, a.data(), bb.data(), c2.data());
  CHECK(c1 == c2);
}

TEST_CASE("tensor container round trip") {
  std::mt19937_64 rng(11);
  std::vector<std::pair<std::string, Tensor>> ts;
  ts.emplace_back("a/weight", random_tensor({3, 2, 2, 2}, rng, false));
  ts.emplace_back("b/bias", random_tensor({5}, rng, false));
  std::stringstream ss;
  write_tensors(ss, ts);
  auto back = read_tensors(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "a/weight");
  CHECK(back[0].second.shape() == ts[0].second.shape());
  CHECK(back[0].second.data() == ts[0].second.data());
  CHECK(back[1].second.data() == ts[1].second.data());
}
