#include <doctest.h>

#include <cmath>
#include <vector>

#include "reads/kernels.hpp"
#include "reads/rng.hpp"

using namespace reads;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parallel matmul matches serial reference") {
  Rng rng(17);
  const int m = 33, k = 47, n = 29;
  auto a = random_vec(static_cast<size_t>(m) * k, rng);
  auto b = random_vec(static_cast<size_t>(k) * n, rng);
  std::vector<double> out(static_cast<size_t>(m) * n), expect(out.size());
  kern::matmul(a.data(), b.data(), out.data(), m, k, n);
  ref::matmul(a.data(), b.data(), expect.data(), m, k, n);
  CHECK(max_abs_diff(out, expect) <= 1e-12);
}

TEST_CASE("parallel conv2d and its gradients match serial reference") {
  Rng rng(18);
  for (auto pad : {Padding::kSame, Padding::kValid}) {
    for (auto stride : {std::pair<int, int>{1, 1}, {2, 1}, {2, 2}}) {
      auto g = kern::make_conv2d_geom(9, 13, 3, 3, 3, 5, stride.first, stride.second, pad);
      auto in = random_vec(static_cast<size_t>(g.in_h) * g.in_w * g.cin, rng);
      auto k = random_vec(static_cast<size_t>(g.kh) * g.kw * g.cin * g.cout, rng);
      std::vector<double> out(static_cast<size_t>(g.out_h) * g.out_w * g.cout);
      std::vector<double> expect(out.size());
      kern::conv2d(in.data(), k.data(), out.data(), g);
      ref::conv2d(in.data(), k.data(), expect.data(), g);
      CHECK(max_abs_diff(out, expect) <= 1e-12);

      auto gout = random_vec(out.size(), rng);
      std::vector<double> din(in.size(), 0.0), din_ref(in.size(), 0.0);
      kern::conv2d_grad_input(gout.data(), k.data(), din.data(), g);
      ref::conv2d_grad_input(gout.data(), k.data(), din_ref.data(), g);
      CHECK(max_abs_diff(din, din_ref) <= 1e-12);

      std::vector<double> dk(k.size(), 0.0), dk_ref(k.size(), 0.0);
      kern::conv2d_grad_kernel(gout.data(), in.data(), dk.data(), g);
      ref::conv2d_grad_kernel(gout.data(), in.data(), dk_ref.data(), g);
      CHECK(max_abs_diff(dk, dk_ref) <= 1e-12);
    }
  }
}

TEST_CASE("parallel pools match serial reference") {
  Rng rng(19);
  auto g = kern::make_pool2d_geom(8, 10, 4, 2, 2, 2, 2);
  auto in = random_vec(static_cast<size_t>(g.in_h) * g.in_w * g.c, rng);
  size_t out_n = static_cast<size_t>(g.out_h) * g.out_w * g.c;
  std::vector<double> out(out_n), expect(out_n);
  std::vector<int> arg(out_n), arg_ref(out_n);
  kern::maxpool(in.data(), out.data(), arg.data(), g);
  ref::maxpool(in.data(), expect.data(), arg_ref.data(), g);
  CHECK(max_abs_diff(out, expect) == 0.0);
  CHECK(arg == arg_ref);
  kern::avgpool(in.data(), out.data(), g);
  ref::avgpool(in.data(), expect.data(), g);
  CHECK(max_abs_diff(out, expect) <= 1e-12);
}

TEST_CASE("parallel bilinear sampling matches serial reference") {
  Rng rng(20);
  const int h = 7, w = 9, c = 3, oh = 5, ow = 6;
  auto img = random_vec(static_cast<size_t>(h) * w * c, rng);
  std::vector<double> grid(static_cast<size_t>(oh) * ow * 2);
  for (double& v : grid) v = rng.uniform(-0.3, 1.3);  // includes clamped samples
  std::vector<double> out(static_cast<size_t>(oh) * ow * c), expect(out.size());
  kern::bilinear_sample(img.data(), grid.data(), out.data(), h, w, c, oh, ow);
  ref::bilinear_sample(img.data(), grid.data(), expect.data(), h, w, c, oh, ow);
  CHECK(max_abs_diff(out, expect) <= 1e-12);
}

TEST_CASE("kernels are deterministic across repeated runs") {
  Rng rng(21);
  const int m = 17, k = 23, n = 19;
  auto a = random_vec(static_cast<size_t>(m) * k, rng);
  auto b = random_vec(static_cast<size_t>(k) * n, rng);
  std::vector<double> r1(static_cast<size_t>(m) * n), r2(r1.size());
  kern::matmul(a.data(), b.data(), r1.data(), m, k, n);
  kern::matmul(a.data(), b.data(), r2.data(), m, k, n);
  CHECK(r1 == r2);
}

TEST_CASE("conv geometry validation") {
  CHECK_THROWS_AS(kern::make_conv2d_geom(3, 3, 1, 4, 4, 1, 1, 1, Padding::kValid),
                  ShapeError);
  auto g = kern::make_conv2d_geom(32, 100, 3, 3, 3, 16, 1, 1, Padding::kSame);
  CHECK(g.out_h == 32);
  CHECK(g.out_w == 100);
  auto g2 = kern::make_conv2d_geom(2, 50, 64, 2, 2, 128, 1, 1, Padding::kValid);
  CHECK(g2.out_h == 1);
  CHECK(g2.out_w == 49);
}
