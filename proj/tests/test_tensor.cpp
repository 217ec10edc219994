#include <doctest.h>

#include <cmath>

#include "reads/gradcheck.hpp"
#include "reads/tensor.hpp"

using namespace reads;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), rng, lo, hi, true);
}

}  // namespace

TEST_CASE("matmul values") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from({2, 1}, {3, 4});
  Tensor r = matmul(eye, v);
  CHECK(r.at({0, 0}) == 3.0);
  CHECK(r.at({1, 0}) == 4.0);

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(a, b).value() == 11.0);

  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(42);
  std::vector<Tensor> inputs = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  auto fn = [](const std::vector<Tensor>& in) {
    // Weighted sum makes the output scalar without hiding any entries.
    Tensor prod = matmul(in[0], in[1]);
    Tensor w = Tensor::from({3, 2}, {0.3, -0.7, 1.1, 0.2, -0.5, 0.9});
    return sum(mul(prod, w));
  };
  auto report = finite_diff_check(fn, inputs);
  CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("conv2d identity and summation kernels") {
  Rng rng(1);
  Tensor img = Tensor::uniform({4, 5, 1}, rng, 0.0, 1.0);
  Tensor one = Tensor::from({1, 1, 1, 1}, {1.0});
  Tensor out = conv2d(img, one, {1, 1}, Padding::kValid);
  for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(out.data()[i] == img.data()[i]);

  Tensor ones_img = Tensor::full({3, 3, 1}, 1.0);
  Tensor ones_k = Tensor::full({3, 3, 1, 1}, 1.0);
  CHECK(conv2d(ones_img, ones_k, {1, 1}, Padding::kValid).value() == 9.0);

  // floor((in + pad - k)/stride) + 1
  Tensor in2 = Tensor::full({5, 7, 2}, 0.5);
  Tensor k2 = Tensor::full({3, 3, 2, 4}, 0.1);
  CHECK(conv2d(in2, k2, {2, 2}, Padding::kValid).shape() == Shape{2, 3, 4});
  CHECK(conv2d(in2, k2, {1, 1}, Padding::kSame).shape() == Shape{5, 7, 4});

  CHECK_THROWS_AS(conv2d(ones_img, Tensor::full({4, 4, 1, 1}, 1.0), {1, 1}, Padding::kValid),
                  ShapeError);
}

TEST_CASE("conv2d gradient vs finite differences") {
  Rng rng(7);
  std::vector<Tensor> inputs = {random_tensor({5, 5, 2}, rng), random_tensor({3, 3, 2, 3}, rng)};
  Rng wr(8);
  Tensor w = Tensor::uniform({5, 5, 3}, wr, -1.0, 1.0);
  auto fn = [w](const std::vector<Tensor>& in) {
    return sum(mul(conv2d(in[0], in[1], {1, 1}, Padding::kSame), w));
  };
  CHECK(finite_diff_check(fn, inputs).max_rel_err <= 1e-6);
}

TEST_CASE("pool values and tie-break") {
  Tensor x = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
  CHECK(maxpool(x, {2, 2}, {2, 2}).value() == 4.0);
  CHECK(avgpool(x, {2, 2}, {2, 2}).value() == 2.5);

  Tensor tie = Tensor::from({2, 2, 1}, {7, 7, 7, 7}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(maxpool(tie, {2, 2}, {2, 2}));
    tape.backward(loss);
  }
  auto g = tie.grad();
  CHECK(g[0] == 1.0);  // first maximal index in scan order
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);

  CHECK_THROWS_AS(maxpool(x, {3, 3}, {1, 1}), ShapeError);
}

TEST_CASE("pool gradients vs finite differences") {
  // Keep window maxima separated so the subgradient is smooth at the probe.
  Rng rng(11);
  Tensor x = Tensor::zeros({4, 6, 2}, true);
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform(0.0, 1.0) + 3.0 * (i % 7);
  Rng wr(12);
  Tensor wm = Tensor::uniform({2, 3, 2}, wr, -1.0, 1.0);
  auto fn_max = [wm](const std::vector<Tensor>& in) {
    return sum(mul(maxpool(in[0], {2, 2}, {2, 2}), wm));
  };
  CHECK(finite_diff_check(fn_max, {x}).max_rel_err <= 1e-6);
  auto fn_avg = [wm](const std::vector<Tensor>& in) {
    return sum(mul(avgpool(in[0], {2, 2}, {2, 2}), wm));
  };
  CHECK(finite_diff_check(fn_avg, {x}).max_rel_err <= 1e-6);
}

TEST_CASE("elementwise values and broadcasting") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == 0.5);
  CHECK(tanh(Tensor::scalar(0.0)).value() == 0.0);
  CHECK(relu(Tensor::scalar(-2.0)).value() == 0.0);

  Tensor a = Tensor::from({2, 1}, {1, 2});
  Tensor b = Tensor::from({1, 3}, {10, 20, 30});
  Tensor s = add(a, b);
  CHECK(s.shape() == Shape{2, 3});
  CHECK(s.at({1, 2}) == 32.0);

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4, 3})), ShapeError);
}

TEST_CASE("broadcast mul gradient vs finite differences") {
  Rng rng(3);
  std::vector<Tensor> inputs = {random_tensor({4, 5, 3}, rng), random_tensor({1, 1, 3}, rng)};
  Rng wr(4);
  Tensor w = Tensor::uniform({4, 5, 3}, wr, -1.0, 1.0);
  auto fn = [w](const std::vector<Tensor>& in) { return sum(mul(mul(in[0], in[1]), w)); };
  CHECK(finite_diff_check(fn, inputs).max_rel_err <= 1e-6);
}

TEST_CASE("broadcasting associativity") {
  Rng rng(5);
  Tensor a = Tensor::uniform({3, 4, 2}, rng, -2.0, 2.0);
  Tensor b = Tensor::uniform({1, 4, 1}, rng, -2.0, 2.0);
  Tensor c = Tensor::uniform({3, 1, 2}, rng, -2.0, 2.0);
  Tensor lhs = mul(mul(a, b), c);
  Tensor rhs = mul(a, mul(b, c));
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) <= 1e-12);
  }
}

TEST_CASE("softmax values") {
  Tensor u = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (int i = 0; i < 3; ++i) CHECK(u.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor peaked = softmax(Tensor::from({3}, {1000, 0, 0}), 0);
  CHECK(std::abs(peaked.data()[0] - 1.0) <= 1e-12);
  CHECK(std::abs(peaked.data()[1]) <= 1e-12);
  CHECK(std::abs(peaked.data()[2]) <= 1e-12);

  double total = 0.0;
  Rng rng(9);
  Tensor r = softmax(Tensor::uniform({2, 4}, rng, -3.0, 3.0), 1);
  for (int j = 0; j < 4; ++j) total += r.at({0, j});
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax Jacobian vs finite differences") {
  Rng rng(10);
  Tensor x = random_tensor({5}, rng, -2.0, 2.0);
  for (int j = 0; j < 5; ++j) {
    auto fn = [j](const std::vector<Tensor>& in) { return take(softmax(in[0], 0), j); };
    CHECK(finite_diff_check(fn, {x}).max_rel_err <= 1e-6);
  }
}

TEST_CASE("log_softmax matches log of softmax") {
  Rng rng(13);
  Tensor x = Tensor::uniform({3, 6}, rng, -4.0, 4.0);
  Tensor a = log_softmax(x, 1);
  Tensor b = log(softmax(x, 1));
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  }
  auto fn = [](const std::vector<Tensor>& in) { return take(log_softmax(in[0], 1), 7); };
  CHECK(finite_diff_check(fn, {x.clone().set_requires_grad(true)}).max_rel_err <= 1e-6);
}

TEST_CASE("backward basics") {
  Tensor w = Tensor::from({2, 3}, {1, -2, 3, 0.5, 4, -1}, true);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(w);
    tape.backward(loss);
  }
  for (double g : w.grad()) CHECK(g == 1.0);

  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(w, w));
    tape.backward(loss);
  }
  for (std::int64_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[static_cast<size_t>(i)] == 2.0 * w.data()[i]);
}

TEST_CASE("backward composite pipeline vs finite differences") {
  Rng rng(21);
  std::vector<Tensor> inputs = {random_tensor({6, 6, 2}, rng), random_tensor({3, 3, 2, 2}, rng)};
  auto fn = [](const std::vector<Tensor>& in) {
    return sum(sigmoid(conv2d(in[0], in[1], {1, 1}, Padding::kValid)));
  };
  CHECK(finite_diff_check(fn, inputs).max_rel_err <= 1e-5);
}

TEST_CASE("backward usage errors") {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor loss, vec;
  {
    TapeScope scope(tape);
    vec = mul(w, w);
    loss = sum(vec);
  }
  CHECK_THROWS_AS(tape.backward(vec), UsageError);  // non-scalar
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);  // consumed

  Tape other;
  CHECK_THROWS_AS(other.backward(loss), UsageError);  // produced elsewhere

  Tape t2;
  Tensor leaf = Tensor::scalar(1.0, true);
  CHECK_THROWS_AS(t2.backward(leaf), UsageError);  // not produced under a tape
}

TEST_CASE("tensors not reachable from the loss keep zero gradients") {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  Tensor unused = Tensor::from({2}, {5, 6}, true);
  Tensor side;
  {
    Tape tape;
    TapeScope scope(tape);
    side = mul(unused, unused);  // recorded but not part of the loss
    Tensor loss = sum(mul(w, w));
    tape.backward(loss);
  }
  for (double g : unused.grad()) CHECK(g == 0.0);
  for (double g : side.grad()) CHECK(g == 0.0);
}

TEST_CASE("shape ops round trip gradients") {
  Rng rng(31);
  Tensor x = random_tensor({3, 4}, rng);
  Rng wr(32);
  Tensor w = Tensor::uniform({2, 6}, wr, -1.0, 1.0);
  auto fn = [w](const std::vector<Tensor>& in) { return sum(mul(reshape(in[0], {2, 6}), w)); };
  CHECK(finite_diff_check(fn, {x}).max_rel_err <= 1e-6);

  auto fn_t = [](const std::vector<Tensor>& in) { return take(transpose(in[0]), 5); };
  CHECK(finite_diff_check(fn_t, {x}).max_rel_err <= 1e-6);

  auto fn_cat = [](const std::vector<Tensor>& in) {
    return sum(mul(concat({in[0], in[1]}, 1), concat({in[1], in[0]}, 1)));
  };
  CHECK(finite_diff_check(fn_cat, {random_tensor({3, 2}, rng), random_tensor({3, 5}, rng)})
            .max_rel_err <= 1e-6);

  auto fn_slice = [](const std::vector<Tensor>& in) { return sum(slice(in[0], 1, 1, 2)); };
  CHECK(finite_diff_check(fn_slice, {x}).max_rel_err <= 1e-6);

  auto fn_row = [](const std::vector<Tensor>& in) { return sum(select_row(in[0], 2)); };
  CHECK(finite_diff_check(fn_row, {x}).max_rel_err <= 1e-6);
}

TEST_CASE("reduce ops") {
  Tensor x = Tensor::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor m = reduce_mean(x, 2);
  CHECK(m.shape() == Shape{2, 2, 1});
  CHECK(m.at({0, 0, 0}) == 1.5);
  Tensor mx = reduce_max(x, 0);
  CHECK(mx.shape() == Shape{1, 2, 2});
  CHECK(mx.at({0, 1, 1}) == 8.0);

  Rng rng(41);
  Tensor r = random_tensor({3, 4, 2}, rng);
  auto fn = [](const std::vector<Tensor>& in) {
    return sum(mul(reduce_mean(in[0], 1), reduce_mean(in[0], 1)));
  };
  CHECK(finite_diff_check(fn, {r}).max_rel_err <= 1e-6);
}

TEST_CASE("determinism: identical seeds give bit-identical values and gradients") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::uniform({4, 5, 2}, rng, -1.0, 1.0, true);
    Tensor k = Tensor::uniform({3, 3, 2, 2}, rng, -0.5, 0.5, true);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(sigmoid(conv2d(x, k, {1, 1}, Padding::kSame)));
      tape.backward(loss);
    }
    std::vector<double> out{loss.value()};
    for (double g : x.grad()) out.push_back(g);
    for (double g : k.grad()) out.push_back(g);
    return out;
  };
  auto a = run(123);
  auto b = run(123);
  CHECK(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("gradcheck harness catches corrupted analytic gradients") {
  Rng rng(55);
  Tensor x = random_tensor({3, 3}, rng);
  auto fn = [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[0])); };
  GradCheckOptions bad;
  bad.analytic_scale = 1.01;
  CHECK(finite_diff_check(fn, {x}, bad).max_rel_err > 1e-4);
}
