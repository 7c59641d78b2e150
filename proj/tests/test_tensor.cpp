#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "orpit/errors.hpp"
#include "orpit/rng.hpp"
#include "orpit/tensor.hpp"
#include "support.hpp"

using orpit::InvalidArgument;
using orpit::Rng;
using orpit::Tape;
using orpit::Tensor;
using orpit::TensorData;
using orpit_test::max_fd_relerr;
using orpit_test::random_tensor;

namespace {

template <class S>
std::vector<S> to_vec(std::initializer_list<double> v) {
  std::vector<S> out;
  for (double x : v) out.push_back(static_cast<S>(x));
  return out;
}

}  // namespace

TEST_CASE("conv1d identity kernel") {
  Tape<float> t;
  auto x = t.input({1, 3}, {1.f, 2.f, 3.f});
  auto k = t.input({1, 1, 1}, {1.f});
  auto y = t.conv1d(x, k, 1, 1);
  CHECK(y.shape() == std::vector<int>{1, 3});
  CHECK(y.value() == std::vector<float>{1.f, 2.f, 3.f});
}

TEST_CASE("conv1d two-tap difference kernel") {
  Tape<float> t;
  auto x = t.input({1, 3}, {1.f, 2.f, 3.f});
  auto k = t.input({1, 1, 2}, {1.f, -1.f});
  auto y = t.conv1d(x, k, 1, 1);
  CHECK(y.shape() == std::vector<int>{1, 2});
  CHECK(y.value() == std::vector<float>{-1.f, -1.f});
}

TEST_CASE("conv1d output length covers stride and dilation") {
  Tape<float> t;
  auto x = t.zeros({1, 10});
  auto k = t.zeros({1, 1, 3});
  CHECK(t.conv1d(x, k, 1, 1).shape() == std::vector<int>{1, 8});
  CHECK(t.conv1d(x, k, 2, 1).shape() == std::vector<int>{1, 4});
  CHECK(t.conv1d(x, k, 2, 2).shape() == std::vector<int>{1, 3});
  CHECK(t.conv1d(x, k, 3, 2).shape() == std::vector<int>{1, 2});
}

TEST_CASE("conv1d rejects bad shapes") {
  Tape<float> t;
  auto x = t.zeros({2, 10});
  auto k = t.zeros({1, 3, 3});  // kernel expects 3 input channels, x has 2
  CHECK_THROWS_AS(t.conv1d(x, k, 1, 1), InvalidArgument);
  auto k2 = t.zeros({1, 2, 11});  // longer than the input
  CHECK_THROWS_AS(t.conv1d(x, k2, 1, 1), InvalidArgument);
}

TEST_CASE("conv1d_transpose single-tap spreading") {
  Tape<float> t;
  auto x = t.input({1, 1}, {1.f});
  auto k = t.input({1, 1, 3}, {1.f, 1.f, 1.f});
  auto y = t.conv1d_transpose(x, k, 1);
  CHECK(y.shape() == std::vector<int>{1, 3});
  CHECK(y.value() == std::vector<float>{1.f, 1.f, 1.f});
}

TEST_CASE("conv1d_transpose output length") {
  Tape<float> t;
  auto x = t.zeros({1, 4});
  auto k = t.zeros({1, 2, 5});
  auto y = t.conv1d_transpose(x, k, 3);
  CHECK(y.shape() == std::vector<int>{2, 14});  // (4-1)*3 + 5
}

// The transpose kernel layout is [C_in, C_out, K]; a conv kernel [C_out, C_in, K]
// reinterpreted under that layout (same flat buffer) makes conv1d_transpose the
// exact adjoint of conv1d at equal stride.
TEST_CASE("conv adjoint inner-product identity") {
  Rng rng(7);
  SUBCASE("single channel, stride 1, random 1x6") {
    auto xd = random_tensor<double>(rng, {1, 6});
    auto kd = random_tensor<double>(rng, {1, 1, 3});
    auto yd = random_tensor<double>(rng, {1, 4});
    Tape<double> t;
    auto x = t.input(xd);
    auto k = t.input(kd);
    auto y = t.input(yd);
    double lhs = t.dot(t.conv1d(x, k, 1, 1), y).value()[0];
    auto kt = t.input({1, 1, 3}, kd.data);
    double rhs = t.dot(x, t.conv1d_transpose(y, kt, 1)).value()[0];
    CHECK(std::fabs(lhs - rhs) < 1e-5);
  }
  SUBCASE("multichannel, stride 2") {
    const int Cin = 2, Cout = 3, K = 3, T = 9;  // (T-K) divisible by stride
    auto xd = random_tensor<double>(rng, {Cin, T});
    auto kd = random_tensor<double>(rng, {Cout, Cin, K});
    auto yd = random_tensor<double>(rng, {Cout, 4});
    Tape<double> t;
    auto x = t.input(xd);
    auto k = t.input(kd);
    auto y = t.input(yd);
    double lhs = t.dot(t.conv1d(x, k, 2, 1), y).value()[0];
    auto kt = t.input({Cout, Cin, K}, kd.data);  // [C_in=Cout, C_out=Cin, K] for the transpose
    double rhs = t.dot(x, t.conv1d_transpose(y, kt, 2)).value()[0];
    CHECK(std::fabs(lhs - rhs) < 1e-5);
  }
}

TEST_CASE("elementwise forward values") {
  Tape<float> t;
  auto r = t.relu(t.input({2}, {-1.f, 2.f}));
  CHECK(r.value() == std::vector<float>{0.f, 2.f});
  auto s = t.sigmoid(t.input({1}, {0.f}));
  CHECK(s.value()[0] == doctest::Approx(0.5));
  auto q = t.square(t.input({2}, {3.f, -2.f}));
  CHECK(q.value() == std::vector<float>{9.f, 4.f});
  auto c = t.cmul(t.input({2}, {1.f, -2.f}), 2.5);
  CHECK(c.value() == std::vector<float>{2.5f, -5.f});
}

TEST_CASE("log10_safe applies the documented offset") {
  Tape<double> t;
  auto y = t.log10_safe(t.input({2}, {0.0, 1.0}));
  CHECK(y.value()[0] == doctest::Approx(-8.0));
  CHECK(y.value()[1] == doctest::Approx(std::log10(1.0 + 1e-8)));
}

TEST_CASE("reductions") {
  Tape<float> t;
  CHECK(t.dot(t.input({2}, {1.f, 2.f}), t.input({2}, {3.f, 4.f})).value()[0] == 11.f);
  CHECK(t.l2_norm_sq(t.input({2}, {3.f, 4.f})).value()[0] == 25.f);
  CHECK(t.sum(t.input({3}, {1.f, 2.f, 3.f})).value()[0] == 6.f);
  CHECK(t.mean(t.input({4}, {1.f, 2.f, 3.f, 6.f})).value()[0] == 3.f);
  CHECK_THROWS_AS(t.dot(t.input({2}, {1.f, 2.f}), t.input({3}, {1.f, 2.f, 3.f})),
                  InvalidArgument);
}

TEST_CASE("bias_add broadcasts per channel") {
  Tape<float> t;
  auto x = t.input({2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
  auto b = t.input({2}, {10.f, -10.f});
  auto y = t.bias_add(x, b);
  CHECK(y.value() == std::vector<float>{11.f, 12.f, 13.f, -6.f, -5.f, -4.f});
}

TEST_CASE("backward on sum gives ones") {
  Tape<float> t;
  auto x = t.input({4}, {1.f, -2.f, 3.f, 0.5f}, true);
  t.backward(t.sum(x));
  CHECK(x.grad() == std::vector<float>{1.f, 1.f, 1.f, 1.f});
}

TEST_CASE("backward on l2_norm_sq gives 2x") {
  Tape<float> t;
  auto x = t.input({3}, {1.f, -2.f, 3.f}, true);
  t.backward(t.l2_norm_sq(x));
  CHECK(x.grad() == std::vector<float>{2.f, -4.f, 6.f});
}

TEST_CASE("gradients accumulate over fan-out") {
  Tape<float> t;
  auto x = t.input({2}, {1.f, 2.f}, true);
  auto y = t.add(x, x);
  t.backward(t.sum(y));
  CHECK(x.grad() == std::vector<float>{2.f, 2.f});
}

TEST_CASE("relu gradient at exactly zero is zero") {
  Tape<float> t;
  auto x = t.input({3}, {0.f, 1.f, -1.f}, true);
  t.backward(t.sum(t.relu(x)));
  CHECK(x.grad() == std::vector<float>{0.f, 1.f, 0.f});
}

TEST_CASE("second backward on the same tape is an error") {
  Tape<float> t;
  auto x = t.input({2}, {1.f, 2.f}, true);
  auto loss = t.sum(x);
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), InvalidArgument);
}

TEST_CASE("non-scalar loss is rejected") {
  Tape<float> t;
  auto x = t.input({2}, {1.f, 2.f}, true);
  CHECK_THROWS_AS(t.backward(x), InvalidArgument);
}

TEST_CASE("elementwise shape mismatch is rejected") {
  Tape<float> t;
  auto a = t.zeros({2});
  auto b = t.zeros({3});
  CHECK_THROWS_AS(t.add(a, b), InvalidArgument);
  CHECK_THROWS_AS(t.mul(a, b), InvalidArgument);
}

TEST_CASE("forward evaluation is pure") {
  Rng rng(11);
  auto xd = random_tensor<float>(rng, {2, 16});
  auto kd = random_tensor<float>(rng, {3, 2, 4});
  Tape<float> t1, t2;
  auto y1 = t1.conv1d(t1.input(xd), t1.input(kd), 2, 1);
  auto y2 = t2.conv1d(t2.input(xd), t2.input(kd), 2, 1);
  CHECK(y1.value() == y2.value());
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks. 32-bit mode: eps 1e-3, tolerance 1e-3.
// 64-bit mode: eps 1e-6, tolerance 1e-6.
// ---------------------------------------------------------------------------

namespace {

template <class S>
void fd_check_all(double eps, double tol) {
  Rng rng(42);

  // conv1d w.r.t. input and kernels, random 1x8
  {
    auto x = random_tensor<S>(rng, {1, 8});
    auto k = random_tensor<S>(rng, {2, 1, 3});
    double e = max_fd_relerr<S>({x, k},
                                [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
                                  return t.conv1d(in[0], in[1], 2, 2);
                                },
                                eps);
    CHECK(e < tol);
  }
  // conv1d_transpose
  {
    auto x = random_tensor<S>(rng, {2, 5});
    auto k = random_tensor<S>(rng, {2, 3, 4});
    double e = max_fd_relerr<S>({x, k},
                                [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
                                  return t.conv1d_transpose(in[0], in[1], 2);
                                },
                                eps);
    CHECK(e < tol);
  }
  // depthwise_conv1d
  {
    auto x = random_tensor<S>(rng, {3, 10});
    auto k = random_tensor<S>(rng, {3, 3});
    double e = max_fd_relerr<S>({x, k},
                                [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
                                  return t.depthwise_conv1d(in[0], in[1], 2);
                                },
                                eps);
    CHECK(e < tol);
  }
  // avg_pool1d
  {
    auto x = random_tensor<S>(rng, {2, 9});
    double e = max_fd_relerr<S>({x},
                                [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
                                  return t.avg_pool1d(in[0], 3, 2);
                                },
                                eps);
    CHECK(e < tol);
  }
  // pad + crop
  {
    auto x = random_tensor<S>(rng, {2, 6});
    double e = max_fd_relerr<S>({x},
                                [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
                                  return t.crop_time(t.pad_time(in[0], 2, 3), 1, 8);
                                },
                                eps);
    CHECK(e < tol);
  }
  // elementwise ops; relu inputs kept away from the kink at 0
  {
    auto a = random_tensor<S>(rng, {6}, 0.5, 1.5);
    auto b = random_tensor<S>(rng, {6}, -1.5, -0.5);
    double e = max_fd_relerr<S>(
        {a, b},
        [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
          auto u = t.mul(t.add(in[0], in[1]), t.sub(in[0], in[1]));
          auto v = t.add(t.relu(in[0]), t.sigmoid(u));
          return t.add(t.square(v), t.cmul(in[1], 0.7));
        },
        eps);
    CHECK(e < tol);
  }
  // log10_safe on positive inputs
  {
    auto a = random_tensor<S>(rng, {5}, 0.1, 2.0);
    double e = max_fd_relerr<S>({a},
                                [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
                                  return t.log10_safe(in[0]);
                                },
                                eps);
    CHECK(e < tol);
  }
  // smul and reductions
  {
    auto a = random_tensor<S>(rng, {4});
    auto b = random_tensor<S>(rng, {4});
    double e = max_fd_relerr<S>(
        {a, b},
        [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
          auto m = t.mean(in[0]);
          auto centered = t.sub(in[0], t.smul(t.input({4}, std::vector<S>(4, S(1))), m));
          return t.add(t.dot(centered, in[1]), t.l2_norm_sq(in[1]));
        },
        eps);
    CHECK(e < tol);
  }
  // bias_add
  {
    auto x = random_tensor<S>(rng, {3, 5});
    auto b = random_tensor<S>(rng, {3});
    double e = max_fd_relerr<S>({x, b},
                                [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
                                  return t.bias_add(in[0], in[1]);
                                },
                                eps);
    CHECK(e < tol);
  }
  // three-layer composition exercising the whole chain
  {
    auto x = random_tensor<S>(rng, {2, 20});
    auto k1 = random_tensor<S>(rng, {4, 2, 5});
    auto b1 = random_tensor<S>(rng, {4});
    auto k2 = random_tensor<S>(rng, {4, 3});
    double e = max_fd_relerr<S>(
        {x, k1, b1, k2},
        [](Tape<S>& t, const std::vector<Tensor<S>>& in) {
          auto h = t.relu(t.bias_add(t.conv1d(in[0], in[1], 2, 1), in[2]));
          auto g = t.depthwise_conv1d(h, in[3], 1);
          return t.mean(t.square(t.avg_pool1d(g, 2, 2)));
        },
        eps);
    CHECK(e < tol);
  }
}

}  // namespace

TEST_CASE("finite differences, 32-bit mode") { fd_check_all<float>(1e-3, 1e-3); }

TEST_CASE("finite differences, 64-bit mode") { fd_check_all<double>(1e-6, 1e-6); }
