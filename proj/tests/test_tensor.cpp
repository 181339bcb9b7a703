#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vdg/batchnorm.hpp"
#include "vdg/conv.hpp"
#include "vdg/gradcheck.hpp"
#include "vdg/rng.hpp"
#include "vdg/tensor.hpp"

using namespace vdg;

namespace {

template <class T>
TensorT<T> random_tensor(Shape shape, RngStream& rng, double lo = -1.0,
                         double hi = 1.0, bool requires_grad = false) {
  std::vector<T> data(static_cast<size_t>(numel_of(shape)));
  for (auto& x : data) x = static_cast<T>(rng.uniform(lo, hi));
  return TensorT<T>::from(std::move(shape), std::move(data), requires_grad);
}

// direct six-loop convolution, the independent oracle for conv2d
template <class T>
std::vector<T> conv_oracle(const std::vector<T>& x, int n, int ci, int h, int w,
                           const std::vector<T>& k, int co, int kh, int kw,
                           int stride, int pad, int ho, int wo) {
  std::vector<T> out(static_cast<size_t>(n) * co * ho * wo, T(0));
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < ho; ++y)
        for (int xo = 0; xo < wo; ++xo) {
          T acc = T(0);
          for (int c = 0; c < ci; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int iy = y * stride + ky - pad;
                int ix = xo * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x[((static_cast<size_t>(b) * ci + c) * h + iy) * w + ix] *
                       k[((static_cast<size_t>(o) * ci + c) * kh + ky) * kw + kx];
              }
          out[((static_cast<size_t>(b) * co + o) * ho + y) * wo + xo] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity and all-ones cases") {
  auto x = Tensor::from({1, 1, 1, 1}, {7.0f});
  auto k = Tensor::from({1, 1, 1, 1}, {1.0f});
  auto y = conv2d(x, k, 1, 0);
  CHECK(y.item() == 7.0f);

  auto x9 = Tensor::filled({1, 1, 3, 3}, 1.0f);
  auto k9 = Tensor::filled({1, 1, 3, 3}, 1.0f);
  auto y9 = conv2d(x9, k9, 1, 0);
  REQUIRE(y9.shape() == Shape{1, 1, 1, 1});
  CHECK(y9.item() == 9.0f);
}

TEST_CASE("conv2d matches the six-loop oracle") {
  RngStream rng(11);
  auto x = random_tensor<float>({2, 3, 4, 4}, rng);
  auto k = random_tensor<float>({5, 3, 3, 3}, rng);
  auto y = conv2d(x, k, 1, 1);
  REQUIRE(y.shape() == Shape{2, 5, 4, 4});
  auto expect = conv_oracle(x.value(), 2, 3, 4, 4, k.value(), 5, 3, 3, 1, 1, 4, 4);
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK_THAT(y.value()[i], Catch::Matchers::WithinAbs(expect[i], 1e-5));
}

TEST_CASE("conv2d strided and pointwise match the oracle") {
  RngStream rng(12);
  SECTION("3x3 stride 2") {
    auto x = random_tensor<float>({2, 4, 9, 9}, rng);
    auto k = random_tensor<float>({6, 4, 3, 3}, rng);
    auto y = conv2d(x, k, 2, 1);
    int ho = (9 + 2 - 3) / 2 + 1;
    REQUIRE(y.shape() == Shape{2, 6, ho, ho});
    auto expect = conv_oracle(x.value(), 2, 4, 9, 9, k.value(), 6, 3, 3, 2, 1, ho, ho);
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK_THAT(y.value()[i], Catch::Matchers::WithinAbs(expect[i], 1e-5));
  }
  SECTION("1x1") {
    auto x = random_tensor<float>({3, 8, 5, 5}, rng);
    auto k = random_tensor<float>({4, 8, 1, 1}, rng);
    auto y = conv2d(x, k, 1, 0);
    auto expect = conv_oracle(x.value(), 3, 8, 5, 5, k.value(), 4, 1, 1, 1, 0, 5, 5);
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK_THAT(y.value()[i], Catch::Matchers::WithinAbs(expect[i], 1e-5));
  }
  SECTION("1x1 stride 2") {
    auto x = random_tensor<float>({2, 4, 8, 8}, rng);
    auto k = random_tensor<float>({6, 4, 1, 1}, rng);
    auto y = conv2d(x, k, 2, 0);
    auto expect = conv_oracle(x.value(), 2, 4, 8, 8, k.value(), 6, 1, 1, 2, 0, 4, 4);
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK_THAT(y.value()[i], Catch::Matchers::WithinAbs(expect[i], 1e-5));
  }
}

TEST_CASE("conv2d is linear in its input") {
  RngStream rng(13);
  auto x = random_tensor<float>({1, 2, 6, 6}, rng);
  auto y = random_tensor<float>({1, 2, 6, 6}, rng);
  auto k = random_tensor<float>({3, 2, 3, 3}, rng);
  float a = 0.7f, b = -1.3f;
  std::vector<float> combo(x.numel());
  for (long i = 0; i < x.numel(); ++i)
    combo[static_cast<size_t>(i)] = a * x.value()[static_cast<size_t>(i)] + b * y.value()[static_cast<size_t>(i)];
  auto lhs = conv2d(Tensor::from(x.shape(), combo), k, 1, 1);
  auto cx = conv2d(x, k, 1, 1);
  auto cy = conv2d(y, k, 1, 1);
  for (long i = 0; i < lhs.numel(); ++i) {
    float rhs = a * cx.value()[static_cast<size_t>(i)] + b * cy.value()[static_cast<size_t>(i)];
    CHECK_THAT(lhs.value()[static_cast<size_t>(i)], Catch::Matchers::WithinAbs(rhs, 1e-5));
  }
}

TEST_CASE("conv2d rejects bad shapes") {
  auto x = Tensor::filled({1, 2, 4, 4}, 1.0f);
  auto k = Tensor::filled({3, 5, 3, 3}, 1.0f);
  CHECK_THROWS_AS(conv2d(x, k, 1, 1), ConfigError);
  auto k2 = Tensor::filled({3, 2, 7, 7}, 1.0f);
  CHECK_THROWS_AS(conv2d(x, k2, 1, 0), ConfigError);
}

TEST_CASE("primitive forward semantics") {
  SECTION("relu") {
    auto x = Tensor::from({2}, {-2.0f, 3.0f});
    auto y = relu(x);
    CHECK(y.value()[0] == 0.0f);
    CHECK(y.value()[1] == 3.0f);
  }
  SECTION("global average pool") {
    auto x = Tensor::from({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    auto y = global_avg_pool(x);
    CHECK_THAT(y.item(), Catch::Matchers::WithinAbs(2.5, 1e-7));
  }
  SECTION("linear with identity weight and zero bias") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto w = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto b = Tensor::zeros({3});
    auto y = linear(x, w, b);
    for (size_t i = 0; i < 6; ++i) CHECK(y.value()[i] == x.value()[i]);
  }
  SECTION("add shape mismatch") {
    auto a = Tensor::zeros({2, 2});
    auto b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(add(a, b), ConfigError);
  }
}

TEST_CASE("batch_norm closed forms") {
  SECTION("constant input normalizes to zero") {
    auto bn = BatchNormState<float>::make(2);
    auto x = Tensor::filled({4, 2}, 3.0f);
    auto y = batch_norm(x, bn);
    for (auto v : y.value()) CHECK_THAT(v, Catch::Matchers::WithinAbs(0.0, 1e-6));
  }
  SECTION("two-point batch lands at +-1/sqrt(1+eps)") {
    auto bn = BatchNormState<float>::make(1);
    auto x = Tensor::from({2, 1}, {-1.0f, 1.0f});
    auto y = batch_norm(x, bn);
    float expect = 1.0f / std::sqrt(1.0f + 1e-5f);
    CHECK_THAT(y.value()[0], Catch::Matchers::WithinAbs(-expect, 1e-6));
    CHECK_THAT(y.value()[1], Catch::Matchers::WithinAbs(expect, 1e-6));
  }
  SECTION("inference with unit running stats is the identity") {
    auto bn = BatchNormState<float>::make(3);
    bn.training = false;
    RngStream rng(5);
    auto x = random_tensor<float>({4, 3}, rng);
    auto y = batch_norm(x, bn);
    for (long i = 0; i < x.numel(); ++i)
      CHECK_THAT(y.value()[static_cast<size_t>(i)],
                 Catch::Matchers::WithinAbs(x.value()[static_cast<size_t>(i)], 1e-5));
  }
  SECTION("degenerate batch in training mode") {
    auto bn = BatchNormState<float>::make(2);
    auto x = Tensor::filled({1, 2}, 1.0f);
    CHECK_THROWS_AS(batch_norm(x, bn), DegenerateBatchError);
  }
}

TEST_CASE("batch_norm training output is standardized per channel") {
  RngStream rng(21);
  auto bn = BatchNormState<float>::make(3);
  auto x = random_tensor<float>({16, 3, 5, 5}, rng, -2.0, 5.0);
  auto y = batch_norm(x, bn);
  int hw = 25, c = 3, n = 16;
  for (int ci = 0; ci < c; ++ci) {
    double s = 0, s2 = 0;
    long count = static_cast<long>(n) * hw;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < hw; ++i) {
        double v = y.value()[(static_cast<size_t>(b) * c + ci) * hw + i];
        s += v;
        s2 += v * v;
      }
    double m = s / count;
    double var = s2 / count - m * m;
    CHECK(std::abs(m) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batch_norm updates running statistics") {
  auto bn = BatchNormState<float>::make(1);
  auto x = Tensor::from({4, 1}, {1.0f, 3.0f, 5.0f, 7.0f});
  batch_norm(x, bn);
  // mean 4, unbiased var 20/3
  CHECK_THAT(bn.running_mean[0], Catch::Matchers::WithinAbs(0.9f * 0 + 0.1f * 4.0f, 1e-6));
  CHECK_THAT(bn.running_var[0],
             Catch::Matchers::WithinAbs(0.9f * 1.0f + 0.1f * (20.0f / 3.0f), 1e-5));
}

TEST_CASE("gradient_check on the scalar square") {
  // x^2 at x=3, analytic gradient 6; run in double for a tight bound
  auto x = TensorT<double>::from({1}, {3.0}, true);
  auto res = gradient_check<double>([&] { return mul(x, x); }, {x}, 1e-3);
  CHECK(res.checked == 1);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradient_check non-scalar root is a contract error") {
  auto x = Tensor::from({2}, {1.0f, 2.0f}, true);
  CHECK_THROWS_AS(
      gradient_check<float>([&] { return relu(x); }, {x}, 1e-3f),
      ContractError);
}

TEST_CASE("conv-relu-pool-sum chain passes the finite difference oracle") {
  // step chosen well under the smallest |pre-activation| so no ReLU kink
  // falls inside a difference window
  RngStream rng(33);
  auto x = random_tensor<float>({1, 2, 5, 5}, rng, -1.0, 1.0, true);
  auto k = random_tensor<float>({3, 2, 3, 3}, rng, -1.0, 1.0, true);
  auto res = gradient_check<float>(
      [&] { return sum(global_avg_pool(relu(conv2d(x, k, 1, 1)))); }, {x, k},
      1e-3f);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("every differentiable primitive passes gradient checks at random points") {
  // 50 random draws spread across the primitive set, double precision
  RngStream rng(77);
  double worst = 0;
  long total = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto a = random_tensor<double>({3, 4}, rng, -2.0, 2.0, true);
    auto b = random_tensor<double>({3, 4}, rng, -2.0, 2.0, true);
    auto w = random_tensor<double>({2, 4}, rng, -1.0, 1.0, true);
    auto bias = random_tensor<double>({2}, rng, -1.0, 1.0, true);
    auto m = random_tensor<double>({4, 3}, rng, -1.0, 1.0, true);
    auto pos = random_tensor<double>({3, 4}, rng, 0.5, 3.0, true);
    std::vector<std::function<TensorT<double>()>> graphs = {
        [&] { return sum(mul(add(a, b), sub(a, b))); },
        [&] { return mean(sigmoid(affine(a, 1.7, -0.3))); },
        [&] { return sum(sqrt_elem(pos)); },
        [&] { return sum(mul(matmul(a, m), matmul(a, m))); },
        [&] { return mean(linear(a, w, bias)); },
        [&] { return sum(mul(center_columns(a), center_columns(a))); },
        [&] { return sum(column_sums(mul(a, a))); },
        [&] { return mean(transpose2d(mul(a, b))); },
    };
    auto& fn = graphs[static_cast<size_t>(trial) % graphs.size()];
    std::vector<TensorT<double>> pts = {a, b, w, bias, m, pos};
    auto res = gradient_check<double>(fn, pts, 1e-4, 4, 1e-6);
    worst = std::max(worst, res.max_rel_err);
    total += res.checked;
  }
  CHECK(total > 100);
  CHECK(worst < 1e-5);
}

TEST_CASE("batch_norm and channel_scale gradients") {
  RngStream rng(41);
  auto x = random_tensor<double>({4, 3, 2, 2}, rng, -1.0, 1.0, true);
  auto m = random_tensor<double>({4, 3}, rng, 0.1, 1.0, true);
  SECTION("channel_scale") {
    auto res = gradient_check<double>(
        [&] { return sum(mul(channel_scale(x, m), channel_scale(x, m))); },
        {x, m}, 1e-4);
    CHECK(res.max_rel_err < 1e-6);
  }
  SECTION("batch_norm training mode") {
    BatchNormState<double> bn = BatchNormState<double>::make(3);
    auto r = random_tensor<double>({4, 3, 2, 2}, rng, -1.0, 1.0);
    auto res = gradient_check<double>(
        [&] {
          auto y = add(batch_norm(x, bn), r);
          return mean(mul(y, y));
        },
        {x, bn.gamma, bn.beta}, 1e-4, -1, 1e-7);
    CHECK(res.checked > 0);
    CHECK(res.max_rel_err < 1e-5);
  }
  SECTION("batch_norm inference mode") {
    BatchNormState<double> bn = BatchNormState<double>::make(3);
    bn.training = false;
    for (int i = 0; i < 3; ++i) {
      bn.running_mean[static_cast<size_t>(i)] = 0.2 * i;
      bn.running_var[static_cast<size_t>(i)] = 0.5 + 0.3 * i;
    }
    auto res = gradient_check<double>(
        [&] { return mean(mul(batch_norm(x, bn), batch_norm(x, bn))); },
        {x, bn.gamma, bn.beta}, 1e-4);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("softmax cross entropy gradient and values") {
  RngStream rng(51);
  auto logits = random_tensor<double>({5, 4}, rng, -2.0, 2.0, true);
  std::vector<int> labels = {0, 3, 1, 2, 3};
  auto res = gradient_check<double>(
      [&] { return softmax_cross_entropy(logits, labels); }, {logits}, 1e-4);
  CHECK(res.max_rel_err < 1e-6);

  // uniform logits -> log(k)
  auto flat = TensorT<double>::zeros({2, 4});
  auto loss = softmax_cross_entropy(flat, std::vector<int>{1, 2});
  CHECK_THAT(loss.item(), Catch::Matchers::WithinAbs(std::log(4.0), 1e-9));
}

TEST_CASE("straight-through threshold forwards binary, backwards identity") {
  auto s = Tensor::from({4}, {0.2f, 0.7f, 0.5f, 0.9f}, true);
  auto m = straight_through_threshold(s, 0.5f);
  CHECK(m.value() == std::vector<float>{0, 1, 0, 1});
  auto loss = sum(m);
  loss.backward();
  for (auto g : s.grad()) CHECK(g == 1.0f);
}

TEST_CASE("non-finite forward values raise a numeric error") {
  auto a = Tensor::from({2}, {1.0f, -1.0f});
  auto b = Tensor::from({2}, {0.0f, 0.0f});
  // sqrt of a negative number -> NaN must be caught
  CHECK_THROWS_AS(sqrt_elem(sub(b, relu(a))), NumericError);
}

TEST_CASE("gradients accumulate across reuse of the same tensor") {
  auto x = TensorT<double>::from({1}, {2.0}, true);
  auto y = add(mul(x, x), mul(x, x));  // 2x^2, dy/dx = 4x = 8
  y.backward();
  CHECK_THAT(x.grad()[0], Catch::Matchers::WithinAbs(8.0, 1e-12));
}
