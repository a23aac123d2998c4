#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ctam/tensor.hpp"

using namespace ctam;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::vector<int> shape, double scale = 1.0,
                     bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = uniform_pm(rng, scale);
  return t;
}

// Direct six-loop cross-correlation, independent of the production kernel.
std::vector<double> conv2d_reference(const Tensor& input, const Tensor& kernels, int stride,
                                     int pad) {
  const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const int kh = kernels.dim(0), kw = kernels.dim(1), cout = kernels.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow * cout, 0.0);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx)
            for (int ci = 0; ci < cin; ++ci) {
              const int y = oy * stride - pad + ky;
              const int x = ox * stride - pad + kx;
              if (y < 0 || y >= h || x < 0 || x >= w) continue;
              acc += input.data()[(static_cast<std::size_t>(y) * w + x) * cin + ci] *
                     kernels.data()[((static_cast<std::size_t>(ky) * kw + kx) * cin + ci) * cout +
                                    co];
            }
        out[(static_cast<std::size_t>(oy) * ow + ox) * cout + co] = acc;
      }
  return out;
}

}  // namespace

TEST(Tensor, ConstructionInvariants) {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2);
  EXPECT_THROW(Tensor::from_data({2, 3}, {1, 2}), std::invalid_argument);
  EXPECT_THROW(Tensor::zeros({0}), std::invalid_argument);
  EXPECT_THROW(Tensor::zeros({2, 2, 2, 2, 2}), std::invalid_argument);
  Tensor g = Tensor::zeros({4}, true);
  EXPECT_EQ(g.grad().size(), 4u);
  Tensor ng = Tensor::zeros({4}, false);
  EXPECT_TRUE(ng.grad().empty());
}

TEST(Conv2d, IdentityKernel) {
  Tensor input = Tensor::full({3, 3, 1}, 1.0);
  Tensor kernel = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor out = conv2d(input, kernel, 1, 0);
  ASSERT_EQ(out.shape(), (std::vector<int>{3, 3, 1}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out.data()[i], 1.0);
}

TEST(Conv2d, SumKernel) {
  Tensor input = Tensor::full({3, 3, 1}, 1.0);
  Tensor kernel = Tensor::full({3, 3, 1, 1}, 1.0);
  Tensor out = conv2d(input, kernel, 1, 0);
  ASSERT_EQ(out.shape(), (std::vector<int>{1, 1, 1}));
  EXPECT_DOUBLE_EQ(out.item(), 9.0);
}

TEST(Conv2d, MatchesLoopReference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor input = random_tensor(rng, {8, 8, 2});
    Tensor kernels = random_tensor(rng, {3, 3, 2, 4});
    const int stride = 1 + static_cast<int>(seed % 2);
    const int pad = static_cast<int>(seed % 3);
    Tensor out = conv2d(input, kernels, stride, pad);
    const std::vector<double> expected = conv2d_reference(input, kernels, stride, pad);
    ASSERT_EQ(out.size(), expected.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      EXPECT_NEAR(out.data()[i], expected[i], 1e-6);
  }
}

TEST(Conv2d, ShapeErrors) {
  Tensor input = Tensor::zeros({4, 4, 3});
  Tensor kernels = Tensor::zeros({3, 3, 2, 4});
  try {
    conv2d(input, kernels, 1, 0);
    FAIL() << "expected channel mismatch";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("axis 2"), std::string::npos);
  }
  Tensor ok = Tensor::zeros({3, 3, 2, 4});
  EXPECT_THROW(conv2d(input, ok, 0, 0), std::invalid_argument);
  EXPECT_THROW(conv2d(Tensor::zeros({2, 2, 1}), Tensor::zeros({5, 5, 1, 1}), 1, 0),
               std::invalid_argument);
}

TEST(Pointwise, SigmoidRelu) {
  Tensor x = Tensor::from_data({3}, {0.0, -3.0, 3.0});
  Tensor s = sigmoid(x);
  EXPECT_DOUBLE_EQ(s.data()[0], 0.5);
  Tensor r = relu(x);
  EXPECT_DOUBLE_EQ(r.data()[1], 0.0);
  EXPECT_DOUBLE_EQ(r.data()[2], 3.0);
}

TEST(Pointwise, AddMulMatchElementwiseRecomputation) {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor(rng, {4, 5});
  Tensor b = random_tensor(rng, {4, 5});
  Tensor sum = add(a, b);
  Tensor prod = mul(a, b);
  Tensor scaled = scale(a, 2.5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_DOUBLE_EQ(sum.data()[i], a.data()[i] + b.data()[i]);
    EXPECT_DOUBLE_EQ(prod.data()[i], a.data()[i] * b.data()[i]);
    EXPECT_DOUBLE_EQ(scaled.data()[i], a.data()[i] * 2.5);
  }
  EXPECT_THROW(add(a, Tensor::zeros({5, 4})), std::invalid_argument);
  EXPECT_THROW(mul(a, Tensor::zeros({4, 4})), std::invalid_argument);
}

TEST(Matmul, Examples) {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor id = matmul(eye, a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(id.data()[i], a.data()[i]);

  Tensor ones = Tensor::from_data({2, 1}, {1, 1});
  Tensor out = matmul(a, ones);
  EXPECT_DOUBLE_EQ(out.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(out.data()[1], 7.0);

  EXPECT_THROW(matmul(a, Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST(Matmul, MatchesLoopReference) {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor(rng, {5, 7});
  Tensor b = random_tensor(rng, {7, 3});
  Tensor out = matmul(a, b);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 7; ++k) acc += a.data()[i * 7 + k] * b.data()[k * 3 + j];
      EXPECT_NEAR(out.data()[i * 3 + j], acc, 1e-6);
    }
}

TEST(Softmax, Examples) {
  Tensor uniform = softmax(Tensor::from_data({3}, {4.2, 4.2, 4.2}));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(uniform.data()[i], 1.0 / 3.0, 1e-12);

  Tensor single = softmax(Tensor::from_data({1}, {123.0}));
  EXPECT_DOUBLE_EQ(single.item(), 1.0);

  Tensor large = softmax(Tensor::from_data({2}, {1000.0, 0.0}));
  EXPECT_TRUE(std::isfinite(large.data()[0]));
  EXPECT_NEAR(large.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(large.data()[1], 0.0, 1e-12);

  Tensor rows = softmax(Tensor::from_data({2, 2}, {0.0, 1.0, 5.0, 5.0}));
  EXPECT_NEAR(rows.data()[0] + rows.data()[1], 1.0, 1e-12);
  EXPECT_NEAR(rows.data()[2], 0.5, 1e-12);
  EXPECT_NEAR(rows.data()[3], 0.5, 1e-12);
}

TEST(Softmax, EmptyInputRejected) {
  EXPECT_THROW(Tensor::from_data({0}, {}), std::invalid_argument);
}

TEST(Backward, SquareGradient) {
  Tensor x = Tensor::scalar(3.0, true);
  Tape tape;
  Tensor loss = mul(x, x, &tape);
  backward(loss, tape);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor w = random_tensor(rng, {1, 4}, 1.0, true);
  Tensor x = random_tensor(rng, {4, 1}, 1.0);

  Tape tape;
  Tensor loss = reshape(sigmoid(matmul(w, x, &tape), &tape), {1}, &tape);
  backward(loss, tape);
  const std::vector<double> analytic = w.grad();

  const double h = 1e-3;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = w.data()[i];
    w.data()[i] = saved + h;
    const double up = sigmoid(matmul(w, x)).data()[0];
    w.data()[i] = saved - h;
    const double down = sigmoid(matmul(w, x)).data()[0];
    w.data()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    EXPECT_LT(std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])), 1e-4);
  }
}

TEST(Backward, ContractViolations) {
  Tensor x = Tensor::scalar(2.0, true);
  Tape tape;
  Tensor loss = mul(x, x, &tape);
  backward(loss, tape);
  EXPECT_THROW(backward(loss, tape), std::invalid_argument);  // tape consumed

  Tape tape2;
  Tensor big = add(Tensor::zeros({2}, true), Tensor::zeros({2}), &tape2);
  EXPECT_THROW(backward(big, tape2), std::invalid_argument);  // non-scalar

  Tape tape3;
  Tensor detached = Tensor::scalar(1.0, true);
  EXPECT_THROW(backward(detached, tape3), std::invalid_argument);  // never recorded
}

TEST(GradCheck, LinearIsExact) {
  std::mt19937_64 rng(5);
  Tensor coeff = random_tensor(rng, {1, 6});
  Tensor at = random_tensor(rng, {6, 1});
  auto f = [&](const Tensor& x, Tape& tape) { return reshape(matmul(coeff, x, &tape), {1}, &tape); };
  EXPECT_LT(grad_check(f, at), 1e-8);
}

TEST(GradCheck, ConstantReportsZero) {
  Tensor at = Tensor::from_data({3}, {1.0, 2.0, 3.0});
  auto f = [](const Tensor&, Tape&) { return Tensor::scalar(42.0); };
  EXPECT_DOUBLE_EQ(grad_check(f, at), 0.0);
}

TEST(GradCheck, EveryPrimitive) {
  constexpr double kTol = 1e-4;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed + 100);

    // relu inputs kept away from the kink
    {
      Tensor at = Tensor::zeros({6});
      for (std::size_t i = 0; i < at.size(); ++i)
        at.data()[i] = uniform_pm(rng, 1.0) + (i % 2 ? 0.3 : -0.3) * 3;
      Tensor weight = random_tensor(rng, {1, 6});
      auto f = [&](const Tensor& x, Tape& t) {
        return reshape(matmul(weight, reshape(relu(x, &t), {6, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "relu seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {4});
      Tensor weight = random_tensor(rng, {1, 4});
      auto f = [&](const Tensor& x, Tape& t) {
        return reshape(matmul(weight, reshape(sigmoid(x, &t), {4, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "sigmoid seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {3, 3});
      Tensor other = random_tensor(rng, {3, 3});
      Tensor weight = random_tensor(rng, {1, 9});
      auto f = [&](const Tensor& x, Tape& t) {
        Tensor u = add(mul(x, other, &t), scale(x, 0.7, &t), &t);
        return reshape(matmul(weight, reshape(u, {9, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "add/mul/scale seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {3, 4});
      Tensor rhs = random_tensor(rng, {4, 2});
      Tensor weight = random_tensor(rng, {1, 6});
      auto f = [&](const Tensor& x, Tape& t) {
        return reshape(matmul(weight, reshape(matmul(x, rhs, &t), {6, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "matmul seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {2, 3});
      Tensor weight = random_tensor(rng, {1, 6});
      auto f = [&](const Tensor& x, Tape& t) {
        return reshape(matmul(weight, reshape(transpose(x, &t), {6, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "transpose seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {2, 4});
      Tensor weight = random_tensor(rng, {1, 8});
      auto f = [&](const Tensor& x, Tape& t) {
        return reshape(matmul(weight, reshape(softmax(x, &t), {8, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "softmax seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {6, 6, 1});
      Tensor kernels = random_tensor(rng, {3, 3, 1, 2});
      Tensor weight = random_tensor(rng, {1, 2});
      auto f = [&](const Tensor& x, Tape& t) {
        Tensor pooled = global_avg_pool(conv2d(x, kernels, 2, 1, &t), &t);
        return reshape(matmul(weight, reshape(pooled, {2, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "conv2d input seed " << seed;

      Tensor image = random_tensor(rng, {6, 6, 1});
      auto fk = [&](const Tensor& k, Tape& t) {
        Tensor pooled = global_avg_pool(conv2d(image, k, 2, 1, &t), &t);
        return reshape(matmul(weight, reshape(pooled, {2, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(fk, kernels), kTol) << "conv2d kernel seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {3});
      Tensor base = random_tensor(rng, {2, 2, 3});
      Tensor weight = random_tensor(rng, {1, 3});
      auto f = [&](const Tensor& b, Tape& t) {
        Tensor pooled = global_avg_pool(bias_add(base, b, &t), &t);
        return reshape(matmul(weight, reshape(pooled, {3, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "bias_add seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {2, 2});
      Tensor feats = random_tensor(rng, {2, 2, 3});
      Tensor weight = random_tensor(rng, {1, 3});
      auto f = [&](const Tensor& m, Tape& t) {
        Tensor pooled = global_avg_pool(spatial_scale(feats, m, &t), &t);
        return reshape(matmul(weight, reshape(pooled, {3, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "spatial_scale seed " << seed;
    }
    {
      Tensor at = random_tensor(rng, {1, 3});
      Tensor below = random_tensor(rng, {2, 3});
      Tensor weight = random_tensor(rng, {1, 3});
      auto f = [&](const Tensor& x, Tape& t) {
        Tensor rowsum = take_row(concat_rows(x, below, &t), 0, &t);
        return reshape(matmul(weight, reshape(rowsum, {3, 1}, &t), &t), {1}, &t);
      };
      EXPECT_LT(grad_check(f, at), kTol) << "concat/take_row seed " << seed;
    }
  }
}

TEST(Determinism, RepeatedOpsBitIdentical) {
  std::mt19937_64 rng(21);
  Tensor input = random_tensor(rng, {8, 8, 2});
  Tensor kernels = random_tensor(rng, {3, 3, 2, 4});
  Tensor a = conv2d(input, kernels, 2, 1);
  Tensor b = conv2d(input, kernels, 2, 1);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}
