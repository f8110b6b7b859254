#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mseg/layers.hpp"
#include "test_util.hpp"

using namespace mseg;
using mseg::testing::random_tensor;
using mseg::testing::rel_err;
using T64 = Tensor<double>;

namespace {

double dot(const T64& a, const T64& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Checks d<f(x), r>/dx against central differences, where `grad` is the
// analytic gradient of that scalar.
void expect_fd_match(const std::function<T64(const T64&)>& f, T64 x, const T64& r, const T64& grad,
                     double tol, double h = 1e-5) {
  ASSERT_EQ(grad.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = dot(f(x), r);
    x[i] = orig - h;
    const double down = dot(f(x), r);
    x[i] = orig;
    const double fd = (up - down) / (2 * h);
    EXPECT_LT(rel_err(fd, grad[i], 1e-6), tol) << "index " << i << " fd " << fd << " analytic " << grad[i];
  }
}

}  // namespace

TEST(Conv2d, HandExample) {
  const T64 x(Shape{1, 1, 3, 3}, 1.0), k(Shape{1, 1, 3, 3}, 1.0);
  const T64 y = conv2d(x, k, T64(Shape{0}));
  const std::vector<double> expected{4, 6, 4, 6, 9, 6, 4, 6, 4};
  EXPECT_EQ(y.values(), expected);
}

TEST(Conv2d, IdentityKernelAndBias) {
  std::mt19937_64 rng(1);
  const T64 x = random_tensor<double>({2, 3, 5, 4}, rng);
  T64 k(Shape{3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) k.at(c, c, 0, 0) = 1.0;
  EXPECT_EQ(conv2d(x, k, T64(Shape{0})), x);
  const T64 b(Shape{3}, {0.5, -1.0, 2.0});
  const T64 y = conv2d(x, k, b);
  EXPECT_DOUBLE_EQ(y.at(1, 2, 3, 1), x.at(1, 2, 3, 1) + 2.0);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  std::mt19937_64 rng(2);
  const T64 x = random_tensor<double>({2, 3, 7, 6}, rng);
  const T64 k = random_tensor<double>({4, 3, 3, 3}, rng);
  const T64 b = random_tensor<double>({4}, rng);
  for (Padding pad : {Padding::same, Padding::valid}) {
    const T64 y = conv2d(x, k, b, pad);
    const int off = pad == Padding::same ? 1 : 0;
    const std::size_t oh = y.dim(2), ow = y.dim(3);
    EXPECT_EQ(oh, pad == Padding::same ? 7u : 5u);
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t co = 0; co < 4; ++co) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            double s = b[co];
            for (std::size_t ci = 0; ci < 3; ++ci) {
              for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                  const int rr = static_cast<int>(r) + i - off, cc = static_cast<int>(c) + j - off;
                  if (rr < 0 || cc < 0 || rr >= 7 || cc >= 6) continue;
                  s += k.at(co, ci, i, j) * x.at(n, ci, rr, cc);
                }
              }
            }
            EXPECT_NEAR(y.at(n, co, r, c), s, 1e-12);
          }
        }
      }
    }
  }
}

TEST(Conv2d, LargeImageCrossesGemmBlocks) {
  std::mt19937_64 rng(3);
  const T64 x = random_tensor<double>({1, 2, 20, 20}, rng);  // 400 columns > one block
  const T64 k = random_tensor<double>({3, 2, 3, 3}, rng);
  const T64 y = conv2d(x, k, T64(Shape{0}));
  double s = 0;
  for (std::size_t ci = 0; ci < 2; ++ci) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) s += k.at(2, ci, i, j) * x.at(0, ci, 18 + i - 1, 17 + j - 1);
    }
  }
  EXPECT_NEAR(y.at(0, 2, 18, 17), s, 1e-12);
}

TEST(Conv2d, RejectsBadShapes) {
  const T64 x(Shape{1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, T64(Shape{1, 3, 3, 3}), T64(Shape{0})), InvalidArgument);
  EXPECT_THROW(conv2d(x, T64(Shape{1, 2, 2, 2}), T64(Shape{0})), InvalidArgument);
  EXPECT_THROW(conv2d(x, T64(Shape{1, 2, 3, 3}), T64(Shape{2})), InvalidArgument);
  EXPECT_THROW(conv2d(T64(Shape{2, 4, 4}), T64(Shape{1, 2, 3, 3}), T64(Shape{0})), InvalidArgument);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int k : {1, 3}) {
    const T64 x = random_tensor<double>({1, 4, 4, 4}, rng);
    const T64 w = random_tensor<double>({3, 4, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng);
    const T64 b = random_tensor<double>({3}, rng);
    const T64 r = random_tensor<double>({1, 3, 4, 4}, rng);
    const auto g = conv2d_backward(x, w, r);
    expect_fd_match([&](const T64& v) { return conv2d(v, w, b); }, x, r, g.input, 1e-4);
    expect_fd_match([&](const T64& v) { return conv2d(x, v, b); }, w, r, g.kernel, 1e-4);
    expect_fd_match([&](const T64& v) { return conv2d(x, w, v); }, b, r, g.bias, 1e-4);
  }
}

TEST(Activations, Definitions) {
  const T64 x(Shape{4}, {-1.0, 0.0, 2.0, -3.0});
  const T64 l = leaky_relu(x, 0.01);
  EXPECT_DOUBLE_EQ(l[0], -0.01);
  EXPECT_DOUBLE_EQ(l[2], 2.0);
  const T64 e = elu(x, 1.0);
  EXPECT_DOUBLE_EQ(e[1], 0.0);
  EXPECT_NEAR(e[3], std::exp(-3.0) - 1.0, 1e-15);
  // ELU derivative is 1 on both sides of zero.
  const T64 zero(Shape{1}, 0.0), dy(Shape{1}, 1.0);
  T64 dx(Shape{1});
  elu_backward(zero, elu(zero, 1.0), dy, 1.0, dx);
  EXPECT_DOUBLE_EQ(dx[0], 1.0);
  const T64 tiny(Shape{1}, -1e-9);
  T64 dx2(Shape{1});
  elu_backward(tiny, elu(tiny, 1.0), dy, 1.0, dx2);
  EXPECT_NEAR(dx2[0], 1.0, 1e-8);
}

TEST(Activations, GradientsAwayFromKink) {
  std::mt19937_64 rng(5);
  T64 x = random_tensor<double>({1, 2, 3, 3}, rng, -2, 2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) < 0.05) x[i] = 0.5;
  }
  const T64 r = random_tensor<double>(x.shape(), rng);
  T64 gl(x.shape()), ge(x.shape());
  leaky_relu_backward(x, r, 0.01, gl);
  elu_backward(x, elu(x, 1.3), r, 1.3, ge);
  expect_fd_match([](const T64& v) { return leaky_relu(v, 0.01); }, x, r, gl, 1e-6);
  expect_fd_match([](const T64& v) { return elu(v, 1.3); }, x, r, ge, 1e-6);
}

TEST(Resampling, MeanPoolExampleAndOddReject) {
  const T64 x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(mean_pool2(x)[0], 2.5);
  EXPECT_THROW(mean_pool2(T64(Shape{1, 1, 3, 2})), InvalidArgument);
}

TEST(Resampling, BilinearKeepsConstantPlanes) {
  const T64 x(Shape{1, 2, 3, 5}, 0.7);
  const T64 y = bilinear_upsample2(x);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 10}));
  for (double v : y.values()) EXPECT_NEAR(v, 0.7, 1e-12);
  EXPECT_EQ(mean_pool2(y).values(), T64(Shape{1, 2, 3, 5}, 0.7).values());
}

TEST(Resampling, BilinearInteriorTaps) {
  // Half-pixel centres: output sample 2i+1 sits 1/4 of the way from input i to i+1.
  const T64 x(Shape{1, 1, 1, 3}, {0.0, 4.0, 8.0});
  const T64 y = bilinear_upsample2(x);
  const std::vector<double> expected{0.0, 1.0, 3.0, 5.0, 7.0, 8.0};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(y[i], expected[i], 1e-12);
    EXPECT_NEAR(y[6 + i], expected[i], 1e-12);  // second row: edge-clamped copy
  }
}

TEST(Resampling, PoolUndoesNearestUpsampleOnBlockConstantInput) {
  std::mt19937_64 rng(6);
  const T64 coarse = random_tensor<double>({2, 3, 4, 5}, rng);
  const T64 blocky = nearest_upsample2(coarse);
  for (std::size_t r = 0; r < 8; ++r) {
    EXPECT_EQ(blocky.at(1, 2, r, 9), coarse.at(1, 2, r / 2, 4));
  }
  const T64 back = mean_pool2(nearest_upsample2(blocky));
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], blocky[i], 1e-12);
}

TEST(Resampling, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const T64 x = random_tensor<double>({1, 2, 4, 6}, rng);
  {
    const T64 r = random_tensor<double>({1, 2, 2, 3}, rng);
    T64 g(x.shape());
    mean_pool2_backward(r, g);
    expect_fd_match([](const T64& v) { return mean_pool2(v); }, x, r, g, 1e-6);
  }
  {
    const T64 r = random_tensor<double>({1, 2, 8, 12}, rng);
    T64 gn(x.shape()), gb(x.shape());
    nearest_upsample2_backward(r, gn);
    bilinear_upsample2_backward(r, gb);
    expect_fd_match([](const T64& v) { return nearest_upsample2(v); }, x, r, gn, 1e-6);
    expect_fd_match([](const T64& v) { return bilinear_upsample2(v); }, x, r, gb, 1e-6);
  }
}

TEST(Dropout, IdentityCasesAndExpectation) {
  std::mt19937_64 rng(8);
  const T64 x = random_tensor<double>({1, 1, 100, 100}, rng, 0.5, 1.5);
  EXPECT_EQ(dropout(x, 0.0, rng, true), x);
  EXPECT_EQ(dropout(x, 0.5, rng, false), x);
  EXPECT_THROW(dropout(x, 1.0, rng, true), InvalidArgument);
  T64 scale;
  const T64 y = dropout(x, 0.3, rng, true, &scale);
  double mx = 0, my = 0;
  int zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
    zeros += y[i] == 0.0;
    EXPECT_TRUE(scale[i] == 0.0 || std::abs(scale[i] - 1.0 / 0.7) < 1e-12);
  }
  EXPECT_NEAR(my / mx, 1.0, 0.02);
  EXPECT_NEAR(zeros / 10000.0, 0.3, 0.03);
}

TEST(Concat, ForwardAndBackward) {
  std::mt19937_64 rng(9);
  const T64 a = random_tensor<double>({2, 2, 3, 3}, rng), b = random_tensor<double>({2, 1, 3, 3}, rng);
  const T64 y = concat_channels(a, b);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
  EXPECT_EQ(y.at(1, 2, 1, 1), b.at(1, 0, 1, 1));
  EXPECT_EQ(y.at(1, 1, 2, 0), a.at(1, 1, 2, 0));
  T64 da(a.shape()), db(b.shape());
  concat_channels_backward(y, &da, &db, 2, 1);
  EXPECT_EQ(da, a);
  EXPECT_EQ(db, b);
  EXPECT_THROW(concat_channels(a, T64(Shape{2, 1, 4, 3})), InvalidArgument);
}
