#include "tdpfed/cp_layers.hpp"

#include <gtest/gtest.h>

#include "tdpfed/reference_models.hpp"
#include "test_util.hpp"

namespace tdpfed {
namespace {

using testing::max_abs_diff;
using testing::random_matrix;
using testing::random_tensor;

// out[i,j,t] = b[t] + sum_{p,q,s,r} a1[p,r] a2[q,r] a3[s,r] a4[t,r] x[i+p, j+q, s]
DenseTensor brute_cp_conv(const TensorizedConv& c, const DenseTensor& x) {
  const std::size_t d = c.a1.rows(), S = c.a3.rows(), T = c.a4.rows(), R = c.a1.cols();
  const std::size_t P = x.extent(0) - d + 1, Q = x.extent(1) - d + 1;
  DenseTensor y({P, Q, T});
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < Q; ++j)
      for (std::size_t t = 0; t < T; ++t) {
        double acc = c.bias[t];
        for (std::size_t p = 0; p < d; ++p)
          for (std::size_t q = 0; q < d; ++q)
            for (std::size_t s = 0; s < S; ++s)
              for (std::size_t r = 0; r < R; ++r)
                acc += c.a1(p, r) * c.a2(q, r) * c.a3(s, r) * c.a4(t, r) *
                       x.data()[((i + p) * x.extent(1) + (j + q)) * S + s];
        y.data()[(i * Q + j) * T + t] = acc;
      }
  return y;
}

TEST(TlForward, IdentityFactorization) {
  const Matrix i3 = Matrix::identity(3);
  const std::vector<double> bias(3, 0.0);
  const std::vector<double> x{0.5, -2.0, 7.0};
  EXPECT_EQ(tl_forward({i3, i3, bias}, x), x);
}

TEST(TlForward, ZeroInputGivesBias) {
  std::mt19937_64 rng(1);
  const Matrix a1 = random_matrix(rng, 4, 2), a2 = random_matrix(rng, 3, 2);
  const std::vector<double> bias{1, 2, 3, 4};
  EXPECT_EQ(tl_forward({a1, a2, bias}, std::vector<double>(3, 0.0)), bias);
}

TEST(TlForward, MatchesDenseMultiply) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t out = 1 + trial % 7, in = 2 + trial % 5, r = 1 + trial % 4;
    const Matrix a1 = random_matrix(rng, out, r), a2 = random_matrix(rng, in, r);
    const Matrix b = random_matrix(rng, 1, out), x = random_matrix(rng, 1, in);
    std::vector<double> expect(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b(0, o);
      for (std::size_t i = 0; i < in; ++i) {
        double w = 0.0;
        for (std::size_t k = 0; k < r; ++k) w += a1(o, k) * a2(i, k);
        acc += w * x(0, i);
      }
      expect[o] = acc;
    }
    EXPECT_LT(max_abs_diff(tl_forward({a1, a2, b.data()}, x.data()), expect), 1e-10);
  }
}

TEST(TlForward, LengthMismatchThrows) {
  const Matrix i2 = Matrix::identity(2);
  const std::vector<double> bias(2, 0.0);
  EXPECT_THROW(tl_forward({i2, i2, bias}, std::vector<double>(3, 1.0)), std::invalid_argument);
}

TEST(TcForward, OneByOneIdentity) {
  const Matrix one{{1}};
  const std::vector<double> bias{0.0};
  std::mt19937_64 rng(3);
  const DenseTensor x = random_tensor(rng, {4, 3, 1});
  const DenseTensor y = tc_forward({one, one, one, one, bias}, x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_LT(max_abs_diff(y.data(), x.data()), 1e-15);
}

TEST(TcForward, ZeroOutputFactorGivesZeros) {
  std::mt19937_64 rng(4);
  const Matrix a1 = random_matrix(rng, 3, 2), a2 = random_matrix(rng, 3, 2),
               a3 = random_matrix(rng, 2, 2), a4(3, 2, 0.0);
  const std::vector<double> bias(3, 0.0);
  const DenseTensor y = tc_forward({a1, a2, a3, a4, bias}, random_tensor(rng, {5, 5, 2}));
  EXPECT_EQ(y.data(), std::vector<double>(27, 0.0));
}

TEST(TcForward, StagedMatchesDenseAndBruteForce) {
  std::mt19937_64 rng(5);
  const Matrix a1 = random_matrix(rng, 3, 2), a2 = random_matrix(rng, 3, 2),
               a3 = random_matrix(rng, 2, 2), a4 = random_matrix(rng, 3, 2);
  const std::vector<double> bias{0.1, -0.2, 0.3};
  const TensorizedConv c{a1, a2, a3, a4, bias};
  const DenseTensor x = random_tensor(rng, {5, 5, 2});
  const DenseTensor staged = tc_forward(c, x);
  EXPECT_EQ(staged.shape(), (Shape{3, 3, 3}));
  EXPECT_LT(max_abs_diff(staged.data(), tc_forward_dense(c, x).data()), 1e-9);
  EXPECT_LT(max_abs_diff(staged.data(), brute_cp_conv(c, x).data()), 1e-12);
}

TEST(TcForward, RandomInstancesAgreeWithDense) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> ch(1, 8), sp(3, 8), rk(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t S = ch(rng), T = ch(rng), R = rk(rng), P = sp(rng), Q = sp(rng);
    const Matrix a1 = random_matrix(rng, 3, R), a2 = random_matrix(rng, 3, R),
                 a3 = random_matrix(rng, S, R), a4 = random_matrix(rng, T, R);
    const Matrix b = random_matrix(rng, 1, T);
    const TensorizedConv c{a1, a2, a3, a4, b.data()};
    const DenseTensor x = random_tensor(rng, {P, Q, S});
    const DenseTensor y = tc_forward(c, x);
    EXPECT_LT(max_abs_diff(y.data(), tc_forward_dense(c, x).data()), 1e-9);
    EXPECT_LT(max_abs_diff(y.data(), brute_cp_conv(c, x).data()), 1e-9);
  }
}

TEST(TcForwardDense, ZeroKernelAndPointwiseCase) {
  std::mt19937_64 rng(7);
  const DenseTensor x = random_tensor(rng, {3, 4, 2});
  const std::vector<double> bias(3, 0.0);
  EXPECT_EQ(conv_forward_dense(DenseTensor({3, 3, 2, 3}), bias, x).data(),
            std::vector<double>(2 * 3, 0.0));

  // 1x1 window: each pixel's channels are multiplied by an S x T matrix.
  const DenseTensor k = random_tensor(rng, {1, 1, 2, 3});
  const DenseTensor y = conv_forward_dense(k, bias, x);
  ASSERT_EQ(y.shape(), (Shape{3, 4, 3}));
  for (std::size_t px = 0; px < 12; ++px)
    for (std::size_t t = 0; t < 3; ++t) {
      const double e = x.data()[px * 2] * k.data()[t] + x.data()[px * 2 + 1] * k.data()[3 + t];
      EXPECT_NEAR(y.data()[px * 3 + t], e, 1e-15);
    }
}

TEST(TcForward, InputSmallerThanWindowThrows) {
  const Matrix a(3, 1, 1.0), c(1, 1, 1.0);
  const std::vector<double> bias{0.0};
  EXPECT_THROW(tc_forward({a, a, c, c, bias}, DenseTensor({2, 5, 1})), std::invalid_argument);
  EXPECT_THROW(tc_forward_dense({a, a, c, c, bias}, DenseTensor({5, 2, 1})),
               std::invalid_argument);
}

TEST(CompressionRate, LinearValues) {
  EXPECT_NEAR(compression_rate_linear(784, 100, 59), 78400.0 / (59.0 * 884.0), 1e-12);
  EXPECT_NEAR(compression_rate_linear(784, 100, 59), 1.503, 5e-4);
  EXPECT_NEAR(compression_rate_linear(784, 100, 44), 2.016, 5e-4);
  for (std::size_t n : {1u, 7u, 100u}) EXPECT_DOUBLE_EQ(compression_rate_linear(n, n, n), 0.5);
}

TEST(CompressionRate, ConvValues) {
  EXPECT_NEAR(compression_rate_conv(3, 32, 64, 120), 1.506, 5e-4);
  EXPECT_NEAR(compression_rate_conv(3, 256, 256, 569), 2.00, 5e-3);
  EXPECT_DOUBLE_EQ(compression_rate_conv(1, 1, 1, 1), 0.25);
}

TEST(CompressionRate, DenominatorIsFactorParameterCount) {
  const LayerSpec fc = LayerSpec::linear(100, 10, 5, Activation::none);
  const KruskalFactors f({Matrix(10, 5), Matrix(100, 5)});
  EXPECT_DOUBLE_EQ(compression_rate(fc), 1000.0 / static_cast<double>(f.parameter_count()));
  const LayerSpec cv = LayerSpec::conv(8, 8, 4, 3, 6, 7, Activation::relu);
  const KruskalFactors g({Matrix(3, 7), Matrix(3, 7), Matrix(4, 7), Matrix(6, 7)});
  EXPECT_DOUBLE_EQ(compression_rate(cv), 216.0 / static_cast<double>(g.parameter_count()));
}

TEST(RankForTargetCr, PublishedRankTable) {
  struct Row {
    const char* model;
    const char* layer;
    std::size_t r15, r2;
  };
  const Row table[] = {
      {"dnn", "fc1", 59, 44},     {"dnn", "fc2", 6, 5},         {"vgg8", "conv1", 14, 11},
      {"vgg8", "conv2", 120, 90}, {"vgg8", "conv3", 248, 186},  {"vgg8", "conv4", 504, 378},
      {"vgg8", "conv5", 759, 569}, {"vgg8", "fc1", 85, 64},     {"vgg8", "fc2", 85, 64},
      {"vgg8", "fc3", 6, 5},
  };
  for (const auto& row : table) {
    for (const auto& l : reference_layers(row.model)) {
      if (l.name != row.layer) continue;
      EXPECT_EQ(rank_for_target_cr(l.spec, 1.5), row.r15) << row.model << " " << row.layer;
      EXPECT_EQ(rank_for_target_cr(l.spec, 2.0), row.r2) << row.model << " " << row.layer;
    }
  }
  EXPECT_EQ(plan_ranks("vgg8", 2.0).size(), 8u);
  EXPECT_THROW(plan_ranks("resnet", 2.0), std::invalid_argument);
}

TEST(RankForTargetCr, FloorsAtOne) {
  EXPECT_EQ(rank_for_target_cr(LayerSpec::linear(2, 2, 1, Activation::none), 50.0), 1u);
  EXPECT_THROW(rank_for_target_cr(LayerSpec::linear(2, 2, 1, Activation::none), 0.0),
               std::invalid_argument);
}

TEST(ModelForward, IdentityLinearGivesInput) {
  ModelSpec spec{{LayerSpec::linear(3, 3, 3, Activation::none)}};
  PersonalizedModel m{{{DenseTensor({3, 3}, Matrix::identity(3).data()), {0, 0, 0}}}};
  const Matrix x{{1, -2, 3}, {0.5, 0, -1}};
  EXPECT_EQ(model_forward(spec, m, x), x);
}

TEST(ModelForward, ReluClampsNegatives) {
  ModelSpec spec{{LayerSpec::linear(3, 3, 3, Activation::relu)}};
  PersonalizedModel m{{{DenseTensor({3, 3}, Matrix::identity(3).data()), {0, 0, 0}}}};
  EXPECT_EQ(model_forward(spec, m, Matrix{{-1, 2, -0.5}}), (Matrix{{0, 2, 0}}));
}

TEST(ModelForward, HandComputedTinyNetwork) {
  // W1 = [[1,-1,0],[2,0,1]], b1 = [0,-1]; relu; W2 = [[1,1],[-1,2]], b2 = [0.5,0]
  // x = [1,2,3]: h = relu([-1, 4]) = [0,4]; logits = [4.5, 8]
  ModelSpec spec{{LayerSpec::linear(3, 2, 1, Activation::relu),
                  LayerSpec::linear(2, 2, 1, Activation::softmax)}};
  PersonalizedModel m{{{DenseTensor({2, 3}, {1, -1, 0, 2, 0, 1}), {0, -1}},
                       {DenseTensor({2, 2}, {1, 1, -1, 2}), {0.5, 0}}}};
  const Matrix logits = model_forward(spec, m, Matrix{{1, 2, 3}, {0, 0, 0}});
  EXPECT_EQ(logits, (Matrix{{4.5, 8}, {0.5, 0}}));
  EXPECT_EQ(predict(logits), (std::vector<std::size_t>{1, 0}));
}

TEST(ModelForward, TensorizedAgreesWithComposed) {
  std::mt19937_64 rng(8);
  ModelSpec spec{{LayerSpec::conv(5, 5, 2, 3, 3, 2, Activation::relu),
                  LayerSpec::linear(27, 4, 3, Activation::softmax)}};
  TensorizedModel tm;
  tm.layers.push_back({LayerKind::conv,
                       KruskalFactors({random_matrix(rng, 3, 2), random_matrix(rng, 3, 2),
                                       random_matrix(rng, 2, 2), random_matrix(rng, 3, 2)}),
                       {0.1, 0.2, -0.1}});
  tm.layers.push_back({LayerKind::linear,
                       KruskalFactors({random_matrix(rng, 4, 3), random_matrix(rng, 27, 3)}),
                       {0, 0.5, 0, -0.5}});
  const Matrix x = random_matrix(rng, 6, 50);
  const Matrix a = model_forward(spec, tm, x);
  const Matrix b = model_forward(spec, compose(tm), x);
  EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-10);
}

TEST(ModelForward, ShapeMismatchThrows) {
  ModelSpec spec{{LayerSpec::linear(3, 2, 1, Activation::none)}};
  PersonalizedModel m{{{DenseTensor({2, 3}), {0, 0}}}};
  EXPECT_THROW(model_forward(spec, m, Matrix(1, 4)), std::invalid_argument);
  PersonalizedModel bad{{{DenseTensor({3, 3}), {0, 0}}}};
  EXPECT_THROW(check_compatible(spec, bad), std::invalid_argument);
}

TEST(Predict, TiesGoToLowestIndex) {
  EXPECT_EQ(predict(Matrix{{1, 3, 3}, {2, 2, 2}, {0, -1, 0.5}}),
            (std::vector<std::size_t>{1, 0, 2}));
}

TEST(ModelSpec, ValidateRejectsBadStacks) {
  EXPECT_NO_THROW(dnn_spec(44, 5).validate());
  EXPECT_THROW((ModelSpec{{LayerSpec::linear(3, 2, 1, Activation::relu),
                           LayerSpec::linear(3, 2, 1, Activation::none)}})
                   .validate(),
               std::invalid_argument);
  EXPECT_THROW((ModelSpec{{LayerSpec::linear(3, 2, 1, Activation::softmax),
                           LayerSpec::linear(2, 2, 1, Activation::none)}})
                   .validate(),
               std::invalid_argument);
  EXPECT_THROW((ModelSpec{{LayerSpec::conv(5, 5, 1, 2, 1, 1, Activation::none)}}).validate(),
               std::invalid_argument);
  EXPECT_THROW((ModelSpec{{LayerSpec::linear(3, 2, 0, Activation::none)}}).validate(),
               std::invalid_argument);
}

TEST(TensorizedModel, DnnParameterCount) {
  TensorizedModel m;
  m.layers.push_back({LayerKind::linear, KruskalFactors({Matrix(100, 44), Matrix(784, 44)}),
                      std::vector<double>(100)});
  m.layers.push_back({LayerKind::linear, KruskalFactors({Matrix(10, 5), Matrix(100, 5)}),
                      std::vector<double>(10)});
  EXPECT_EQ(m.parameter_count(), 39556u);
  EXPECT_EQ(compose(m).parameter_count(), 79510u);
}

}  // namespace
}  // namespace tdpfed
