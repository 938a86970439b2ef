#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/grad_suite.hpp"
#include "lfusion/diffcore/ops.hpp"
#include "lfusion/diffcore/optim.hpp"

namespace lfusion {
namespace {

TEST(Primitives, IdentityKernelConvReturnsInput) {
  std::mt19937 rng(1);
  auto x = testing::random_tensor<float>(rng, {2, 3, 4, 2});
  auto k = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = conv2d(x, k);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Primitives, SoftmaxOfZerosIsUniform) {
  auto y = softmax(Tensor::zeros({1, 4}), -1);
  for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Primitives, MatmulByIdentity) {
  auto y = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(y.values(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Primitives, ShapeMismatchNamesOpAndShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4, 3}), Tensor::zeros({3, 3, 2, 1})), ShapeError);
  EXPECT_THROW(split(Tensor::zeros({4, 2}), 0, {1, 2}), ShapeError);
  EXPECT_THROW(reshape(Tensor::zeros({4, 2}), {3, 3}), ShapeError);
  EXPECT_THROW(max_pool2d(Tensor::zeros({1, 3, 4, 1}), 2), ShapeError);
}

TEST(Primitives, ConvOutputShapes) {
  auto y = conv2d(Tensor::zeros({2, 8, 6, 3}), Tensor::zeros({3, 3, 3, 5}), Conv2dOptions{2, 1});
  EXPECT_EQ(y.shape(), (Shape{2, 4, 3, 5}));
}

TEST(Primitives, SoftmaxRowsAreDistributions) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = testing::random_tensor<float>(rng, {5, 7}, -10, 10);
    auto y = softmax(x, -1);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y.data()[r * 7 + c], 0.0f);
        s += y.data()[r * 7 + c];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Primitives, ConcatThenSplitIsIdentity) {
  std::mt19937 rng(4);
  for (int axis = 0; axis < 3; ++axis) {
    auto a = testing::random_tensor<float>(rng, {2, 3, 4});
    Shape sb = {2, 3, 4};
    sb[axis] = 5;
    auto b = testing::random_tensor<float>(rng, sb);
    auto parts = split(concat<float>({a, b}, axis), axis, {a.dim(axis), b.dim(axis)});
    EXPECT_EQ(parts[0].values(), a.values());
    EXPECT_EQ(parts[1].values(), b.values());
  }
}

TEST(Primitives, BilinearUpsampleKeepsConstant) {
  auto y = upsample2d_bilinear(Tensor::full({1, 3, 5, 2}, 0.7f), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 6, 10, 2}));
  for (float v : y.data()) EXPECT_NEAR(v, 0.7f, 1e-7);
}

TEST(Primitives, AdaptivePoolAveragesWindows) {
  auto x = Tensor::from({1, 1, 4, 1}, {1, 2, 3, 4});
  EXPECT_EQ(adaptive_avg_pool2d(x, 1, 2).values(), (std::vector<float>{1.5f, 3.5f}));
  EXPECT_THROW(adaptive_avg_pool2d(x, 2, 2), ShapeError);
}

TEST(Primitives, PermuteMatchesManualIndexing) {
  std::mt19937 rng(5);
  auto x = testing::random_tensor<float>(rng, {2, 3, 4});
  auto y = permute(x, {2, 0, 1});
  ASSERT_EQ(y.shape(), (Shape{4, 2, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k)
        EXPECT_EQ(y.data()[(k * 2 + i) * 3 + j], x.data()[(i * 3 + j) * 4 + k]);
}

TEST(Backward, SquareSum) {
  auto x = Tensor::from({2}, {1, 2}, true);
  sum(square(x)).backward();
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{2, 4}));
}

TEST(Backward, ReluSum) {
  auto x = Tensor::from({2}, {-1, 1}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{0, 1}));
}

TEST(Backward, SoftmaxSumHasZeroGradient) {
  std::mt19937 rng(6);
  auto x = testing::random_tensor<float>(rng, {3, 5});
  x.set_requires_grad(true);
  sum(softmax(x, -1)).backward();
  for (float g : x.grad()) EXPECT_NEAR(g, 0.0f, 1e-7);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto loss = sum(square(x));
  loss.backward();
  loss.backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 8.0f);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, RejectsNonScalarLoss) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(square(x).backward(), ShapeError);
}

TEST(Backward, NoTapeWithoutRequiresGrad) {
  auto y = relu(Tensor::from({2}, {1, 2}));
  EXPECT_FALSE(y.requires_grad());
  auto x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  EXPECT_FALSE(relu(x).requires_grad());
}

TEST(Backward, DiamondGraphSumsBothPaths) {
  auto x = Tensor::from({1}, {3}, true);
  auto y = mul(x, x);          // 9, dy/dx = 6
  auto z = add(y, scale(x, 2.0f));  // dz/dx = 6 + 2
  z.backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 8.0f);
}

TEST(GradCheck, QuadraticPasses) {
  std::mt19937 rng(7);
  auto x = testing::random_tensor<float>(rng, {8});
  auto rep = grad_check<float>([](const Tensor& t) { return sum(square(t)); }, x, 1e-3, 1e-3);
  EXPECT_TRUE(rep.pass) << rep.message;
}

// Square whose backward rule is off by a factor of two.
Tensor planted_bad_square(const Tensor& x) {
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
  auto px = x.node_ptr();
  return detail::make_result<float>("bad_square", x.shape(), std::move(out), {px}, x.requires_grad(),
                                    [px](detail::Node<float>& self) {
                                      auto& g = px->ensure_grad();
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                        g[i] += 4.0f * px->data[i] * self.grad[i];
                                    });
}

TEST(GradCheck, PlantedWrongRuleFails) {
  std::mt19937 rng(8);
  auto x = testing::random_tensor<float>(rng, {6});
  auto rep = grad_check<float>([](const Tensor& t) { return sum(planted_bad_square(t)); }, x, 1e-3, 1e-2);
  EXPECT_FALSE(rep.pass);
  EXPECT_GT(rep.max_rel_error, 0.3);
}

TEST(GradCheck, NonFiniteValueReportsLocation) {
  auto x = Tensor::from({3}, {1.0f, 0.5f, 2.0f});
  auto rep = grad_check<float>(
      [](const Tensor& t) {
        // Blows up only when element 1 is perturbed upward.
        return t.data()[1] > 0.5005f ? sum(scale(t, std::numeric_limits<float>::infinity())) : sum(t);
      },
      x, 1e-3, 1e-2);
  EXPECT_FALSE(rep.pass);
  EXPECT_NE(rep.message.find("element 1"), std::string::npos) << rep.message;
}

class PrimitiveGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradients, Float32) {
  const auto cases = testing::primitive_grad_cases<float>();
  const auto& [name, factory] = cases.at(GetParam());
  auto r = testing::run_grad_case<float>(name, factory, 20, 1e-2, 1e-2, 100 + GetParam());
  EXPECT_EQ(r.passed, r.total) << name << " worst " << r.worst;
}

TEST_P(PrimitiveGradients, Float64) {
  const auto cases = testing::primitive_grad_cases<double>();
  const auto& [name, factory] = cases.at(GetParam());
  auto r = testing::run_grad_case<double>(name, factory, 20, 1e-6, 1e-5, 200 + GetParam());
  EXPECT_EQ(r.passed, r.total) << name << " worst " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradients,
                         ::testing::Range<std::size_t>(0, testing::primitive_grad_cases<float>().size()),
                         [](const auto& info) {
                           auto name = testing::primitive_grad_cases<float>().at(info.param).first;
                           for (auto& c : name)
                             if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
                           return name;
                         });

TEST(LrSchedule, StepwiseDecay) {
  EXPECT_DOUBLE_EQ(lr_at_step(1e-4, 0), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at_step(1e-4, 1), 1e-4);
  EXPECT_NEAR(lr_at_step(1e-4, 4), 9.99920e-5, 1e-10);
  EXPECT_DOUBLE_EQ(lr_at_step(1e-4, 5), lr_at_step(1e-4, 4));
  EXPECT_LT(lr_at_step(1e-4, 6), lr_at_step(1e-4, 5));
}

TEST(AdamW, FirstStepMatchesHandEvaluation) {
  // m_hat = 0.5, v_hat = 0.25, so the step is lr * (0.5 / (0.5 + 1e-8) + 1e-4 * 1).
  std::vector<Tensor> params{Tensor::from({1}, {1.0f}, true)};
  params[0].mutable_grad()[0] = 0.5f;
  auto st = OptimizerState::for_params(params, 1e-4, 1e-4);
  adamw_step(params, st);
  const double expected_update = 1e-4 * (0.5 / (0.5 + 1e-8) + 1e-4);
  EXPECT_NEAR(1.0 - params[0].data()[0], expected_update, 1e-7);
  EXPECT_NEAR(params[0].data()[0], 0.99990, 1e-6);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, ZeroGradientWithoutDecayIsNoop) {
  std::vector<Tensor> params{Tensor::from({2}, {0.3f, -2.0f}, true)};
  params[0].mutable_grad();
  auto st = OptimizerState::for_params(params, 1e-4, 0.0);
  adamw_step(params, st);
  EXPECT_EQ(params[0].values(), (std::vector<float>{0.3f, -2.0f}));
}

TEST(AdamW, ZeroGradientDecaysWeights) {
  std::vector<Tensor> params{Tensor::from({1}, {2.0f}, true)};
  auto st = OptimizerState::for_params(params, 1e-4, 1e-4);
  adamw_step(params, st);
  EXPECT_FLOAT_EQ(params[0].data()[0], static_cast<float>(2.0 - 1e-4 * 1e-4 * 2.0));
}

TEST(AdamW, RejectsBadHyperparameters) {
  std::vector<Tensor> params{Tensor::from({1}, {1.0f}, true)};
  auto st = OptimizerState::for_params(params, 0.0, 1e-4);
  EXPECT_THROW(adamw_step(params, st), std::invalid_argument);
  st.base_lr = 1e-4;
  EXPECT_THROW(adamw_step(params, st, AdamBetas{1.0, 0.999}), std::invalid_argument);
  EXPECT_THROW(adamw_step(params, st, AdamBetas{0.9, -0.1}), std::invalid_argument);
}

TEST(AdamW, DeterministicBitForBit) {
  std::mt19937 rng(9);
  auto init = testing::random_tensor<float>(rng, {16});
  auto grads = testing::random_tensor<float>(rng, {16});
  auto run = [&] {
    std::vector<Tensor> params{init.detach()};
    params[0].set_requires_grad(true);
    auto st = OptimizerState::for_params(params);
    for (int s = 0; s < 5; ++s) {
      params[0].zero_grad();
      auto g = params[0].mutable_grad();
      std::copy(grads.data().begin(), grads.data().end(), g.begin());
      adamw_step(params, st);
    }
    return params[0].values();
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamW, StepCounterAndMomentsStartAtZero) {
  std::vector<Tensor> params{Tensor::zeros({3}, true)};
  auto st = OptimizerState::for_params(params);
  EXPECT_EQ(st.step, 0u);
  for (float m : st.m[0]) EXPECT_EQ(m, 0.0f);
  for (float v : st.v[0]) EXPECT_EQ(v, 0.0f);
}

}  // namespace
}  // namespace lfusion
