#include "densesr/tape.hpp"

#include <gtest/gtest.h>

#include <vector>

#include "densesr/ops.hpp"
#include "densesr/tensor.hpp"

using densesr::constant;
using densesr::Parameter;
using densesr::RuntimeError;
using densesr::Shape;
using densesr::Tape;
using densesr::Tensor;
using densesr::Var;

TEST(Tape, GradOfMeanOfProductIsInputOverN) {
  // loss = mean(w * x) with w a 1x1x2x2 parameter -> grad(w) = x / 4.
  Tensor<float> x_val(Shape{1, 1, 2, 2}, std::vector<float>{1.f, 2.f, 3.f, 4.f});
  Parameter<float> w("w", Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>{5.f, 6.f, 7.f, 8.f}));

  Tape<float> tape;
  Var<float> wv = tape.watch(w);
  Var<float> loss = densesr::mean_all(densesr::mul(wv, constant(x_val)));
  EXPECT_FLOAT_EQ(loss.value.item(), (5.f + 12.f + 21.f + 32.f) / 4.f);

  tape.backward(loss);
  for (int i = 0; i < 4; ++i) {
    EXPECT_FLOAT_EQ(w.grad[i], x_val[i] / 4.f);
  }
}

TEST(Tape, TwoConsumersSumTheirContributions) {
  Parameter<float> w("w", Tensor<float>(Shape{1, 1, 1, 1}, std::vector<float>{3.f}));
  Tape<float> tape;
  Var<float> wv = tape.watch(w);
  // loss = mean(w + w) = 2w -> dloss/dw = 2.
  Var<float> loss = densesr::mean_all(densesr::add(wv, wv));
  tape.backward(loss);
  EXPECT_FLOAT_EQ(w.grad[0], 2.f);
}

TEST(Tape, SecondBackwardIsAnError) {
  Parameter<float> w("w", Tensor<float>::scalar(1.f));
  Tape<float> tape;
  Var<float> loss = densesr::mean_all(tape.watch(w));
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), RuntimeError);
}

TEST(Tape, NonScalarLossRejected) {
  Parameter<float> w("w", Tensor<float>(Shape{1, 1, 2, 2}));
  Tape<float> tape;
  Var<float> v = tape.watch(w);
  EXPECT_THROW(tape.backward(v), RuntimeError);
}

TEST(Tape, ConstantLossRejected) {
  Tape<float> tape;
  Var<float> c = constant(Tensor<float>::scalar(1.f));
  EXPECT_THROW(tape.backward(c), RuntimeError);
}

TEST(Tape, ConstantOnlyForwardRecordsNothing) {
  Var<float> a = constant(Tensor<float>(Shape{1, 1, 4, 4}, 1.f));
  Var<float> b = constant(Tensor<float>(Shape{1, 1, 4, 4}, 2.f));
  Var<float> out = densesr::mean_all(densesr::relu(densesr::add(a, b)));
  EXPECT_FALSE(out.tracked());
  EXPECT_FLOAT_EQ(out.value.item(), 3.f);
}

TEST(Tape, UnreachableParameterKeepsZeroGrad) {
  Parameter<float> used("used", Tensor<float>::scalar(2.f));
  Parameter<float> idle("idle", Tensor<float>::scalar(4.f));
  Tape<float> tape;
  Var<float> uv = tape.watch(used);
  tape.watch(idle);
  Var<float> loss = densesr::mean_all(uv);
  tape.backward(loss);
  EXPECT_FLOAT_EQ(used.grad[0], 1.f);
  EXPECT_FLOAT_EQ(idle.grad[0], 0.f);
}

TEST(Tape, GradAccumulatesAcrossTapes) {
  // Two forward/backward rounds accumulate into the same parameter grad,
  // which is what a multi-term training step relies on.
  Parameter<float> w("w", Tensor<float>::scalar(1.f));
  for (int round = 0; round < 2; ++round) {
    Tape<float> tape;
    Var<float> loss = densesr::mean_all(tape.watch(w));
    tape.backward(loss);
  }
  EXPECT_FLOAT_EQ(w.grad[0], 2.f);
}

TEST(Tape, GradientLookupForIntermediate) {
  Tape<float> tape;
  Var<float> x = tape.leaf(Tensor<float>(Shape{1, 1, 1, 2}, std::vector<float>{1.f, 2.f}));
  Var<float> y = densesr::affine(x, 3.0, 0.0);
  Var<float> loss = densesr::mean_all(y);
  tape.backward(loss);
  const Tensor<float>* gy = tape.gradient(y);
  ASSERT_NE(gy, nullptr);
  EXPECT_FLOAT_EQ((*gy)[0], 0.5f);
  const Tensor<float>* gx = tape.gradient(x);
  ASSERT_NE(gx, nullptr);
  EXPECT_FLOAT_EQ((*gx)[0], 1.5f);
}

TEST(Tape, MixingTapesIsAnError) {
  Tape<float> t1, t2;
  Var<float> a = t1.leaf(Tensor<float>::scalar(1.f));
  Var<float> b = t2.leaf(Tensor<float>::scalar(2.f));
  EXPECT_THROW(densesr::add(a, b), RuntimeError);
}
