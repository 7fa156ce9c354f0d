#include "densesr/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "densesr/rng.hpp"
#include "densesr/tape.hpp"
#include "densesr/tensor.hpp"
#include "support/finite_diff.hpp"

using densesr::ConfigError;
using densesr::constant;
using densesr::Rng;
using densesr::Shape;
using densesr::Tape;
using densesr::Tensor;
using densesr::Var;
using testsup::central_diff;
using testsup::max_rel_error;
using testsup::random_tensor;
using testsup::weighted_mean;

namespace {

// Random values bounded away from zero, for ops with a kink at the origin.
Tensor<double> random_away_from_zero(Shape shape, Rng& rng, double gap = 0.05) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(gap, 1.0);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Checks one unary op against the finite-difference oracle.
void check_unary(const std::function<Var<double>(const Var<double>&)>& op,
                 const Tensor<double>& x, Rng& rng, const char* label) {
  Tape<double> tape;
  Var<double> xv = tape.leaf(x);
  Var<double> out = op(xv);
  Tensor<double> r = random_tensor<double>(out.shape(), rng);
  tape.backward(densesr::mean_all(densesr::mul(out, constant(r))));
  auto loss = [&](const Tensor<double>& probe) {
    return weighted_mean(op(constant(probe)).value, r);
  };
  EXPECT_LT(max_rel_error(*tape.gradient(xv), central_diff(loss, x)), 1e-3) << label;
}

}  // namespace

TEST(Elementwise, ForwardValues) {
  Var<double> x = constant(Tensor<double>(
      Shape{1, 1, 1, 5}, std::vector<double>{-2.0, -0.5, 0.0, 0.5, 2.0}));
  Var<double> s = densesr::sigmoid(x);
  EXPECT_DOUBLE_EQ(s.value[2], 0.5);
  EXPECT_NEAR(s.value[4], 1.0 / (1.0 + std::exp(-2.0)), 1e-15);

  Var<double> re = densesr::relu(x);
  EXPECT_DOUBLE_EQ(re.value[0], 0.0);
  EXPECT_DOUBLE_EQ(re.value[4], 2.0);

  Var<double> lk = densesr::leaky_relu(x, 0.2);
  EXPECT_DOUBLE_EQ(lk.value[0], -0.4);
  EXPECT_DOUBLE_EQ(lk.value[4], 2.0);

  Var<double> cl = densesr::clamp(x, -1.0, 1.0);
  EXPECT_DOUBLE_EQ(cl.value[0], -1.0);
  EXPECT_DOUBLE_EQ(cl.value[3], 0.5);
  EXPECT_DOUBLE_EQ(cl.value[4], 1.0);

  Var<double> af = densesr::affine(x, -1.0, 1.0);  // 1 - x
  EXPECT_DOUBLE_EQ(af.value[0], 3.0);
  EXPECT_DOUBLE_EQ(af.value[4], -1.0);

  Var<double> e = constant(Tensor<double>::scalar(std::exp(1.0)));
  EXPECT_NEAR(densesr::log(e).value.item(), 1.0, 1e-15);
}

TEST(Elementwise, SigmoidIsStableAtExtremes) {
  Var<double> x = constant(Tensor<double>(Shape{1, 1, 1, 2}, std::vector<double>{-500.0, 500.0}));
  Var<double> s = densesr::sigmoid(x);
  EXPECT_GE(s.value[0], 0.0);
  EXPECT_LE(s.value[1], 1.0);
  EXPECT_TRUE(std::isfinite(s.value[0]));
  EXPECT_TRUE(std::isfinite(s.value[1]));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  Rng rng(31);
  const Shape shape{2, 3, 4, 4};

  check_unary([](const Var<double>& v) { return densesr::relu(v); },
              random_away_from_zero(shape, rng), rng, "relu");
  check_unary([](const Var<double>& v) { return densesr::leaky_relu(v, 0.2); },
              random_away_from_zero(shape, rng), rng, "leaky_relu");
  check_unary([](const Var<double>& v) { return densesr::sigmoid(v); },
              random_tensor<double>(shape, rng, -3.0, 3.0), rng, "sigmoid");
  check_unary([](const Var<double>& v) { return densesr::log(v); },
              random_tensor<double>(shape, rng, 0.1, 2.0), rng, "log");
  check_unary([](const Var<double>& v) { return densesr::affine(v, 2.5, -0.75); },
              random_tensor<double>(shape, rng), rng, "affine");

  // Clamp: sample each regime (below, inside, above) away from the bounds.
  Tensor<double> cx(shape);
  for (std::size_t i = 0; i < cx.size(); ++i) {
    const double u = rng.uniform();
    if (u < 1.0 / 3) {
      cx[i] = rng.uniform(0.0, 0.15);
    } else if (u < 2.0 / 3) {
      cx[i] = rng.uniform(0.3, 0.7);
    } else {
      cx[i] = rng.uniform(0.9, 1.0);
    }
  }
  check_unary([](const Var<double>& v) { return densesr::clamp(v, 0.2, 0.8); }, cx, rng,
              "clamp");
}

TEST(Binary, AddAndMulMatchFiniteDifferences) {
  Rng rng(37);
  const Shape shape{2, 2, 3, 3};
  Tensor<double> a = random_tensor<double>(shape, rng);
  Tensor<double> b = random_tensor<double>(shape, rng);

  for (const bool is_mul : {false, true}) {
    auto op = [is_mul](const Var<double>& x, const Var<double>& y) {
      return is_mul ? densesr::mul(x, y) : densesr::add(x, y);
    };
    Tape<double> tape;
    Var<double> av = tape.leaf(a);
    Var<double> bv = tape.leaf(b);
    Var<double> out = op(av, bv);
    Tensor<double> r = random_tensor<double>(shape, rng);
    tape.backward(densesr::mean_all(densesr::mul(out, constant(r))));
    auto loss_a = [&](const Tensor<double>& p) {
      return weighted_mean(op(constant(p), constant(b)).value, r);
    };
    auto loss_b = [&](const Tensor<double>& p) {
      return weighted_mean(op(constant(a), constant(p)).value, r);
    };
    EXPECT_LT(max_rel_error(*tape.gradient(av), central_diff(loss_a, a)), 1e-3);
    EXPECT_LT(max_rel_error(*tape.gradient(bv), central_diff(loss_b, b)), 1e-3);
  }
  EXPECT_THROW(densesr::add(constant(a), constant(Tensor<double>(Shape{1, 2, 3, 3}))),
               ConfigError);
}

TEST(Concat, ShapeAndGradientRouting) {
  Tensor<double> a(Shape{1, 2, 4, 4}, 1.0);
  Tensor<double> b(Shape{1, 3, 4, 4}, 2.0);
  Tape<double> tape;
  Var<double> av = tape.leaf(a);
  Var<double> bv = tape.leaf(b);
  Var<double> cat = densesr::concat_channels(av, bv);
  ASSERT_EQ(cat.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_DOUBLE_EQ(cat.value.at(0, 1, 2, 2), 1.0);
  EXPECT_DOUBLE_EQ(cat.value.at(0, 2, 2, 2), 2.0);

  // Scale the mean back up so the upstream gradient at the concat is all ones.
  Var<double> loss = densesr::affine(densesr::mean_all(cat),
                                     static_cast<double>(cat.value.size()), 0.0);
  tape.backward(loss);
  const Tensor<double>* ga = tape.gradient(av);
  const Tensor<double>* gb = tape.gradient(bv);
  ASSERT_NE(ga, nullptr);
  ASSERT_NE(gb, nullptr);
  EXPECT_EQ(ga->shape(), a.shape());
  EXPECT_EQ(gb->shape(), b.shape());
  for (std::size_t i = 0; i < ga->size(); ++i) EXPECT_DOUBLE_EQ((*ga)[i], 1.0);
  for (std::size_t i = 0; i < gb->size(); ++i) EXPECT_DOUBLE_EQ((*gb)[i], 1.0);

  EXPECT_THROW(
      densesr::concat_channels(constant(a), constant(Tensor<double>(Shape{1, 1, 2, 2}))),
      ConfigError);
}

TEST(Reductions, MeanAllValueAndGradient) {
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1.0, 2.0, 3.0, 4.0});
  Tape<double> tape;
  Var<double> xv = tape.leaf(x);
  Var<double> m = densesr::mean_all(xv);
  EXPECT_DOUBLE_EQ(m.value.item(), 2.5);
  tape.backward(m);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ((*tape.gradient(xv))[i], 0.25);
}

TEST(Reductions, SpatialMeanPerBatchElement) {
  Tensor<double> x(Shape{2, 2, 1, 2},
                   std::vector<double>{1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0});
  Rng rng(41);
  Tape<double> tape;
  Var<double> xv = tape.leaf(x);
  Var<double> m = densesr::spatial_mean(xv);
  ASSERT_EQ(m.shape(), (Shape{2, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(m.value[0], 2.5);
  EXPECT_DOUBLE_EQ(m.value[1], 25.0);

  Tensor<double> r = random_tensor<double>(m.shape(), rng);
  tape.backward(densesr::mean_all(densesr::mul(m, constant(r))));
  auto loss = [&](const Tensor<double>& p) {
    return weighted_mean(densesr::spatial_mean(constant(p)).value, r);
  };
  EXPECT_LT(max_rel_error(*tape.gradient(xv), central_diff(loss, x)), 1e-3);
}

TEST(Reductions, L1DistanceValueAndGradient) {
  Rng rng(43);
  const Shape shape{1, 2, 3, 3};
  Tensor<double> a = random_tensor<double>(shape, rng);
  EXPECT_DOUBLE_EQ(densesr::l1_distance(constant(a), constant(a)).value.item(), 0.0);

  // Keep |a - b| away from the kink for differencing.
  Tensor<double> b(shape);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double gap = rng.uniform(0.1, 0.5);
    b[i] = a[i] + (rng.uniform() < 0.5 ? -gap : gap);
  }
  Tape<double> tape;
  Var<double> av = tape.leaf(a);
  Var<double> bv = tape.leaf(b);
  Var<double> d = densesr::l1_distance(av, bv);
  tape.backward(d);
  auto loss_a = [&](const Tensor<double>& p) {
    return densesr::l1_distance(constant(p), constant(b)).value.item();
  };
  auto loss_b = [&](const Tensor<double>& p) {
    return densesr::l1_distance(constant(a), constant(p)).value.item();
  };
  EXPECT_LT(max_rel_error(*tape.gradient(av), central_diff(loss_a, a)), 1e-3);
  EXPECT_LT(max_rel_error(*tape.gradient(bv), central_diff(loss_b, b)), 1e-3);
  EXPECT_THROW(densesr::l1_distance(av, constant(Tensor<double>(Shape{1, 1, 3, 3}))),
               densesr::ConfigError);
}

TEST(Pooling, AvgPool2ValueAndGradient) {
  Tensor<double> x(Shape{1, 1, 2, 4},
                   std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0});
  Rng rng(47);
  Tape<double> tape;
  Var<double> xv = tape.leaf(x);
  Var<double> p = densesr::avg_pool2(xv);
  ASSERT_EQ(p.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(p.value[0], 3.5);
  EXPECT_DOUBLE_EQ(p.value[1], 5.5);

  Tensor<double> r = random_tensor<double>(p.shape(), rng);
  tape.backward(densesr::mean_all(densesr::mul(p, constant(r))));
  auto loss = [&](const Tensor<double>& probe) {
    return weighted_mean(densesr::avg_pool2(constant(probe)).value, r);
  };
  EXPECT_LT(max_rel_error(*tape.gradient(xv), central_diff(loss, x)), 1e-3);

  EXPECT_THROW(densesr::avg_pool2(constant(Tensor<double>(Shape{1, 1, 3, 4}))), ConfigError);
}

TEST(Composite, ChainThroughSeveralOps) {
  // A small end-to-end graph: affine -> sigmoid -> mul -> mean.
  Rng rng(53);
  Tensor<double> x = random_tensor<double>(Shape{2, 1, 3, 3}, rng);
  Tensor<double> w = random_tensor<double>(Shape{2, 1, 3, 3}, rng);
  auto graph = [&w](const Var<double>& xv) {
    Var<double> y = densesr::sigmoid(densesr::affine(xv, 1.7, -0.3));
    return densesr::mul(y, constant(w));
  };
  Tape<double> tape;
  Var<double> xv = tape.leaf(x);
  tape.backward(densesr::mean_all(graph(xv)));
  auto loss = [&](const Tensor<double>& p) {
    Var<double> out = graph(constant(p));
    double acc = 0.0;
    for (std::size_t i = 0; i < out.value.size(); ++i) acc += out.value[i];
    return acc / static_cast<double>(out.value.size());
  };
  EXPECT_LT(max_rel_error(*tape.gradient(xv), central_diff(loss, x)), 1e-3);
}
