#include <catch2/catch_amalgamated.hpp>

#include "lgd/autodiff.hpp"
#include "lgd/verify.hpp"
#include "oracles.hpp"

using namespace lgd;

TEST_CASE("forward: relu graph") {
  Tape<double> tp;
  Var x = tp.leaf(Tensor<double>::from(Shape{2}, {-2, 3}), true);
  Var y = op_relu(tp, x);
  CHECK(tp.val(y)[0] == 0.0);
  CHECK(tp.val(y)[1] == 3.0);
}

TEST_CASE("forward: constants-only graph") {
  Tape<double> tp;
  Var a = tp.leaf(Tensor<double>(Shape{3}, 2.0), false);
  Var b = tp.leaf(Tensor<double>(Shape{3}, 0.5), false);
  Var y = op_mul(tp, a, b);
  for (Index i = 0; i < 3; ++i) CHECK(tp.val(y)[i] == 1.0);
}

TEST_CASE("forward: composite graph equals manual composition of kernels") {
  Rng rng(17);
  auto x = oracle::random_tensor({1, 2, 2, 4, 4}, rng);
  ConvSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 3;
  spec.kernel = {1, 3, 3};
  spec.pad = {0, 1, 1};
  auto w = oracle::random_tensor(spec.weight_shape(), rng);

  Tape<double> tp;
  Var out = op_global_avg_pool(tp, op_relu(tp, op_conv(tp, tp.leaf(x), tp.leaf(w), spec)));
  Tensor<double> manual = global_avg_pool(relu(conv(x, w, spec)));
  REQUIRE(max_abs_diff(tp.val(out), manual) == 0.0);
}

TEST_CASE("backward: sum gives all-ones") {
  Tape<double> tp;
  Var x = tp.leaf(Tensor<double>::from(Shape{4}, {1, -2, 3, -4}), true);
  Var loss = op_sum_all(tp, x);
  tp.backward(loss);
  for (Index i = 0; i < 4; ++i) CHECK(tp.grad(x)[i] == 1.0);
}

TEST_CASE("backward: relu mask") {
  Tape<double> tp;
  Var x = tp.leaf(Tensor<double>::from(Shape{2}, {-1, 2}), true);
  Var loss = op_sum_all(tp, op_relu(tp, x));
  tp.backward(loss);
  CHECK(tp.grad(x)[0] == 0.0);
  CHECK(tp.grad(x)[1] == 1.0);
}

TEST_CASE("backward before forward is rejected") {
  Tape<double> tp;
  CHECK_THROWS_AS(tp.backward(Var{0}), ShapeError);
  Var x = tp.leaf(Tensor<double>(Shape{2}), true);
  CHECK_THROWS_AS(tp.backward(Var{5}), ShapeError);   // unknown node
  CHECK_THROWS_AS(tp.backward(x), ShapeError);        // non-scalar loss
}

TEST_CASE("two backward passes are bit-identical") {
  Rng rng(5);
  auto xv = oracle::random_tensor({3, 4}, rng);
  auto wv = oracle::random_tensor({2, 4}, rng);
  Tape<double> tp;
  Var x = tp.leaf(xv, true);
  Var w = tp.leaf(wv, true);
  Var loss = op_softmax_cross_entropy(tp, op_rowbatch_matmul(tp, x, w), {0, 1, 0});
  tp.backward(loss);
  Tensor<double> gx = tp.grad(x), gw = tp.grad(w);
  tp.backward(loss);
  CHECK(max_abs_diff(gx, tp.grad(x)) == 0.0);
  CHECK(max_abs_diff(gw, tp.grad(w)) == 0.0);
}

TEST_CASE("gradient linearity: grad(a+b) equals grad(a)+grad(b) exactly") {
  Rng rng(29);
  auto xv = oracle::random_tensor({6}, rng);
  auto av = oracle::random_tensor({6}, rng);
  auto bv = oracle::random_tensor({6}, rng);

  auto grad_of = [&](int which) {
    Tape<double> tp;
    Var x = tp.leaf(xv, true);
    Var l1 = op_sum_all(tp, op_mul(tp, x, tp.leaf(av)));
    Var l2 = op_sum_all(tp, op_mul(tp, x, tp.leaf(bv)));
    Var loss = which == 0 ? l1 : (which == 1 ? l2 : op_add(tp, l1, l2));
    tp.backward(loss);
    return tp.grad(x);
  };
  Tensor<double> g1 = grad_of(0), g2 = grad_of(1), gsum = grad_of(2);
  for (Index i = 0; i < 6; ++i) REQUIRE(gsum[i] == g1[i] + g2[i]);
}

TEST_CASE("softmax cross-entropy examples") {
  {
    Tape<double> tp;
    Var logits = tp.leaf(Tensor<double>(Shape{1, 2}, 0.0), true);
    Var loss = op_softmax_cross_entropy(tp, logits, {0});
    CHECK(tp.val(loss)[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    Tape<double> tp;
    Var logits = tp.leaf(Tensor<double>::from(Shape{1, 2}, {1000.0, 0.0}), true);
    Var loss = op_softmax_cross_entropy(tp, logits, {0});
    CHECK(tp.val(loss)[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(std::isfinite(tp.val(loss)[0]));
  }
  {  // random logits vs explicit softmax-then-log oracle
    Rng rng(31);
    auto lv = oracle::random_tensor({4, 5}, rng, -3.0, 3.0);
    std::vector<Index> labels{0, 3, 2, 4};
    Tape<double> tp;
    Var loss = op_softmax_cross_entropy(tp, tp.leaf(lv, true), labels);
    double want = 0;
    for (Index b = 0; b < 4; ++b) {
      double denom = 0;
      for (Index k = 0; k < 5; ++k) denom += std::exp(lv.at2(b, k));
      want += -std::log(std::exp(lv.at2(b, labels[static_cast<std::size_t>(b)])) / denom);
    }
    want /= 4.0;
    CHECK(tp.val(loss)[0] == Catch::Approx(want).epsilon(1e-10));
  }
  {  // label out of range
    Tape<double> tp;
    Var logits = tp.leaf(Tensor<double>(Shape{1, 3}));
    CHECK_THROWS_AS(op_softmax_cross_entropy(tp, logits, {3}), ShapeError);
    CHECK_THROWS_AS(op_softmax_cross_entropy(tp, logits, {-1}), ShapeError);
  }
}

TEST_CASE("grad_check validates the step size range") {
  auto eval = [](bool) { return LossEval{0.0, {}}; };
  Tensor<double> t(Shape{1});
  CHECK_THROWS_AS(grad_check(eval, {{"t", &t}}, 1e-7, 1), ShapeError);
  CHECK_THROWS_AS(grad_check(eval, {{"t", &t}}, 1e-3, 1), ShapeError);
}

TEST_CASE("gradient checks: primitive op suite") {
  auto results = verify::gradcheck_ops(1234);
  for (const auto& r : results) {
    INFO(r.target << " max_rel_err=" << r.max_rel_err << " threshold=" << r.threshold);
    CHECK(r.pass);
  }
}

TEST_CASE("input leaves receive gradients") {
  Rng rng(77);
  auto x = oracle::random_tensor({2, 3, 2, 4, 4}, rng);
  ConvSpec spec;
  spec.in_channels = 3;
  spec.out_channels = 2;
  spec.kernel = {1, 3, 3};
  spec.pad = {0, 1, 1};
  auto w = oracle::random_tensor(spec.weight_shape(), rng);

  Tape<double> tp;
  Var xv = tp.leaf(x, true);
  Var loss = op_sum_all(tp, op_conv(tp, xv, tp.leaf(w), spec));
  tp.backward(loss);
  CHECK(tp.grad(xv).same_shape(x));
}
