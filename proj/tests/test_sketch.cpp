#include <catch2/catch_amalgamated.hpp>

#include "lgd/sketch.hpp"
#include "lgd/verify.hpp"
#include "oracles.hpp"

using namespace lgd;

TEST_CASE("count sketch with identity hash") {
  std::vector<double> x{1, 2, 3, 4};
  std::vector<Index> h{0, 1, 2, 3};
  std::vector<std::int8_t> s{1, -1, 1, -1};
  auto out = count_sketch(x, h, s, 4);
  CHECK(out == std::vector<double>{1, -2, 3, -4});
}

TEST_CASE("count sketch of zero is zero") {
  SketchConfig cfg = SketchConfig::create(8, 16, 5);
  std::vector<double> x(8, 0.0);
  for (double v : count_sketch(x, cfg.h1, cfg.s1, cfg.sketch_dim)) CHECK(v == 0.0);
  for (double v : tensor_sketch(x, cfg)) CHECK(v == 0.0);
}

TEST_CASE("count sketch matches scatter-add oracle exactly") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index C = 1 + rng.uniform_int(12), d = Index(1) << (1 + rng.uniform_int(5));
    SketchConfig cfg = SketchConfig::create(C, d, rng.next_u64());
    std::vector<double> x(static_cast<std::size_t>(C));
    for (auto& v : x) v = rng.uniform(-3, 3);
    auto got = count_sketch(x, cfg.h1, cfg.s1, d);
    std::vector<double> want(static_cast<std::size_t>(d), 0.0);
    for (Index i = 0; i < C; ++i)
      want[static_cast<std::size_t>(cfg.h1[static_cast<std::size_t>(i)])] +=
          cfg.s1[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    REQUIRE(got == want);
  }
}

TEST_CASE("count sketch rejects table domain mismatch") {
  std::vector<double> x{1, 2, 3};
  std::vector<Index> h{0, 1};
  std::vector<std::int8_t> s{1, -1};
  CHECK_THROWS_AS(count_sketch(x, h, s, 4), ShapeError);
}

TEST_CASE("sketch config validation") {
  CHECK_THROWS_AS(SketchConfig::create(4, 1, 7), ShapeError);   // d too small
  CHECK_THROWS_AS(SketchConfig::create(4, 24, 7), ShapeError);  // not a power of two
  SketchConfig a = SketchConfig::create(16, 64, 42);
  SketchConfig b = SketchConfig::create(16, 64, 42);
  CHECK(a == b);  // tables are a pure function of the seed
  SketchConfig c = SketchConfig::create(16, 64, 43);
  CHECK_FALSE(a == c);
}

TEST_CASE("tensor sketch equals explicit outer-product count sketch") {
  Rng rng(11);
  double max_diff = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index C = 2 + rng.uniform_int(7);               // <= 8
    const Index d = Index(1) << (1 + rng.uniform_int(5));  // <= 32
    SketchConfig cfg = SketchConfig::create(C, d, rng.next_u64());
    std::vector<double> x(static_cast<std::size_t>(C));
    for (auto& v : x) v = rng.uniform(-2, 2);
    auto ts = tensor_sketch(x, cfg);
    auto op = verify::outer_product_sketch(x, cfg);
    for (Index k = 0; k < d; ++k)
      max_diff = std::max(max_diff, std::abs(ts[static_cast<std::size_t>(k)] - op[static_cast<std::size_t>(k)]));
  }
  CHECK(max_diff < 1e-9);
}

TEST_CASE("kernel estimate is unbiased within 3 standard errors") {
  verify::SketchBenchReport rep = verify::sketch_bench(16, {64}, 200, 99);
  const auto& row = rep.rows.front();
  INFO("mean " << row.mean_estimate << " exact " << row.exact << " se " << row.std_error);
  CHECK(std::abs(row.mean_estimate - row.exact) <= 3.0 * row.std_error);
}

TEST_CASE("kernel estimate RMSE decreases with sketch dimension") {
  verify::SketchBenchReport rep = verify::sketch_bench(16, {64, 1024}, 200, 7);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[1].rmse < rep.rows[0].rmse);
}

TEST_CASE("combined feature: constant local map collapses to phi(v)") {
  SketchConfig cfg = SketchConfig::create(6, 16, 21);
  Rng rng(22);
  std::vector<double> v(6);
  for (auto& e : v) e = rng.uniform(-1, 1);
  // all N = 2*2*2 locations hold the same channel vector v
  Tensor<double> x(Shape{1, 6, 2, 2, 2});
  for (Index c = 0; c < 6; ++c)
    for (Index l = 0; l < 8; ++l) x[c * 8 + l] = v[static_cast<std::size_t>(c)];
  Tensor<double> g(Shape{1, 6}, 0.0);

  Tape<double> tp;
  Var feat = op_combined_feature(tp, tp.leaf(x), tp.leaf(g), cfg);
  const Tensor<double>& fv = tp.val(feat);
  REQUIRE(fv.shape() == Shape{1, 32});
  auto phi = tensor_sketch(v, cfg);
  for (Index k = 0; k < 16; ++k)
    CHECK(fv.at2(0, k) == Catch::Approx(phi[static_cast<std::size_t>(k)]).margin(1e-12));
  // zero global vector -> zero global half
  for (Index k = 16; k < 32; ++k) CHECK(fv.at2(0, k) == 0.0);
}

TEST_CASE("combined feature matches per-location loop oracle") {
  SketchConfig cfg = SketchConfig::create(5, 16, 31);
  Rng rng(32);
  auto x = oracle::random_tensor({2, 5, 2, 3, 3}, rng);
  auto g = oracle::random_tensor({2, 5}, rng);

  Tape<double> tp;
  Var feat = op_combined_feature(tp, tp.leaf(x), tp.leaf(g), cfg);
  const Tensor<double>& fv = tp.val(feat);

  const Index N = 2 * 3 * 3;
  for (Index b = 0; b < 2; ++b) {
    std::vector<double> mean(16, 0.0);
    for (Index t = 0; t < 2; ++t)
      for (Index h = 0; h < 3; ++h)
        for (Index w = 0; w < 3; ++w) {
          std::vector<double> loc(5);
          for (Index c = 0; c < 5; ++c) loc[static_cast<std::size_t>(c)] = x.at5(b, c, t, h, w);
          auto phi = tensor_sketch(loc, cfg);
          for (int k = 0; k < 16; ++k) mean[static_cast<std::size_t>(k)] += phi[static_cast<std::size_t>(k)];
        }
    for (auto& m : mean) m /= static_cast<double>(N);
    std::vector<double> gv(5);
    for (Index c = 0; c < 5; ++c) gv[static_cast<std::size_t>(c)] = g.at2(b, c);
    auto phig = tensor_sketch(gv, cfg);
    for (Index k = 0; k < 16; ++k) {
      CHECK(fv.at2(b, k) == Catch::Approx(mean[static_cast<std::size_t>(k)]).margin(1e-10));
      CHECK(fv.at2(b, 16 + k) == Catch::Approx(phig[static_cast<std::size_t>(k)]).margin(1e-10));
    }
  }
}

TEST_CASE("combined feature rejects channel mismatch") {
  SketchConfig cfg = SketchConfig::create(5, 16, 31);
  Tape<double> tp;
  Var x = tp.leaf(Tensor<double>(Shape{1, 4, 2, 2, 2}));
  Var g = tp.leaf(Tensor<double>(Shape{1, 4}));
  CHECK_THROWS_AS(op_combined_feature(tp, x, g, cfg), ShapeError);
}

TEST_CASE("classify: zero feature with zero head predicts class 0 by tie rule") {
  Linear<double> head;
  head.configure(8, 4);  // weights and bias start at zero
  Tape<double> tp;
  Var logits = head.forward(tp, tp.leaf(Tensor<double>(Shape{1, 8}, 0.0)));
  std::vector<double> scores(4);
  for (Index k = 0; k < 4; ++k) scores[static_cast<std::size_t>(k)] = tp.val(logits).at2(0, k);
  for (double v : scores) CHECK(v == 0.0);
  CHECK(argmax_lowest(scores) == 0);
}

TEST_CASE("signed sqrt and l2 normalization gradients") {
  Rng rng(77);
  auto x = verify::random_tensor({2, 6}, rng, 0.3, 2.0);  // away from the sqrt kink
  auto w = verify::random_tensor({2, 6}, rng);
  auto eval = [&](bool wg) {
    Tape<double> tp;
    Var xv = tp.leaf(x, true);
    Var y = op_l2_normalize_rows(tp, op_signed_sqrt(tp, xv));
    Var loss = op_sum_all(tp, op_mul(tp, y, tp.leaf(w)));
    LossEval ev;
    ev.loss = tp.val(loss)[0];
    if (wg) {
      tp.backward(loss);
      ev.grads["x"] = tp.grad(xv);
    }
    return ev;
  };
  GradReport rep = grad_check(eval, {{"x", &x}}, 1e-5, 3, 0);
  CHECK(rep.pass(1e-5));
}
