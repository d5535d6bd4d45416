#pragma once

#include <string>
#include <vector>

#include "lgd/backbone.hpp"
#include "lgd/sketch.hpp"
#include "lgd/train.hpp"

// Gradient-check suites and the sketch approximation benchmark. Everything
// here runs in double precision; these are the library's verification paths.
namespace lgd::verify {

struct CheckResult {
  std::string target;
  double max_rel_err = 0;
  double threshold = 0;
  bool pass = false;
};

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline std::vector<Index> random_labels(Index n, Index k, Rng& rng) {
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = rng.uniform_int(k);
  return out;
}

namespace detail {

// Wraps a tape-building function into the eval interface grad_check expects.
template <typename BuildFn>
GradReport check(BuildFn&& build, std::vector<std::pair<std::string, Tensor<double>*>> targets, double h,
                 std::uint64_t seed, Index coords = 32) {
  auto eval = [&](bool with_grads) {
    Tape<double> tp;
    std::map<std::string, Var> leaves;
    Var loss = build(tp, leaves);
    LossEval ev;
    ev.loss = tp.val(loss)[0];
    if (with_grads) {
      tp.backward(loss);
      for (auto& [name, var] : leaves) ev.grads[name] = tp.grad(var);
    }
    return ev;
  };
  return grad_check(eval, targets, h, seed, coords);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> gradcheck_ops(std::uint64_t seed, double h = 1e-5) {
  std::vector<CheckResult> results;
  Rng rng = Rng(seed).derive("gradcheck_ops");
  const double smooth_thresh = 1e-5;

  auto run = [&](const std::string& name, double thresh, auto&& build,
                 std::vector<std::pair<std::string, Tensor<double>*>> targets) {
    GradReport rep = detail::check(build, targets, h, seed);
    results.push_back({name, rep.max_rel_err, thresh, rep.pass(thresh)});
  };

  {  // linear layer + softmax cross-entropy
    auto x = random_tensor({4, 6}, rng);
    auto w = random_tensor({3, 6}, rng);
    auto b = random_tensor({3}, rng);
    auto labels = random_labels(4, 3, rng);
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      Var wv = tp.leaf(w, true);
      Var bv = tp.leaf(b, true);
      lv = {{"x", xv}, {"w", wv}, {"b", bv}};
      return op_softmax_cross_entropy(tp, op_add_rowvec(tp, op_rowbatch_matmul(tp, xv, wv), bv), labels);
    };
    run("linear+softmax_ce", 1e-6, build, {{"x", &x}, {"w", &w}, {"b", &b}});
  }
  {  // conv (3D kernel with stride and padding)
    auto x = random_tensor({2, 3, 4, 5, 5}, rng);
    ConvSpec spec;
    spec.in_channels = 3;
    spec.out_channels = 4;
    spec.kernel = {3, 3, 3};
    spec.stride = {1, 2, 2};
    spec.pad = {1, 1, 1};
    auto w = random_tensor(spec.weight_shape(), rng, -0.5, 0.5);
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      Var wv = tp.leaf(w, true);
      lv = {{"x", xv}, {"w", wv}};
      return op_sum_all(tp, op_sigmoid(tp, op_conv(tp, xv, wv, spec)));
    };
    run("conv", smooth_thresh, build, {{"x", &x}, {"w", &w}});
  }
  {  // batch norm (training statistics)
    auto x = random_tensor({3, 4, 2, 3, 3}, rng);
    auto gamma = random_tensor({4}, rng, 0.5, 1.5);
    auto beta = random_tensor({4}, rng, -0.5, 0.5);
    Tensor<double> rm(Shape{4}), rv(Shape{4}, 1.0);
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      Var gv = tp.leaf(gamma, true);
      Var bv = tp.leaf(beta, true);
      lv = {{"x", xv}, {"gamma", gv}, {"beta", bv}};
      BnOut<double> bn = op_batch_norm(tp, xv, gv, bv, rm, rv, true, 1e-5);
      return op_sum_all(tp, op_sigmoid(tp, bn.y));
    };
    run("batch_norm", smooth_thresh, build, {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}});
  }
  {  // relu away from kinks, plus max pooling
    Tensor<double> x(Shape{1, 2, 4, 4, 4});
    for (Index i = 0; i < x.size(); ++i) {
      double v = rng.uniform(0.2, 1.0);
      x[i] = rng.coin() ? v : -v;  // keep pre-activations away from 0
    }
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      lv = {{"x", xv}};
      Var pooled = op_max_pool(tp, op_relu(tp, xv), {2, 2, 2}, {2, 2, 2});
      return op_sum_all(tp, op_mul(tp, pooled, pooled));
    };
    run("relu+max_pool", smooth_thresh, build, {{"x", &x}});
  }
  {  // global average pool and broadcast coupling
    auto x = random_tensor({2, 3, 2, 4, 4}, rng);
    auto v = random_tensor({2, 3}, rng);
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      Var vv = tp.leaf(v, true);
      lv = {{"x", xv}, {"v", vv}};
      Var y = op_add_broadcast(tp, xv, vv);
      Var g = op_global_avg_pool(tp, op_mul(tp, y, y));
      return op_sum_all(tp, op_sigmoid(tp, g));
    };
    run("broadcast+gap", smooth_thresh, build, {{"x", &x}, {"v", &v}});
  }
  {  // channel gating (mul_broadcast + sigmoid)
    auto x = random_tensor({2, 4, 2, 3, 3}, rng);
    auto v = random_tensor({2, 4}, rng);
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      Var vv = tp.leaf(v, true);
      lv = {{"x", xv}, {"v", vv}};
      return op_sum_all(tp, op_mul_broadcast(tp, xv, op_sigmoid(tp, vv)));
    };
    run("mul_broadcast", smooth_thresh, build, {{"x", &x}, {"v", &v}});
  }
  {  // count sketch + circular convolution (the tensor-sketch path)
    SketchConfig cfg = SketchConfig::create(6, 8, seed + 7);
    auto x = random_tensor({3, 6}, rng);
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      lv = {{"x", xv}};
      return op_sum_all(tp, op_sigmoid(tp, op_tensor_sketch_vec(tp, xv, cfg)));
    };
    run("tensor_sketch_vec", smooth_thresh, build, {{"x", &x}});
  }
  {  // per-location sketch + combined feature
    SketchConfig cfg = SketchConfig::create(5, 8, seed + 11);
    auto x = random_tensor({2, 5, 2, 2, 2}, rng);
    auto g = random_tensor({2, 5}, rng);
    auto build = [&](Tape<double>& tp, std::map<std::string, Var>& lv) {
      Var xv = tp.leaf(x, true);
      Var gv = tp.leaf(g, true);
      lv = {{"x", xv}, {"g", gv}};
      return op_sum_all(tp, op_sigmoid(tp, op_combined_feature(tp, xv, gv, cfg)));
    };
    run("combined_feature", smooth_thresh, build, {{"x", &x}, {"g", &g}});
  }
  return results;
}

// ---------------------------------------------------------------------------
// LGD block, all three variants
// ---------------------------------------------------------------------------

// probes both the pooled local output and the global vector
inline Tensor<double> concat_head(const Tensor<double>& head) {
  const Index K = head.shape()[0], C = head.shape()[1];
  Tensor<double> out(Shape{K, 2 * C});
  for (Index k = 0; k < K; ++k)
    for (Index c = 0; c < C; ++c) {
      out.at2(k, c) = head.at2(k, c);
      out.at2(k, C + c) = head.at2(k, (c * 7 + k) % C) * 0.5;
    }
  return out;
}

inline std::vector<CheckResult> gradcheck_blocks(std::uint64_t seed, double h = 1e-5) {
  std::vector<CheckResult> results;
  Rng rng = Rng(seed).derive("gradcheck_block");
  const double thresh = 1e-4;

  for (BlockVariant variant : {BlockVariant::lgd, BlockVariant::v1, BlockVariant::v2}) {
    const Index C = 16;
    LgdBlock<double> blk;
    blk.configure(C, C, NetworkSpec::mid_channels(C), 1, true, variant, true);
    blk.init(Rng(seed).derive("init"), "blk");

    auto x = random_tensor({1, C, 2, 4, 4}, rng);
    auto g = random_tensor({1, C}, rng);
    std::vector<Index> labels{2};
    Tensor<double> head = random_tensor({6, C}, rng, -0.5, 0.5);

    std::vector<std::pair<std::string, Tensor<double>*>> targets{{"x", &x}, {"g", &g}};
    blk.visit_params("blk", [&](const std::string& name, Param<double>& p) {
      targets.emplace_back(name, &p.value);
    });

    auto eval = [&](bool with_grads) {
      blk.visit_params("blk", [](const std::string&, Param<double>& p) { p.var = -1; });
      Tape<double> tp;
      ForwardCtx<double> ctx;
      ctx.training = true;
      Var xv = tp.leaf(x, true);
      Var gv = tp.leaf(g, true);
      PairVars<double> pair = blk.forward(tp, {xv, gv}, ctx);
      Var logits = op_rowbatch_matmul(tp, op_concat_cols(tp, op_global_avg_pool(tp, pair.x), pair.g),
                                      tp.leaf(concat_head(head), false));
      Var loss = op_softmax_cross_entropy(tp, logits, labels);
      LossEval ev;
      ev.loss = tp.val(loss)[0];
      if (with_grads) {
        tp.backward(loss);
        ev.grads["x"] = tp.grad(xv);
        ev.grads["g"] = tp.grad(gv);
        blk.visit_params("blk", [&](const std::string& name, Param<double>& p) {
          Var v{p.var};
          ev.grads[name] = tp.has_grad(v) ? tp.grad(v) : Tensor<double>(p.value.shape());
        });
      }
      return ev;
    };
    GradReport rep = grad_check(eval, targets, h, seed);
    results.push_back({std::string("block_") + to_string(variant), rep.max_rel_err, thresh, rep.pass(thresh)});
  }
  return results;
}

// ---------------------------------------------------------------------------
// End-to-end toy networks, stage-1 and stage-2 losses
// ---------------------------------------------------------------------------

inline NetworkSpec gradcheck_net_spec(bool is3d) {
  NetworkSpec sp;
  sp.kind = is3d ? NetKind::lgd3d : NetKind::lgd2d;
  sp.stem_channels = 8;
  sp.stem_kernel = 3;
  sp.stem_stride = 1;
  sp.stages = {{1, 16, 1}, {1, 32, 2}};
  if (is3d) {
    sp.temporal_pools = {{-1, 2, 2}};
    sp.input_t = 4;
  } else {
    sp.input_t = 2;
  }
  sp.input_h = 12;
  sp.input_w = 12;
  sp.num_classes = 4;
  sp.sketch_dim = 32;
  return sp;
}

inline std::vector<CheckResult> gradcheck_networks(std::uint64_t seed, double h = 1e-5,
                                                   Index coords = 8) {
  std::vector<CheckResult> results;
  const double thresh = 1e-4;
  Rng rng = Rng(seed).derive("gradcheck_net");

  for (bool is3d : {false, true}) {
    for (int stage : {1, 2}) {
      NetworkSpec sp = gradcheck_net_spec(is3d);
      Network<double> net = Network<double>::build(sp, seed + (is3d ? 1 : 0));
      auto input = random_tensor({2, 3, sp.input_t, sp.input_h, sp.input_w}, rng, 0.0, 1.0);
      auto labels = random_labels(2, sp.num_classes, rng);

      std::vector<std::pair<std::string, Tensor<double>*>> targets;
      net.visit_params([&](const std::string& name, Param<double>& p) {
        targets.emplace_back(name, &p.value);
      });
      targets.emplace_back("input", &input);

      auto eval = [&](bool with_grads) {
        net.visit_params([](const std::string&, Param<double>& p) { p.var = -1; });
        Tape<double> tp;
        ForwardCtx<double> ctx;
        ctx.training = true;
        Var in = tp.leaf(input, true);
        PairVars<double> pair = net.forward(tp, in, ctx);
        LossNodes<double> loss = stage == 1 ? stage1_loss(tp, net, pair, labels)
                                            : stage2_loss(tp, net, pair, labels, false);
        LossEval ev;
        ev.loss = tp.val(loss.total)[0];
        if (with_grads) {
          tp.backward(loss.total);
          ev.grads["input"] = tp.grad(in);
          net.visit_params([&](const std::string& name, Param<double>& p) {
            Var v{p.var};
            ev.grads[name] = (p.var >= 0 && tp.has_grad(v)) ? tp.grad(v) : Tensor<double>(p.value.shape());
          });
        }
        return ev;
      };
      GradReport rep = grad_check(eval, targets, h, seed, coords);
      results.push_back({std::string(is3d ? "lgd3d" : "lgd2d") + "_stage" + std::to_string(stage),
                         rep.max_rel_err, thresh, rep.pass(thresh)});
    }
  }
  return results;
}

// ---------------------------------------------------------------------------
// Sketch approximation benchmark: E[<phi(x),phi(y)>] vs <x,y>^2 across seeds.
// ---------------------------------------------------------------------------

struct SketchBenchRow {
  Index d = 0;
  double mean_estimate = 0;
  double exact = 0;
  double rmse = 0;
  double std_error = 0;
};

struct SketchBenchReport {
  Index input_dim = 0;
  Index trials = 0;
  std::vector<SketchBenchRow> rows;
  bool oracle_equality_pass = false;
  double oracle_max_abs_diff = 0;
};

// Count sketch of the flattened outer product under the combined hash
// h(i,j) = (h1(i)+h2(j)) mod d and sign s1(i)s2(j); the tensor sketch must
// match it exactly up to FFT roundoff.
inline std::vector<double> outer_product_sketch(const std::vector<double>& x, const SketchConfig& cfg) {
  std::vector<double> out(static_cast<std::size_t>(cfg.sketch_dim), 0.0);
  const Index C = cfg.input_dim;
  for (Index i = 0; i < C; ++i)
    for (Index j = 0; j < C; ++j) {
      const Index k = (cfg.h1[static_cast<std::size_t>(i)] + cfg.h2[static_cast<std::size_t>(j)]) %
                      cfg.sketch_dim;
      const double sg = static_cast<double>(cfg.s1[static_cast<std::size_t>(i)]) *
                        static_cast<double>(cfg.s2[static_cast<std::size_t>(j)]);
      out[static_cast<std::size_t>(k)] += sg * x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
    }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline SketchBenchReport sketch_bench(Index input_dim, const std::vector<Index>& dims, Index trials,
                                      std::uint64_t seed) {
  require(trials >= 50, "sketch_bench needs at least 50 trials");
  SketchBenchReport rep;
  rep.input_dim = input_dim;
  rep.trials = trials;

  Rng rng = Rng(seed).derive("sketch_bench");
  std::vector<double> x(static_cast<std::size_t>(input_dim)), y(static_cast<std::size_t>(input_dim));
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal();
  const double exact = dot(x, y) * dot(x, y);

  for (Index d : dims) {
    double sum = 0, sum_sq_err = 0;
    for (Index t = 0; t < trials; ++t) {
      SketchConfig cfg = SketchConfig::create(input_dim, d, rng.next_u64());
      const double est = dot(tensor_sketch(x, cfg), tensor_sketch(y, cfg));
      sum += est;
      sum_sq_err += (est - exact) * (est - exact);
    }
    SketchBenchRow row;
    row.d = d;
    row.mean_estimate = sum / static_cast<double>(trials);
    row.exact = exact;
    row.rmse = std::sqrt(sum_sq_err / static_cast<double>(trials));
    // std error of the mean estimate
    double var = 0;
    {
      // second pass over fresh configs would change draws; derive from rmse:
      // Var(est) = E[(est-exact)^2] - bias^2
      const double bias = row.mean_estimate - exact;
      var = std::max(0.0, row.rmse * row.rmse - bias * bias);
    }
    row.std_error = std::sqrt(var / static_cast<double>(trials));
    rep.rows.push_back(row);
  }

  // oracle equality at small dimensions
  double max_diff = 0;
  Rng orng = Rng(seed).derive("sketch_oracle");
  for (int rep_i = 0; rep_i < 100; ++rep_i) {
    const Index C = 2 + orng.uniform_int(7);  // up to 8
    const Index d = Index(1) << (1 + orng.uniform_int(5));  // {2,...,32}
    SketchConfig cfg = SketchConfig::create(C, d, orng.next_u64());
    std::vector<double> v(static_cast<std::size_t>(C));
    for (auto& e : v) e = orng.uniform(-2.0, 2.0);
    std::vector<double> ts = tensor_sketch(v, cfg);
    std::vector<double> op = outer_product_sketch(v, cfg);
    for (Index k = 0; k < d; ++k)
      max_diff = std::max(max_diff, std::abs(ts[static_cast<std::size_t>(k)] - op[static_cast<std::size_t>(k)]));
  }
  rep.oracle_max_abs_diff = max_diff;
  rep.oracle_equality_pass = max_diff < 1e-9;
  return rep;
}

}  // namespace lgd::verify
