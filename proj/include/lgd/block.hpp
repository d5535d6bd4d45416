#pragma once

#include <functional>
#include <string>

#include "lgd/autodiff.hpp"
#include "lgd/rng.hpp"
#include "lgd/tensor.hpp"

namespace lgd {

// A learnable tensor plus the tape leaf it was bound to on the current step.
template <typename T>
struct Param {
  Tensor<T> value;
  int var = -1;

  Var bind(Tape<T>& tp) {
    Var v = tp.leaf(value, true);
    var = v.id;
    return v;
  }
};

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Param<T>&)>;
template <typename T>
using StateVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <typename T>
struct ForwardCtx {
  bool training = false;
  bool skip_temporal = false;   // bypass temporal conv ops (init-equivalence checks)
  bool skip_diffusion = false;  // bypass all diffusion projections
};

template <typename T>
struct PairVars {
  Var x;  // local map [B,C,T,H,W]
  Var g;  // global vector [B,C]; may be invalid when diffusion is off
};

inline void xavier_fill_impl(double a, Rng rng, double* p, Index n) {
  for (Index i = 0; i < n; ++i) p[i] = rng.uniform(-a, a);
}

template <typename T>
void xavier_init(Tensor<T>& w, Index fan_in, Index fan_out, Rng rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-a, a));
}

// ---------------------------------------------------------------------------

template <typename T>
struct Conv3d {
  ConvSpec spec;
  Param<T> w;

  void configure(Index ci, Index co, std::array<Index, 3> kernel, std::array<Index, 3> stride,
                 std::array<Index, 3> pad) {
    spec.in_channels = ci;
    spec.out_channels = co;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.pad = pad;
    w.value = Tensor<T>(spec.weight_shape());
  }

  void init(Rng rng, const std::string& prefix) {
    const Index k = spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
    xavier_init(w.value, spec.in_channels * k, spec.out_channels * k, rng.derive(prefix + ".w"));
  }

  // Kernel mapping each channel to itself at the center temporal tap; an
  // exact no-op on any input.
  void init_identity_temporal() {
    require(spec.in_channels == spec.out_channels && spec.kernel[1] == 1 && spec.kernel[2] == 1 &&
                spec.kernel[0] % 2 == 1,
            "identity init requires a square temporal kernel");
    w.value.fill(T(0));
    const Index C = spec.in_channels, kT = spec.kernel[0];
    for (Index c = 0; c < C; ++c) w.value[((c * C + c) * kT + kT / 2)] = T(1);
  }

  Var forward(Tape<T>& tp, Var x) { return op_conv(tp, x, w.bind(tp), spec); }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) { fn(prefix + ".w", w); }
};

template <typename T>
struct BatchNorm {
  Param<T> gamma, beta;
  Tensor<T> run_mean, run_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  void configure(Index c) {
    gamma.value = Tensor<T>(Shape{c}, T(1));
    beta.value = Tensor<T>(Shape{c}, T(0));
    run_mean = Tensor<T>(Shape{c}, T(0));
    run_var = Tensor<T>(Shape{c}, T(1));
  }

  Var forward(Tape<T>& tp, Var x, const ForwardCtx<T>& ctx) {
    BnOut<T> r = op_batch_norm(tp, x, gamma.bind(tp), beta.bind(tp), run_mean, run_var, ctx.training, eps);
    if (ctx.training) {
      for (Index c = 0; c < run_mean.size(); ++c) {
        run_mean[c] = momentum * run_mean[c] + (T(1) - momentum) * r.batch_mean[c];
        run_var[c] = momentum * run_var[c] + (T(1) - momentum) * r.batch_var[c];
      }
    }
    return r.y;
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
  void visit_state(const std::string& prefix, const StateVisitor<T>& fn) {
    fn(prefix + ".run_mean", run_mean);
    fn(prefix + ".run_var", run_var);
  }
};

template <typename T>
struct Linear {
  Param<T> w;  // [K,S]
  Param<T> b;  // [K]

  void configure(Index in, Index out) {
    w.value = Tensor<T>(Shape{out, in});
    b.value = Tensor<T>(Shape{out});
  }

  void init(Rng rng, const std::string& prefix) {
    xavier_init(w.value, w.value.shape()[1], w.value.shape()[0], rng.derive(prefix + ".w"));
    b.value.fill(T(0));
  }

  Var forward(Tape<T>& tp, Var x) {
    return op_add_rowvec(tp, op_rowbatch_matmul(tp, x, w.bind(tp)), b.bind(tp));
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

// ---------------------------------------------------------------------------
// Diffusion projection W = W1 * W2 with W1 [R,r], W2 [r,S], r = max(1, R/16).
// No bias terms. A dense mode (single [R,S] matrix) exists for tests that
// need exact matrices such as the identity.
// ---------------------------------------------------------------------------

template <typename T>
struct Projection {
  bool dense = false;
  Param<T> w1, w2;  // low-rank factors
  Param<T> w;       // dense mode

  static Index reduced_dim(Index rows) { return std::max<Index>(1, rows / 16); }

  void configure(Index rows, Index cols) {
    const Index r = reduced_dim(rows);
    dense = false;
    w1.value = Tensor<T>(Shape{rows, r});
    w2.value = Tensor<T>(Shape{r, cols});
  }

  void configure_dense(Index rows, Index cols) {
    dense = true;
    w.value = Tensor<T>(Shape{rows, cols});
  }

  // Xavier applies to the projection W itself; the factors are drawn so that
  // W1*W2 matches the variance a dense Xavier W would have.
  void init(Rng rng, const std::string& prefix) {
    if (dense) {
      xavier_init(w.value, w.value.shape()[1], w.value.shape()[0], rng.derive(prefix + ".w"));
      return;
    }
    const Index r = w1.value.shape()[1];
    const double dense_var = 2.0 / static_cast<double>(rows() + cols());
    const double factor_var = std::sqrt(dense_var / static_cast<double>(r));
    const double bound = std::sqrt(3.0 * factor_var);
    Rng r1 = rng.derive(prefix + ".w1");
    for (Index i = 0; i < w1.value.size(); ++i) w1.value[i] = static_cast<T>(r1.uniform(-bound, bound));
    Rng r2 = rng.derive(prefix + ".w2");
    for (Index i = 0; i < w2.value.size(); ++i) w2.value[i] = static_cast<T>(r2.uniform(-bound, bound));
  }

  void zero() {
    if (dense) {
      w.value.fill(T(0));
    } else {
      w1.value.fill(T(0));
      w2.value.fill(T(0));
    }
  }

  Index rows() const { return dense ? w.value.shape()[0] : w1.value.shape()[0]; }
  Index cols() const { return dense ? w.value.shape()[1] : w2.value.shape()[1]; }

  Index param_count() const {
    return dense ? w.value.size() : w1.value.size() + w2.value.size();
  }

  // g [B,cols] -> [B,rows]
  Var apply(Tape<T>& tp, Var g) {
    if (dense) return op_rowbatch_matmul(tp, g, w.bind(tp));
    Var mid = op_rowbatch_matmul(tp, g, w2.bind(tp));  // note: w2 is [r,S]; x . w2^T
    return op_rowbatch_matmul(tp, mid, w1.bind(tp));
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    if (dense) {
      fn(prefix + ".w", w);
    } else {
      fn(prefix + ".w1", w1);
      fn(prefix + ".w2", w2);
    }
  }
};

// ---------------------------------------------------------------------------
// Residual unit F: bottleneck 1x1 -> spatial -> [temporal] -> 1x1 with batch
// norm and ReLU between layers, identity (or projected) shortcut. The output
// is pre-activation; the enclosing block applies ReLU after the diffusion add.
// ---------------------------------------------------------------------------

template <typename T>
struct ResidualUnit {
  bool p3da = false;  // temporal 3x1x1 conv in cascade after the spatial conv
  Index in_channels = 0, out_channels = 0, mid_channels = 0, spatial_stride = 1;
  Conv3d<T> conv_reduce, conv_spatial, conv_temporal, conv_expand, conv_short;
  BatchNorm<T> bn1, bn2, bn3, bn4, bn_short;
  bool has_projection_shortcut = false;

  void configure(Index ci, Index co, Index mid, Index stride, bool temporal) {
    in_channels = ci;
    out_channels = co;
    mid_channels = mid;
    spatial_stride = stride;
    p3da = temporal;
    conv_reduce.configure(ci, mid, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    bn1.configure(mid);
    conv_spatial.configure(mid, mid, {1, 3, 3}, {1, stride, stride}, {0, 1, 1});
    bn2.configure(mid);
    if (p3da) {
      conv_temporal.configure(mid, mid, {3, 1, 1}, {1, 1, 1}, {1, 0, 0});
      bn3.configure(mid);
    }
    conv_expand.configure(mid, co, {1, 1, 1}, {1, 1, 1}, {0, 0, 0});
    bn4.configure(co);
    has_projection_shortcut = (ci != co) || (stride != 1);
    if (has_projection_shortcut) {
      conv_short.configure(ci, co, {1, 1, 1}, {1, stride, stride}, {0, 0, 0});
      bn_short.configure(co);
    }
  }

  void init(Rng rng, const std::string& prefix) {
    conv_reduce.init(rng, prefix + ".conv1");
    conv_spatial.init(rng, prefix + ".conv2");
    if (p3da) conv_temporal.init(rng, prefix + ".conv_t");
    conv_expand.init(rng, prefix + ".conv3");
    if (has_projection_shortcut) conv_short.init(rng, prefix + ".conv_sc");
  }

  Var forward(Tape<T>& tp, Var x, const ForwardCtx<T>& ctx) {
    Var h = op_relu(tp, bn1.forward(tp, conv_reduce.forward(tp, x), ctx));
    h = op_relu(tp, bn2.forward(tp, conv_spatial.forward(tp, h), ctx));
    if (p3da) {
      Var ht = ctx.skip_temporal ? h : conv_temporal.forward(tp, h);
      h = op_relu(tp, bn3.forward(tp, ht, ctx));
    }
    h = bn4.forward(tp, conv_expand.forward(tp, h), ctx);
    Var sc = x;
    if (has_projection_shortcut) sc = bn_short.forward(tp, conv_short.forward(tp, x), ctx);
    return op_add(tp, h, sc);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    conv_reduce.visit_params(prefix + ".conv1", fn);
    bn1.visit_params(prefix + ".bn1", fn);
    conv_spatial.visit_params(prefix + ".conv2", fn);
    bn2.visit_params(prefix + ".bn2", fn);
    if (p3da) {
      conv_temporal.visit_params(prefix + ".conv_t", fn);
      bn3.visit_params(prefix + ".bn_t", fn);
    }
    conv_expand.visit_params(prefix + ".conv3", fn);
    bn4.visit_params(prefix + ".bn3", fn);
    if (has_projection_shortcut) {
      conv_short.visit_params(prefix + ".conv_sc", fn);
      bn_short.visit_params(prefix + ".bn_sc", fn);
    }
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& fn) {
    bn1.visit_state(prefix + ".bn1", fn);
    bn2.visit_state(prefix + ".bn2", fn);
    if (p3da) bn3.visit_state(prefix + ".bn_t", fn);
    bn4.visit_state(prefix + ".bn3", fn);
    if (has_projection_shortcut) bn_short.visit_state(prefix + ".bn_sc", fn);
  }
};

// ---------------------------------------------------------------------------
// LGD block: local update (global residual broadcast, or sigmoid gate for the
// v2 variant) followed by the global update from the refreshed local map.
// ---------------------------------------------------------------------------

enum class BlockVariant { lgd, v1, v2 };

inline const char* to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::lgd: return "lgd";
    case BlockVariant::v1: return "v1";
    default: return "v2";
  }
}

template <typename T>
struct LgdBlock {
  BlockVariant variant = BlockVariant::lgd;
  bool has_diffusion = true;  // false for the plain baseline block
  ResidualUnit<T> f;
  Projection<T> w_xg;  // C_out x C_in
  Projection<T> w_gx;  // C_out x C_out   (absent for v1)
  Projection<T> w_gg;  // C_out x C_in    (absent for v1)

  void configure(Index ci, Index co, Index mid, Index stride, bool temporal, BlockVariant var,
                 bool diffusion) {
    variant = var;
    has_diffusion = diffusion;
    f.configure(ci, co, mid, stride, temporal);
    if (has_diffusion) {
      w_xg.configure(co, ci);
      if (variant != BlockVariant::v1) {
        w_gx.configure(co, co);
        w_gg.configure(co, ci);
      }
    }
  }

  void init(Rng rng, const std::string& prefix) {
    f.init(rng, prefix + ".f");
    if (has_diffusion) {
      w_xg.init(rng, prefix + ".diff_xg");
      if (variant != BlockVariant::v1) {
        w_gx.init(rng, prefix + ".diff_gx");
        w_gg.init(rng, prefix + ".diff_gg");
      }
    }
  }

  bool diffusion_active(const ForwardCtx<T>& ctx) const { return has_diffusion && !ctx.skip_diffusion; }

  // x_l from the incoming pair
  Var local_update(Tape<T>& tp, const PairVars<T>& in, const ForwardCtx<T>& ctx) {
    Var fx = f.forward(tp, in.x, ctx);
    if (!diffusion_active(ctx)) return op_relu(tp, fx);
    require(in.g.valid(), "diffusion block requires a global vector input");
    Var proj = w_xg.apply(tp, in.g);
    if (variant == BlockVariant::v2) return op_relu(tp, op_mul_broadcast(tp, fx, op_sigmoid(tp, proj)));
    return op_relu(tp, op_add_broadcast(tp, fx, proj));
  }

  // g_l from the refreshed local map and the previous global vector
  Var global_update(Tape<T>& tp, Var x_new, Var g_prev, const ForwardCtx<T>& ctx) {
    if (!diffusion_active(ctx)) return Var{};
    Var pooled = op_global_avg_pool(tp, x_new);
    if (variant == BlockVariant::v1) return pooled;
    return op_relu(tp, op_add(tp, w_gx.apply(tp, pooled), w_gg.apply(tp, g_prev)));
  }

  PairVars<T> forward(Tape<T>& tp, const PairVars<T>& in, const ForwardCtx<T>& ctx) {
    Var x_new = local_update(tp, in, ctx);
    Var g_new = global_update(tp, x_new, in.g, ctx);
    return PairVars<T>{x_new, g_new};
  }

  // Parameters added by diffusion on top of the plain residual block.
  Index extra_param_count() const {
    if (!has_diffusion) return 0;
    Index n = w_xg.param_count();
    if (variant != BlockVariant::v1) n += w_gx.param_count() + w_gg.param_count();
    return n;
  }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& fn) {
    f.visit_params(prefix + ".f", fn);
    if (has_diffusion) {
      w_xg.visit_params(prefix + ".diff_xg", fn);
      if (variant != BlockVariant::v1) {
        w_gx.visit_params(prefix + ".diff_gx", fn);
        w_gg.visit_params(prefix + ".diff_gg", fn);
      }
    }
  }

  void visit_state(const std::string& prefix, const StateVisitor<T>& fn) {
    f.visit_state(prefix + ".f", fn);
  }
};

// Extra diffusion parameters for a square block of width C with low-rank
// factors: 3 projections, 2 factors each, C x max(1, C/16).
inline Index count_extra_params(Index c) { return 6 * c * Projection<double>::reduced_dim(c); }

}  // namespace lgd
