#pragma once

#include <string>
#include <vector>

#include "lgd/block.hpp"
#include "lgd/sketch.hpp"

namespace lgd {

enum class NetKind { lgd2d, lgd3d, baseline2d, baseline3d };
enum class InitKind { scratch, pretrained_style };
enum class ClassifierKind { separate_heads, combined };

inline const char* to_string(NetKind k) {
  switch (k) {
    case NetKind::lgd2d: return "lgd2d";
    case NetKind::lgd3d: return "lgd3d";
    case NetKind::baseline2d: return "baseline2d";
    default: return "baseline3d";
  }
}
inline const char* to_string(InitKind k) { return k == InitKind::scratch ? "scratch" : "pretrained_style"; }
inline const char* to_string(ClassifierKind k) {
  return k == ClassifierKind::separate_heads ? "separate_heads" : "combined";
}

struct StageSpec {
  Index blocks = 1;
  Index channels = 16;
  Index spatial_stride = 1;
};

// Temporal max pooling position: after_stage == -1 places it after the stem.
struct TemporalPool {
  int after_stage = -1;
  Index extent = 2;
  Index stride = 2;
};

struct NetworkSpec {
  NetKind kind = NetKind::lgd2d;
  BlockVariant variant = BlockVariant::lgd;
  InitKind init = InitKind::scratch;
  ClassifierKind classifier = ClassifierKind::separate_heads;
  Index in_channels = 3;
  Index stem_channels = 16;
  Index stem_kernel = 3;
  Index stem_stride = 1;
  std::vector<StageSpec> stages;
  std::vector<TemporalPool> temporal_pools;
  Index input_t = 3, input_h = 32, input_w = 32;
  Index num_classes = 6;
  Index sketch_dim = 0;  // 0 resolves to 4 * final channels
  bool sketch_signed_sqrt = false;
  bool sketch_l2norm = false;

  bool is3d() const { return kind == NetKind::lgd3d || kind == NetKind::baseline3d; }
  bool diffusion() const { return kind == NetKind::lgd2d || kind == NetKind::lgd3d; }
  Index final_channels() const { return stages.back().channels; }
  static Index mid_channels(Index c) { return std::max<Index>(1, c / 4); }
  Index resolved_sketch_dim() const { return sketch_dim > 0 ? sketch_dim : 4 * final_channels(); }

  void validate() const {
    require(!stages.empty(), "network spec needs at least one stage");
    require(in_channels >= 1 && stem_channels >= 1, "network spec channel counts must be >= 1");
    require(stem_kernel >= 1 && stem_kernel % 2 == 1, "stem kernel must be odd");
    require(input_t >= 1 && input_h >= 1 && input_w >= 1, "network input extents must be >= 1");
    require(num_classes >= 2, "network needs at least 2 classes");
    for (const StageSpec& s : stages)
      require(s.blocks >= 1 && s.channels >= 1 && s.spatial_stride >= 1, "invalid stage spec");
    if (!is3d())
      require(temporal_pools.empty(), "2D networks never mix frames: temporal pooling not allowed");
    for (const TemporalPool& p : temporal_pools)
      require(p.after_stage >= -1 && p.after_stage < static_cast<int>(stages.size()),
              "temporal pool position out of range");
  }
};

// ---------------------------------------------------------------------------
// Pure shape inference for the local path; no parameters allocated.
// ---------------------------------------------------------------------------

struct StageShape {
  std::string name;
  std::string op;
  Index channels = 0;
  Index t = 0, h = 0, w = 0;
};

inline Index conv_out(Index in, Index k, Index s, Index p, const std::string& where) {
  Index padded = in + 2 * p;
  require(padded >= k, "shape underflow at " + where + ": kernel " + std::to_string(k) +
                           " exceeds padded extent " + std::to_string(padded));
  Index out = (padded - k) / s + 1;
  require(out >= 1, "shape underflow at " + where);
  return out;
}

inline std::vector<StageShape> shape_schedule(const NetworkSpec& spec) {
  spec.validate();
  std::vector<StageShape> rows;
  Index t = spec.input_t, h = spec.input_h, w = spec.input_w;

  h = conv_out(h, spec.stem_kernel, spec.stem_stride, spec.stem_kernel / 2, "conv1");
  w = conv_out(w, spec.stem_kernel, spec.stem_stride, spec.stem_kernel / 2, "conv1");
  std::string stem_op = (spec.is3d() ? "1x" : "") + std::to_string(spec.stem_kernel) + "x" +
                        std::to_string(spec.stem_kernel) + ", " + std::to_string(spec.stem_channels);
  if (spec.is3d()) stem_op += " + 3x1x1, " + std::to_string(spec.stem_channels);
  rows.push_back({"conv1", stem_op, spec.stem_channels, t, h, w});

  auto apply_pools = [&](int position, int pool_idx_base) {
    int n = 0;
    for (const TemporalPool& p : spec.temporal_pools) {
      if (p.after_stage != position) continue;
      const std::string name = "pool" + std::to_string(pool_idx_base + n);
      require(p.extent <= t, "shape underflow at " + name + ": pool extent " + std::to_string(p.extent) +
                                 " exceeds temporal extent " + std::to_string(t));
      t = (t - p.extent) / p.stride + 1;
      rows.push_back({name, std::to_string(p.extent) + "x1x1 max, stride " + std::to_string(p.stride),
                      rows.back().channels, t, h, w});
      ++n;
    }
    return n;
  };

  int pool_count = 1;
  pool_count += apply_pools(-1, pool_count);
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    const std::string name = "res" + std::to_string(i + 2);
    h = conv_out(h, 3, st.spatial_stride, 1, name);
    w = conv_out(w, 3, st.spatial_stride, 1, name);
    rows.push_back({name,
                    "bottleneck x" + std::to_string(st.blocks) + ", " + std::to_string(st.channels),
                    st.channels, t, h, w});
    pool_count += apply_pools(static_cast<int>(i), pool_count);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Assembled network
// ---------------------------------------------------------------------------

template <typename T>
struct Network {
  NetworkSpec spec;

  Conv3d<T> stem_conv;
  BatchNorm<T> stem_bn;
  Conv3d<T> stem_conv_t;  // 3D kinds only
  BatchNorm<T> stem_bn_t;
  std::vector<std::vector<LgdBlock<T>>> stages;
  Linear<T> head_g, head_x;  // stage-1 heads on g_L and GAP(x_L)
  SketchConfig sketch;
  Linear<T> head_c;  // combined-classifier head on [B, 2d]

  static Network build(const NetworkSpec& sp, std::uint64_t seed) {
    sp.validate();
    shape_schedule(sp);  // rejects underflow up front, naming the stage
    Network net;
    net.spec = sp;

    const Index k = sp.stem_kernel;
    net.stem_conv.configure(sp.in_channels, sp.stem_channels, {1, k, k}, {1, sp.stem_stride, sp.stem_stride},
                            {0, k / 2, k / 2});
    net.stem_bn.configure(sp.stem_channels);
    if (sp.is3d()) {
      net.stem_conv_t.configure(sp.stem_channels, sp.stem_channels, {3, 1, 1}, {1, 1, 1}, {1, 0, 0});
      net.stem_bn_t.configure(sp.stem_channels);
    }

    Index ci = sp.stem_channels;
    for (const StageSpec& st : sp.stages) {
      std::vector<LgdBlock<T>> blocks(static_cast<std::size_t>(st.blocks));
      for (Index b = 0; b < st.blocks; ++b) {
        const Index stride = (b == 0) ? st.spatial_stride : 1;
        blocks[static_cast<std::size_t>(b)].configure(ci, st.channels, NetworkSpec::mid_channels(st.channels),
                                                      stride, sp.is3d(), sp.variant, sp.diffusion());
        ci = st.channels;
      }
      net.stages.push_back(std::move(blocks));
    }

    const Index cf = sp.final_channels();
    net.head_g.configure(cf, sp.num_classes);
    net.head_x.configure(cf, sp.num_classes);
    net.sketch = SketchConfig::create(cf, sp.resolved_sketch_dim(), Rng(seed).derive("sketch").next_u64());
    net.head_c.configure(2 * net.sketch.sketch_dim, sp.num_classes);

    net.init_params(seed);
    return net;
  }

  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    Rng init_rng = rng.derive("init");
    stem_conv.init(init_rng, "stem.conv");
    if (spec.is3d()) stem_conv_t.init(init_rng, "stem.conv_t");
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        stages[s][b].init(init_rng, stage_prefix(s, b));
    head_g.init(init_rng, "head_g");
    head_x.init(init_rng, "head_x");
    head_c.init(init_rng, "head_c");

    if (spec.init == InitKind::pretrained_style) {
      // Keep pre-trained spatial semantics intact at step 0: the global
      // residual vanishes and temporal convs start as exact identities.
      if (spec.is3d()) stem_conv_t.init_identity_temporal();
      for (auto& stage : stages)
        for (LgdBlock<T>& blk : stage) {
          if (blk.f.p3da) blk.f.conv_temporal.init_identity_temporal();
          if (blk.has_diffusion) blk.w_xg.zero();
        }
    }
  }

  static std::string stage_prefix(std::size_t s, std::size_t b) {
    return "res" + std::to_string(s + 2) + ".block" + std::to_string(b);
  }

  void check_input(const Tensor<T>& in) const {
    Shape want{in.shape()[0], spec.in_channels, spec.input_t, spec.input_h, spec.input_w};
    require(in.shape() == want, "network input shape " + shape_str(in.shape()) +
                                    " does not match spec " + shape_str(want));
  }

  Var stem_forward(Tape<T>& tp, Var input, const ForwardCtx<T>& ctx) {
    Var h = op_relu(tp, stem_bn.forward(tp, stem_conv.forward(tp, input), ctx));
    if (spec.is3d()) {
      Var ht = ctx.skip_temporal ? h : stem_conv_t.forward(tp, h);
      h = op_relu(tp, stem_bn_t.forward(tp, ht, ctx));
    }
    return h;
  }

  // x1 = stem(input), g1 = GAP(x1)
  PairVars<T> initial_pair(Tape<T>& tp, Var input, const ForwardCtx<T>& ctx) {
    check_input(tp.val(input));
    Var x1 = stem_forward(tp, input, ctx);
    return PairVars<T>{x1, op_global_avg_pool(tp, x1)};
  }

  PairVars<T> forward(Tape<T>& tp, Var input, const ForwardCtx<T>& ctx) {
    PairVars<T> pair = initial_pair(tp, input, ctx);
    pair.x = apply_pools(tp, pair.x, -1);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (LgdBlock<T>& blk : stages[s]) pair = blk.forward(tp, pair, ctx);
      pair.x = apply_pools(tp, pair.x, static_cast<int>(s));
    }
    if (!pair.g.valid()) pair.g = op_global_avg_pool(tp, pair.x);
    return pair;
  }

  Var apply_pools(Tape<T>& tp, Var x, int position) {
    for (const TemporalPool& p : spec.temporal_pools)
      if (p.after_stage == position)
        x = op_max_pool(tp, x, {p.extent, Index(1), Index(1)}, {p.stride, Index(1), Index(1)});
    return x;
  }

  // Eq.-5 style feature with the configured post-processing flags.
  Var combined_feature(Tape<T>& tp, const PairVars<T>& pair) {
    Var feat = op_combined_feature(tp, pair.x, pair.g, sketch);
    if (spec.sketch_signed_sqrt) feat = op_signed_sqrt(tp, feat);
    if (spec.sketch_l2norm) feat = op_l2_normalize_rows(tp, feat);
    return feat;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    stem_conv.visit_params("stem.conv", fn);
    stem_bn.visit_params("stem.bn", fn);
    if (spec.is3d()) {
      stem_conv_t.visit_params("stem.conv_t", fn);
      stem_bn_t.visit_params("stem.bn_t", fn);
    }
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        stages[s][b].visit_params(stage_prefix(s, b), fn);
    head_g.visit_params("head_g", fn);
    head_x.visit_params("head_x", fn);
    head_c.visit_params("head_c", fn);
  }

  void visit_state(const StateVisitor<T>& fn) {
    stem_bn.visit_state("stem.bn", fn);
    if (spec.is3d()) stem_bn_t.visit_state("stem.bn_t", fn);
    for (std::size_t s = 0; s < stages.size(); ++s)
      for (std::size_t b = 0; b < stages[s].size(); ++b)
        stages[s][b].visit_state(stage_prefix(s, b), fn);
  }

  Index param_count() {
    Index n = 0;
    visit_params([&](const std::string&, Param<T>& p) { n += p.value.size(); });
    return n;
  }

  Index extra_diffusion_count() const {
    Index n = 0;
    for (const auto& stage : stages)
      for (const LgdBlock<T>& blk : stage) n += blk.extra_param_count();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline NetworkSpec preset_toy2d() {
  NetworkSpec sp;
  sp.kind = NetKind::lgd2d;
  sp.stem_channels = 16;
  sp.stem_kernel = 3;
  sp.stem_stride = 1;
  sp.stages = {{2, 16, 1}, {2, 32, 2}};
  sp.input_t = 3;
  sp.input_h = 32;
  sp.input_w = 32;
  sp.num_classes = 6;
  return sp;
}

inline NetworkSpec preset_toy3d() {
  NetworkSpec sp;
  sp.kind = NetKind::lgd3d;
  sp.stem_channels = 16;
  sp.stem_kernel = 3;
  sp.stem_stride = 1;
  sp.stages = {{2, 16, 1}, {2, 32, 2}};
  sp.temporal_pools = {{-1, 2, 2}, {0, 2, 2}};
  sp.input_t = 8;
  sp.input_h = 32;
  sp.input_w = 32;
  sp.num_classes = 6;
  return sp;
}

inline NetworkSpec preset_resnet50_3d() {
  NetworkSpec sp;
  sp.kind = NetKind::lgd3d;
  sp.stem_channels = 64;
  sp.stem_kernel = 7;
  sp.stem_stride = 2;
  sp.stages = {{3, 256, 1}, {4, 512, 2}, {6, 1024, 2}, {3, 2048, 2}};
  sp.temporal_pools = {{-1, 2, 2}, {0, 2, 2}};
  sp.input_t = 16;
  sp.input_h = 112;
  sp.input_w = 112;
  sp.num_classes = 400;
  return sp;
}

}  // namespace lgd
