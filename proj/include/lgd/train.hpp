#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <type_traits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lgd/backbone.hpp"
#include "lgd/synthdata.hpp"

namespace lgd {

struct TrainConfig {
  int stage = 1;
  double base_lr = 0.01;
  Index lr_decay_every = 20;  // epochs
  double lr_decay_factor = 10.0;
  Index epochs = 50;
  Index batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool flip_augment = true;
  Index crop_h = 0, crop_w = 0;
  Index checkpoint_every = 0;  // 0 = final checkpoint only
  Index infer_samples = 0;     // 0 = per-kind default (10 for 2D, 15 for 3D)

  void validate() const {
    require(stage == 1 || stage == 2, "train config: stage must be 1 or 2");
    require(base_lr > 0 && lr_decay_every >= 1 && lr_decay_factor > 0, "train config: bad lr schedule");
    require(epochs >= 1 && batch_size >= 1, "train config: epochs and batch size must be >= 1");
    require(momentum >= 0 && momentum < 1, "train config: momentum must lie in [0,1)");
    require(weight_decay >= 0, "train config: weight decay must be >= 0");
  }
};

// lr(epoch) = base_lr * factor^(-floor(epoch / every))
inline double lr_at(const TrainConfig& cfg, Index epoch) {
  return cfg.base_lr / std::pow(cfg.lr_decay_factor, static_cast<double>(epoch / cfg.lr_decay_every));
}

inline Index default_infer_samples(const NetworkSpec& spec) { return spec.is3d() ? 15 : 10; }

struct MetricsRecord {
  Index epoch = 0;
  int stage = 1;
  double lr = 0;
  double loss_global = 0, loss_local = 0, loss_combined = 0;
  double train_top1 = 0, test_top1 = 0;
  double wall_seconds = 0;  // console diagnostics only; kept out of metrics files
};

// ---------------------------------------------------------------------------
// Losses (Eq. of the two-stage strategy)
// ---------------------------------------------------------------------------

template <typename T>
struct LossNodes {
  Var total;                 // backward target
  Var loss_global, loss_local, loss_combined;
  Var logits;                // logits used for accuracy (stage-dependent)
  Var logits_global, logits_local;
};

// Stage 1: CE(W_g g_L, y) + CE(W_x GAP(x_L), y), equal weights.
template <typename T>
LossNodes<T> stage1_loss(Tape<T>& tp, Network<T>& net, const PairVars<T>& pair,
                         const std::vector<Index>& labels) {
  LossNodes<T> out;
  out.logits_global = net.head_g.forward(tp, pair.g);
  out.logits_local = net.head_x.forward(tp, op_global_avg_pool(tp, pair.x));
  out.loss_global = op_softmax_cross_entropy(tp, out.logits_global, labels);
  out.loss_local = op_softmax_cross_entropy(tp, out.logits_local, labels);
  out.total = op_add(tp, out.loss_global, out.loss_local);
  out.logits = Var{};
  return out;
}

// Stage 2: CE(W_c phi({x_L, g_L}), y); the whole network receives gradients.
template <typename T>
LossNodes<T> stage2_loss(Tape<T>& tp, Network<T>& net, const PairVars<T>& pair,
                         const std::vector<Index>& labels, bool with_diagnostics = true) {
  LossNodes<T> out;
  Var feat = net.combined_feature(tp, pair);
  out.logits = net.head_c.forward(tp, feat);
  out.loss_combined = op_softmax_cross_entropy(tp, out.logits, labels);
  out.total = out.loss_combined;
  if (with_diagnostics) {
    // Stage-1 heads are frozen artifacts; their losses are reported but take
    // no part in the backward target.
    out.logits_global = net.head_g.forward(tp, pair.g);
    out.logits_local = net.head_x.forward(tp, op_global_avg_pool(tp, pair.x));
    out.loss_global = op_softmax_cross_entropy(tp, out.logits_global, labels);
    out.loss_local = op_softmax_cross_entropy(tp, out.logits_local, labels);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SGD with momentum; one update per batch, fixed parameter order.
// ---------------------------------------------------------------------------

template <typename T>
struct Sgd {
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::map<std::string, Tensor<T>> velocity;

  void step(Network<T>& net, Tape<T>& tp, double lr) {
    net.visit_params([&](const std::string& name, Param<T>& p) {
      if (p.var < 0) return;
      Var v{p.var};
      if (!tp.has_grad(v)) return;
      const Tensor<T>& g = tp.grad(v);
      Tensor<T>& vel = velocity.try_emplace(name, Tensor<T>(p.value.shape())).first->second;
      for (Index i = 0; i < p.value.size(); ++i) {
        T gi = g[i];
        if (weight_decay != 0.0) gi += static_cast<T>(weight_decay) * p.value[i];
        vel[i] = static_cast<T>(momentum) * vel[i] - static_cast<T>(lr) * gi;
        p.value[i] += vel[i];
      }
    });
  }
};

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> clip_to_input(const Tensor<float>& clip) {
  const Shape& s = clip.shape();
  Tensor<T> out(Shape{1, s[0], s[1], s[2], s[3]});
  for (Index i = 0; i < clip.size(); ++i) out[i] = static_cast<T>(clip[i]);
  return out;
}

template <typename T>
Tensor<T> stack_clips(const std::vector<Tensor<float>>& clips) {
  const Shape& s = clips.front().shape();
  Tensor<T> out(Shape{static_cast<Index>(clips.size()), s[0], s[1], s[2], s[3]});
  Index off = 0;
  for (const Tensor<float>& c : clips) {
    require(c.shape() == s, "stack_clips: inconsistent clip shapes");
    for (Index i = 0; i < c.size(); ++i) out[off + i] = static_cast<T>(c[i]);
    off += c.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference: softmax scores averaged over n uniformly placed samples.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<double> softmax_scores(const Tensor<T>& logits, Index row) {
  const Index K = logits.shape()[1];
  double mx = static_cast<double>(logits.at2(row, 0));
  for (Index k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(logits.at2(row, k)));
  std::vector<double> p(static_cast<std::size_t>(K));
  double sum = 0;
  for (Index k = 0; k < K; ++k) {
    p[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(logits.at2(row, k)) - mx);
    sum += p[static_cast<std::size_t>(k)];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline Index argmax_lowest(const std::vector<double>& scores) {
  Index best = 0;
  for (Index k = 1; k < static_cast<Index>(scores.size()); ++k)
    if (scores[static_cast<std::size_t>(k)] > scores[static_cast<std::size_t>(best)]) best = k;
  return best;
}

// Scores for one clip already shaped [1,C,T,H,W].
template <typename T>
std::vector<double> score_clip(Network<T>& net, const Tensor<T>& input, bool use_combined) {
  Tape<T> tp;
  ForwardCtx<T> ctx;  // eval mode
  Var in = tp.leaf(input, false);
  PairVars<T> pair = net.forward(tp, in, ctx);
  if (use_combined) {
    Var feat = net.combined_feature(tp, pair);
    return softmax_scores(tp.val(net.head_c.forward(tp, feat)), 0);
  }
  std::vector<double> sg = softmax_scores(tp.val(net.head_g.forward(tp, pair.g)), 0);
  std::vector<double> sx =
      softmax_scores(tp.val(net.head_x.forward(tp, op_global_avg_pool(tp, pair.x))), 0);
  for (std::size_t k = 0; k < sg.size(); ++k) sg[k] = 0.5 * (sg[k] + sx[k]);
  return sg;
}

// Video-level prediction: average of n sample scores. Videos shorter than the
// network's T are loop-padded.
template <typename T>
std::vector<double> infer_video(Network<T>& net, const Tensor<float>& video, Index n_samples) {
  require(video.rank() == 4 && video.size() > 0, "infer_video expects a non-empty [C,L,H,W] video");
  require(n_samples >= 1, "infer_video needs at least one sample");
  const Index L = video.shape()[1];
  const Index T_in = net.spec.input_t;
  const Index Le = std::max(L, T_in);  // loop-pad short videos
  const bool combined = net.spec.classifier == ClassifierKind::combined;

  std::vector<double> acc(static_cast<std::size_t>(net.spec.num_classes), 0.0);
  for (Index j = 0; j < n_samples; ++j) {
    std::vector<Index> frames;
    if (net.spec.is3d()) {
      const Index start = clip_starts_uniform(Le, T_in, n_samples)[static_cast<std::size_t>(j)];
      for (Index i = 0; i < T_in; ++i) frames.push_back(start + i);
    } else {
      frames = snippet_frames_at(Le, T_in, j, n_samples);
    }
    Tensor<T> input = clip_to_input<T>(gather_frames(video, frames));
    std::vector<double> s = score_clip(net, input, combined);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += s[k];
  }
  for (double& v : acc) v /= static_cast<double>(n_samples);
  return acc;
}

struct EvalReport {
  double top1 = 0;
  std::vector<double> per_class;
  std::vector<std::vector<Index>> confusion;  // [true][pred]
  Index n_videos = 0;
  Index n_samples = 0;
};

template <typename T>
EvalReport evaluate(Network<T>& net, const VideoDataset& ds, Index n_samples) {
  require(ds.size() >= 1, "evaluate: empty dataset");
  require(ds.channels == net.spec.in_channels, "evaluate: dataset channels do not match network");
  const Index K = net.spec.num_classes;
  EvalReport rep;
  rep.n_videos = ds.size();
  rep.n_samples = n_samples;
  rep.confusion.assign(static_cast<std::size_t>(K), std::vector<Index>(static_cast<std::size_t>(K), 0));
  std::vector<Index> class_count(static_cast<std::size_t>(K), 0), class_hit(static_cast<std::size_t>(K), 0);
  Index hits = 0;
  for (Index i = 0; i < ds.size(); ++i) {
    const Index label = ds.labels[static_cast<std::size_t>(i)];
    require(label >= 0 && label < K, "evaluate: dataset label out of range for this network");
    const Index pred = argmax_lowest(infer_video<T>(net, ds.videos[static_cast<std::size_t>(i)], n_samples));
    rep.confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(pred)]++;
    class_count[static_cast<std::size_t>(label)]++;
    if (pred == label) {
      ++hits;
      class_hit[static_cast<std::size_t>(label)]++;
    }
  }
  rep.top1 = static_cast<double>(hits) / static_cast<double>(ds.size());
  for (Index k = 0; k < K; ++k)
    rep.per_class.push_back(class_count[static_cast<std::size_t>(k)] == 0
                                ? 0.0
                                : static_cast<double>(class_hit[static_cast<std::size_t>(k)]) /
                                      static_cast<double>(class_count[static_cast<std::size_t>(k)]));
  return rep;
}

// ---------------------------------------------------------------------------
// Training loop. Deterministic given (network, datasets, config, seed).
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  bool aborted = false;
  std::string abort_reason;
};

// Fast per-epoch test accuracy: one center sample per video, batched forward,
// scored with the stage's classifier.
template <typename T>
double epoch_test_top1(Network<T>& net, const VideoDataset& ds, int stage, Index batch_size) {
  if (ds.size() == 0) return 0;
  Index hits = 0;
  for (Index pos = 0; pos < ds.size(); pos += batch_size) {
    const Index bs = std::min<Index>(batch_size, ds.size() - pos);
    std::vector<Tensor<float>> clips;
    for (Index i = 0; i < bs; ++i) {
      const Tensor<float>& video = ds.videos[static_cast<std::size_t>(pos + i)];
      std::vector<Index> frames =
          net.spec.is3d() ? sample_clip(video.shape()[1], net.spec.input_t, false, nullptr)
                          : sample_snippets(video.shape()[1], net.spec.input_t, false, nullptr);
      clips.push_back(gather_frames(video, frames));
    }
    Tape<T> tp;
    ForwardCtx<T> ctx;  // eval mode
    PairVars<T> pair = net.forward(tp, tp.leaf(stack_clips<T>(clips), false), ctx);
    Tensor<T> logits_g, logits_x, logits_c;
    if (stage == 2) {
      logits_c = tp.val(net.head_c.forward(tp, net.combined_feature(tp, pair)));
    } else {
      logits_g = tp.val(net.head_g.forward(tp, pair.g));
      logits_x = tp.val(net.head_x.forward(tp, op_global_avg_pool(tp, pair.x)));
    }
    for (Index i = 0; i < bs; ++i) {
      std::vector<double> scores;
      if (stage == 2) {
        scores = softmax_scores(logits_c, i);
      } else {
        scores = softmax_scores(logits_g, i);
        std::vector<double> sx = softmax_scores(logits_x, i);
        for (std::size_t k = 0; k < scores.size(); ++k) scores[k] = 0.5 * (scores[k] + sx[k]);
      }
      if (argmax_lowest(scores) == ds.labels[static_cast<std::size_t>(pos + i)]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

template <typename T>
Tensor<float> sample_training_clip(const NetworkSpec& spec, const Tensor<float>& video, Rng rng) {
  const Index L = video.shape()[1];
  std::vector<Index> frames = spec.is3d() ? sample_clip(L, spec.input_t, true, &rng)
                                          : sample_snippets(L, spec.input_t, true, &rng);
  return gather_frames(video, frames);
}

template <typename T>
TrainResult train(Network<T>& net, const VideoDataset& train_ds, const VideoDataset& test_ds,
                  const TrainConfig& cfg, std::uint64_t master_seed, std::ostream* log = nullptr,
                  const std::type_identity_t<std::function<void(Index, Network<T>&)>>& on_checkpoint = {}) {
  cfg.validate();
  require(train_ds.size() >= 1, "train: empty training set");
  const Rng master(master_seed);
  Sgd<T> opt;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;

  AugmentFlags aug;
  aug.flip = cfg.flip_augment;
  aug.crop_h = cfg.crop_h;
  aug.crop_w = cfg.crop_w;

  TrainResult result;
  const auto t_start = std::chrono::steady_clock::now();

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    Rng order_rng = master.derive("data_order", static_cast<std::uint64_t>(cfg.stage * 100000 + epoch));
    std::vector<Index> order(static_cast<std::size_t>(train_ds.size()));
    for (Index i = 0; i < train_ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    for (Index i = train_ds.size() - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(order_rng.uniform_int(i + 1))]);

    double sum_g = 0, sum_l = 0, sum_c = 0;
    Index batches = 0, train_hits = 0, train_total = 0;

    for (Index pos = 0; pos < train_ds.size(); pos += cfg.batch_size) {
      const Index bs = std::min<Index>(cfg.batch_size, train_ds.size() - pos);
      std::vector<Tensor<float>> clips;
      std::vector<Index> labels;
      for (Index bi = 0; bi < bs; ++bi) {
        const Index vid = order[static_cast<std::size_t>(pos + bi)];
        const std::uint64_t tag =
            static_cast<std::uint64_t>(cfg.stage) * 1000000000ull + static_cast<std::uint64_t>(epoch) * 1000000ull +
            static_cast<std::uint64_t>(vid);
        Tensor<float> clip = sample_training_clip<T>(net.spec, train_ds.videos[static_cast<std::size_t>(vid)],
                                                     master.derive("frame_sample", tag));
        Rng aug_rng = master.derive("augment", tag);
        clips.push_back(augment(clip, aug, aug_rng));
        labels.push_back(train_ds.labels[static_cast<std::size_t>(vid)]);
      }

      net.visit_params([](const std::string&, Param<T>& p) { p.var = -1; });
      Tape<T> tp;
      ForwardCtx<T> ctx;
      ctx.training = true;
      Var input = tp.leaf(stack_clips<T>(clips), false);
      PairVars<T> pair = net.forward(tp, input, ctx);
      LossNodes<T> loss = cfg.stage == 1 ? stage1_loss(tp, net, pair, labels)
                                         : stage2_loss(tp, net, pair, labels);

      const double total = static_cast<double>(tp.val(loss.total)[0]);
      if (!std::isfinite(total)) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches);
        if (log) *log << result.abort_reason << "\n";
        return result;
      }

      if (loss.loss_global.valid()) sum_g += static_cast<double>(tp.val(loss.loss_global)[0]);
      if (loss.loss_local.valid()) sum_l += static_cast<double>(tp.val(loss.loss_local)[0]);
      if (loss.loss_combined.valid()) sum_c += static_cast<double>(tp.val(loss.loss_combined)[0]);
      ++batches;

      // training accuracy from this batch's logits
      for (Index bi = 0; bi < bs; ++bi) {
        std::vector<double> scores;
        if (cfg.stage == 2) {
          scores = softmax_scores(tp.val(loss.logits), bi);
        } else {
          scores = softmax_scores(tp.val(loss.logits_global), bi);
          std::vector<double> sx = softmax_scores(tp.val(loss.logits_local), bi);
          for (std::size_t k = 0; k < scores.size(); ++k) scores[k] = 0.5 * (scores[k] + sx[k]);
        }
        if (argmax_lowest(scores) == labels[static_cast<std::size_t>(bi)]) ++train_hits;
        ++train_total;
      }

      tp.backward(loss.total);
      opt.step(net, tp, lr);
    }

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.stage = cfg.stage;
    rec.lr = lr;
    rec.loss_global = batches ? sum_g / static_cast<double>(batches) : 0;
    rec.loss_local = batches ? sum_l / static_cast<double>(batches) : 0;
    rec.loss_combined = batches ? sum_c / static_cast<double>(batches) : 0;
    rec.train_top1 = train_total ? static_cast<double>(train_hits) / static_cast<double>(train_total) : 0;
    rec.test_top1 = epoch_test_top1(net, test_ds, cfg.stage, cfg.batch_size);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.metrics.push_back(rec);
    if (log)
      *log << "epoch " << epoch << " stage " << cfg.stage << " lr " << lr << " loss_g " << rec.loss_global
           << " loss_x " << rec.loss_local << " loss_c " << rec.loss_combined << " train "
           << rec.train_top1 << " test " << rec.test_top1 << " (" << rec.wall_seconds << "s)\n";

    if (on_checkpoint && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      on_checkpoint(epoch, net);
  }
  return result;
}

}  // namespace lgd
