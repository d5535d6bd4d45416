#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "lgd/checkpoint.hpp"
#include "lgd/train.hpp"
#include "oracles.hpp"

using namespace lgd;

namespace {

NetworkSpec micro2d_spec(Index classes = 6) {
  NetworkSpec sp;
  sp.kind = NetKind::lgd2d;
  sp.stem_channels = 8;
  sp.stem_kernel = 3;
  sp.stem_stride = 1;
  sp.stages = {{1, 8, 1}, {1, 16, 2}};
  sp.input_t = 2;
  sp.input_h = 16;
  sp.input_w = 16;
  sp.num_classes = classes;
  sp.sketch_dim = 32;
  return sp;
}

SyntheticVideoSpec micro_data_spec(Index n, std::uint64_t seed) {
  SyntheticVideoSpec ds;
  ds.height = 16;
  ds.width = 16;
  ds.length = 8;
  ds.carrier_size = 4;
  ds.distractor_size = 3;
  ds.num_videos = n;
  ds.seed = seed;
  return ds;
}

TrainConfig micro_train_cfg(int stage, Index epochs) {
  TrainConfig tc;
  tc.stage = stage;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.base_lr = 0.01;
  return tc;
}

}  // namespace

TEST_CASE("learning-rate schedule matches the closed form") {
  TrainConfig tc;  // paper preset: 0.01, divided by 10 every 20 epochs
  CHECK(lr_at(tc, 0) == Catch::Approx(0.01).epsilon(1e-12));
  CHECK(lr_at(tc, 19) == Catch::Approx(0.01).epsilon(1e-12));
  CHECK(lr_at(tc, 20) == Catch::Approx(0.001).epsilon(1e-12));
  CHECK(lr_at(tc, 39) == Catch::Approx(0.001).epsilon(1e-12));
  CHECK(lr_at(tc, 45) == Catch::Approx(0.0001).epsilon(1e-12));

  // closed form vs repeated division at every epoch
  double lr = tc.base_lr;
  for (Index e = 0; e < 60; ++e) {
    if (e > 0 && e % tc.lr_decay_every == 0) lr /= tc.lr_decay_factor;
    CHECK(lr_at(tc, e) == Catch::Approx(lr).epsilon(1e-12));
  }
}

TEST_CASE("stage-1 loss with zero heads is 2 ln 2 for two classes") {
  NetworkSpec sp = micro2d_spec(2);
  Network<double> net = Network<double>::build(sp, 5);
  net.head_g.w.value.fill(0.0);
  net.head_g.b.value.fill(0.0);
  net.head_x.w.value.fill(0.0);
  net.head_x.b.value.fill(0.0);

  Rng rng(6);
  auto input = oracle::random_tensor({2, 3, 2, 16, 16}, rng, 0.0, 1.0);
  Tape<double> tp;
  ForwardCtx<double> ctx;
  ctx.training = true;
  PairVars<double> pair = net.forward(tp, tp.leaf(input), ctx);
  LossNodes<double> loss = stage1_loss(tp, net, pair, {0, 1});
  CHECK(tp.val(loss.total)[0] == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("stage-2 loss with zero head is ln K") {
  NetworkSpec sp = micro2d_spec(6);
  Network<double> net = Network<double>::build(sp, 7);
  net.head_c.w.value.fill(0.0);
  net.head_c.b.value.fill(0.0);
  Rng rng(8);
  auto input = oracle::random_tensor({1, 3, 2, 16, 16}, rng, 0.0, 1.0);
  Tape<double> tp;
  ForwardCtx<double> ctx;
  ctx.training = true;
  PairVars<double> pair = net.forward(tp, tp.leaf(input), ctx);
  LossNodes<double> loss = stage2_loss(tp, net, pair, {3});
  CHECK(tp.val(loss.total)[0] == Catch::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
  VideoDataset train_ds = generate(micro_data_spec(24, 100));
  VideoDataset test_ds = generate(micro_data_spec(12, 101));

  auto run = [&]() {
    Network<double> net = Network<double>::build(micro2d_spec(), 55);
    return train(net, train_ds, test_ds, micro_train_cfg(1, 2), 900);
  };
  TrainResult a = run();
  TrainResult b = run();
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    REQUIRE(a.metrics[i].loss_global == b.metrics[i].loss_global);
    REQUIRE(a.metrics[i].loss_local == b.metrics[i].loss_local);
    REQUIRE(a.metrics[i].train_top1 == b.metrics[i].train_top1);
    REQUIRE(a.metrics[i].test_top1 == b.metrics[i].test_top1);
    REQUIRE(a.metrics[i].lr == b.metrics[i].lr);
  }
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  VideoDataset train_ds = generate(micro_data_spec(8, 200));
  VideoDataset test_ds = generate(micro_data_spec(4, 201));
  Network<double> net = Network<double>::build(micro2d_spec(), 55);
  net.head_g.b.value[0] = std::numeric_limits<double>::quiet_NaN();
  TrainResult res = train(net, train_ds, test_ds, micro_train_cfg(1, 2), 900);
  REQUIRE(res.aborted);
  CHECK(res.abort_reason.find("non-finite") != std::string::npos);
}

TEST_CASE("checkpoint round trip preserves forward outputs bit-exactly") {
  namespace fs = std::filesystem;
  VideoDataset train_ds = generate(micro_data_spec(16, 300));
  VideoDataset test_ds = generate(micro_data_spec(8, 301));
  Network<double> net = Network<double>::build(micro2d_spec(), 42);
  train(net, train_ds, test_ds, micro_train_cfg(1, 1), 901);  // move params off init

  const std::string path = (fs::temp_directory_path() / "lgd_ckpt_test.bin").string();
  save_checkpoint(path, net, "{}", 0, 1);

  Network<double> restored = Network<double>::build(micro2d_spec(), 999);  // different init
  LoadedCheckpoint ck = load_checkpoint_file(path);
  CHECK(ck.stage == 1);
  apply_checkpoint(ck, restored);

  Rng rng(302);
  auto input = oracle::random_tensor({2, 3, 2, 16, 16}, rng, 0.0, 1.0);
  auto fwd = [&](Network<double>& n) {
    Tape<double> tp;
    ForwardCtx<double> ctx;  // eval mode exercises the restored running stats
    PairVars<double> pair = n.forward(tp, tp.leaf(input), ctx);
    return std::pair<Tensor<double>, Tensor<double>>(tp.val(pair.x), tp.val(pair.g));
  };
  auto [x1, g1] = fwd(net);
  auto [x2, g2] = fwd(restored);
  REQUIRE(max_abs_diff(x1, x2) == 0.0);
  REQUIRE(max_abs_diff(g1, g2) == 0.0);
  CHECK(net.sketch == restored.sketch);
  std::remove(path.c_str());
}

TEST_CASE("corrupt and mismatched checkpoints are rejected") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "lgd_ckpt_bad.bin").string();
  {
    std::ofstream os(path, std::ios::binary);
    os << "LGDCKPT9garbage";
  }
  CHECK_THROWS_AS(load_checkpoint_file(path), ShapeError);
  std::remove(path.c_str());

  // shape mismatch: checkpoint from one spec applied to another
  Network<double> a = Network<double>::build(micro2d_spec(), 1);
  save_checkpoint(path, a, "{}", 0, 1);
  NetworkSpec other = micro2d_spec();
  other.stages[1].channels = 32;
  other.sketch_dim = 0;
  Network<double> b = Network<double>::build(other, 1);
  LoadedCheckpoint ck = load_checkpoint_file(path);
  CHECK_THROWS_AS(apply_checkpoint(ck, b), ShapeError);
  std::remove(path.c_str());
}

TEST_CASE("infer_video with one sample equals a single forward") {
  NetworkSpec sp = micro2d_spec();
  Network<double> net = Network<double>::build(sp, 21);
  VideoDataset ds = generate(micro_data_spec(2, 400));

  std::vector<double> scores = infer_video<double>(net, ds.videos[0], 1);
  std::vector<Index> frames = snippet_frames_at(ds.length, sp.input_t, 0, 1);
  Tensor<double> input = clip_to_input<double>(gather_frames(ds.videos[0], frames));
  std::vector<double> direct = score_clip(net, input, false);
  REQUIRE(scores.size() == direct.size());
  for (std::size_t k = 0; k < scores.size(); ++k) REQUIRE(scores[k] == direct[k]);
}

TEST_CASE("infer_video on a static video averages identical scores") {
  NetworkSpec sp = micro2d_spec();
  Network<double> net = Network<double>::build(sp, 23);
  Tensor<float> video(Shape{3, 8, 16, 16});
  Rng rng(24);
  for (Index c = 0; c < 3; ++c) {
    // one frame, repeated
    for (Index i = 0; i < 16 * 16; ++i) video[c * 8 * 256 + i] = static_cast<float>(rng.uniform(0, 1));
    for (Index t = 1; t < 8; ++t)
      std::copy(video.data() + c * 8 * 256, video.data() + c * 8 * 256 + 256,
                video.data() + (c * 8 + t) * 256);
  }
  std::vector<double> one = infer_video<double>(net, video, 1);
  std::vector<double> ten = infer_video<double>(net, video, 10);
  for (std::size_t k = 0; k < one.size(); ++k) CHECK(ten[k] == Catch::Approx(one[k]).margin(1e-12));
}

TEST_CASE("infer_video matches an explicit loop over sample positions") {
  NetworkSpec sp = micro2d_spec();
  Network<double> net = Network<double>::build(sp, 25);
  VideoDataset ds = generate(micro_data_spec(1, 500));
  const Index n = 5;
  std::vector<double> got = infer_video<double>(net, ds.videos[0], n);

  std::vector<double> want(static_cast<std::size_t>(sp.num_classes), 0.0);
  for (Index j = 0; j < n; ++j) {
    auto frames = snippet_frames_at(ds.length, sp.input_t, j, n);
    auto s = score_clip(net, clip_to_input<double>(gather_frames(ds.videos[0], frames)), false);
    for (std::size_t k = 0; k < want.size(); ++k) want[k] += s[k];
  }
  for (auto& v : want) v /= static_cast<double>(n);
  for (std::size_t k = 0; k < want.size(); ++k) CHECK(got[k] == Catch::Approx(want[k]).margin(1e-12));
}

TEST_CASE("infer_video loop-pads videos shorter than the network input") {
  NetworkSpec sp = micro2d_spec();
  Network<double> net = Network<double>::build(sp, 26);
  Tensor<float> tiny(Shape{3, 1, 16, 16}, 0.25f);  // single frame, input_t = 2
  std::vector<double> scores = infer_video<double>(net, tiny, 3);
  double sum = 0;
  for (double s : scores) sum += s;
  CHECK(sum == Catch::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(infer_video<double>(net, tiny, 0), ShapeError);
}

TEST_CASE("evaluate: deterministic reports and hand-loop top-1") {
  NetworkSpec sp = micro2d_spec();
  Network<double> net = Network<double>::build(sp, 27);
  VideoDataset ds = generate(micro_data_spec(12, 600));

  EvalReport a = evaluate(net, ds, 3);
  EvalReport b = evaluate(net, ds, 3);
  REQUIRE(a.top1 == b.top1);
  REQUIRE(a.confusion == b.confusion);

  Index hits = 0;
  for (Index i = 0; i < ds.size(); ++i)
    if (argmax_lowest(infer_video<double>(net, ds.videos[static_cast<std::size_t>(i)], 3)) ==
        ds.labels[static_cast<std::size_t>(i)])
      ++hits;
  REQUIRE(a.top1 == static_cast<double>(hits) / static_cast<double>(ds.size()));

  // single-video dataset with one sample equals the direct forward
  VideoDataset solo;
  solo.length = ds.length;
  solo.height = ds.height;
  solo.width = ds.width;
  solo.videos.push_back(ds.videos[0]);
  solo.labels.push_back(ds.labels[0]);
  EvalReport r1 = evaluate(net, solo, 1);
  const Index direct = argmax_lowest(infer_video<double>(net, ds.videos[0], 1));
  REQUIRE(r1.top1 == (direct == ds.labels[0] ? 1.0 : 0.0));
}

TEST_CASE("stage-1 loss decreases over the first epochs of the micro task") {
  VideoDataset train_ds = generate(micro_data_spec(48, 700));
  VideoDataset test_ds = generate(micro_data_spec(12, 701));
  Network<double> net = Network<double>::build(micro2d_spec(), 61);
  TrainResult res = train(net, train_ds, test_ds, micro_train_cfg(1, 5), 902);
  REQUIRE(res.metrics.size() == 5);
  const double first = res.metrics.front().loss_global + res.metrics.front().loss_local;
  const double last = res.metrics.back().loss_global + res.metrics.back().loss_local;
  CHECK(last < first);
}

TEST_CASE("sgd moves parameters against the gradient and momentum accumulates") {
  NetworkSpec sp = micro2d_spec(2);
  Network<double> net = Network<double>::build(sp, 71);
  Rng rng(72);
  auto input = oracle::random_tensor({2, 3, 2, 16, 16}, rng, 0.0, 1.0);

  net.visit_params([](const std::string&, Param<double>& p) { p.var = -1; });
  Tape<double> tp;
  ForwardCtx<double> ctx;
  ctx.training = true;
  PairVars<double> pair = net.forward(tp, tp.leaf(input), ctx);
  LossNodes<double> loss = stage1_loss(tp, net, pair, {0, 1});
  tp.backward(loss.total);

  const Tensor<double> before = net.head_g.w.value;
  const Tensor<double> grad = tp.grad(Var{net.head_g.w.var});
  Sgd<double> opt;
  opt.momentum = 0.0;
  opt.step(net, tp, 0.1);
  for (Index i = 0; i < before.size(); ++i)
    REQUIRE(net.head_g.w.value[i] == before[i] - 0.1 * grad[i]);
}
