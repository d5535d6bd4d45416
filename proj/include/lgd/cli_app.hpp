#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lgd/checkpoint.hpp"
#include "lgd/config.hpp"
#include "lgd/verify.hpp"

// Command implementations behind the CLI. Exit codes: 0 success,
// 1 validation failure, 2 numeric failure.
namespace lgd::cli {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;

struct Overrides {
  int stage = 0;  // 0 = keep config
  std::string resume;
  bool from_scratch = false;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string precision;
};

inline ExperimentConfig apply_overrides(ExperimentConfig cfg, const Overrides& ov) {
  if (ov.stage != 0) cfg.train.stage = ov.stage;
  if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
  if (ov.seed) cfg.seed = *ov.seed;
  if (!ov.precision.empty()) {
    if (ov.precision != "single" && ov.precision != "double")
      throw ConfigError("precision must be 'single' or 'double'");
    cfg.precision = ov.precision;
  }
  cfg.train.validate();
  return cfg;
}

inline VideoDataset make_dataset(const ExperimentConfig& cfg, bool train_split) {
  if (cfg.data.synthetic) {
    SyntheticVideoSpec spec = cfg.data.spec;
    if (!train_split) spec.num_videos = cfg.data.num_test;
    spec.seed = Rng(cfg.seed).derive(train_split ? "data_train" : "data_test").next_u64();
    return generate(spec);
  }
  const std::string& path = train_split ? cfg.data.train_path : cfg.data.test_path;
  require(!path.empty(), std::string("no dataset path configured for ") + (train_split ? "train" : "test"));
  return read_dataset(path);
}

inline json metrics_to_json(const MetricsRecord& r) {
  // wall time is console-only so identical-seed runs keep byte-identical files
  json j;
  j["epoch"] = r.epoch;
  j["stage"] = r.stage;
  j["lr"] = r.lr;
  j["loss_global"] = r.loss_global;
  j["loss_local"] = r.loss_local;
  j["loss_combined"] = r.loss_combined;
  j["train_top1"] = r.train_top1;
  j["test_top1"] = r.test_top1;
  return j;
}

inline json eval_report_to_json(const EvalReport& rep) {
  json j;
  j["top1"] = rep.top1;
  j["per_class"] = rep.per_class;
  j["confusion"] = rep.confusion;
  j["n_videos"] = rep.n_videos;
  j["n_samples"] = rep.n_samples;
  return j;
}

namespace detail {

template <typename T>
int run_train_impl(const ExperimentConfig& cfg, const Overrides& ov) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  VideoDataset train_ds = make_dataset(cfg, true);
  VideoDataset test_ds = make_dataset(cfg, false);

  Network<T> net = Network<T>::build(cfg.network, cfg.seed);
  if (cfg.train.stage == 2 && !ov.from_scratch) {
    require(!ov.resume.empty(),
            "stage 2 requires a stage-1 checkpoint via --resume (or --from-scratch to override)");
  }
  if (!ov.resume.empty()) apply_checkpoint(load_checkpoint_file(ov.resume), net);

  const std::string config_json = experiment_config_to_json(cfg).dump();
  const std::string metrics_path = cfg.out_dir + "/metrics_stage" + std::to_string(cfg.train.stage) + ".jsonl";
  std::ofstream metrics(metrics_path);
  require(static_cast<bool>(metrics), "cannot open metrics file: " + metrics_path);

  auto write_metrics = [&](const std::vector<MetricsRecord>& recs) {
    metrics.close();
    std::ofstream fresh(metrics_path);
    for (const MetricsRecord& r : recs) fresh << metrics_to_json(r).dump() << "\n";
  };

  auto on_checkpoint = [&](Index epoch, Network<T>& n) {
    save_checkpoint(cfg.out_dir + "/ckpt_stage" + std::to_string(cfg.train.stage) + "_epoch" +
                        std::to_string(epoch) + ".bin",
                    n, config_json, epoch, cfg.train.stage);
  };

  TrainResult res = train(net, train_ds, test_ds, cfg.train, cfg.seed, &std::cout, on_checkpoint);
  write_metrics(res.metrics);
  if (res.aborted) {
    std::cerr << "training aborted: " << res.abort_reason << " (partial metrics in " << metrics_path << ")\n";
    return kExitNumeric;
  }

  save_checkpoint(cfg.out_dir + "/ckpt_stage" + std::to_string(cfg.train.stage) + ".bin", net, config_json,
                  cfg.train.epochs - 1, cfg.train.stage);

  const Index n_samples =
      cfg.train.infer_samples > 0 ? cfg.train.infer_samples : default_infer_samples(cfg.network);
  EvalReport rep = evaluate(net, test_ds, n_samples);
  std::ofstream rf(cfg.out_dir + "/eval_stage" + std::to_string(cfg.train.stage) + ".json");
  rf << eval_report_to_json(rep).dump(2) << "\n";
  std::cout << "final video-level test top-1: " << rep.top1 << " (" << n_samples << " samples/video)\n";
  return kExitOk;
}

}  // namespace detail

inline int run_train(const std::string& config_path, const Overrides& ov) {
  try {
    ExperimentConfig cfg = apply_overrides(load_config_file(config_path), ov);
    if (cfg.precision == "single") return detail::run_train_impl<float>(cfg, ov);
    return detail::run_train_impl<double>(cfg, ov);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

namespace detail {

template <typename T>
int run_eval_impl(const ExperimentConfig& cfg, const LoadedCheckpoint& ck, const std::string& data_path,
                  const std::string& out_path, Index n_samples_override) {
  Network<T> net = Network<T>::build(cfg.network, cfg.seed);
  apply_checkpoint(ck, net);
  VideoDataset ds = data_path.empty() ? make_dataset(cfg, false) : read_dataset(data_path);
  const Index n_samples =
      n_samples_override > 0
          ? n_samples_override
          : (cfg.train.infer_samples > 0 ? cfg.train.infer_samples : default_infer_samples(cfg.network));
  EvalReport rep = evaluate(net, ds, n_samples);
  json j = eval_report_to_json(rep);
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    require(static_cast<bool>(os), "cannot open report file: " + out_path);
    os << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace detail

inline int run_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& out_path,
                    Index n_samples = 0) {
  try {
    LoadedCheckpoint ck = load_checkpoint_file(ckpt_path);
    ExperimentConfig cfg = parse_experiment_config(json::parse(ck.config_json));
    if (cfg.precision == "single") return detail::run_eval_impl<float>(cfg, ck, data_path, out_path, n_samples);
    return detail::run_eval_impl<double>(cfg, ck, data_path, out_path, n_samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

inline int run_gradcheck(const std::string& scope, std::uint64_t seed, const std::string& out_path) {
  try {
    std::vector<verify::CheckResult> results;
    if (scope == "ops" || scope == "all") {
      auto r = verify::gradcheck_ops(seed);
      results.insert(results.end(), r.begin(), r.end());
    }
    if (scope == "block" || scope == "all") {
      auto r = verify::gradcheck_blocks(seed);
      results.insert(results.end(), r.begin(), r.end());
    }
    if (scope == "network" || scope == "all") {
      auto r = verify::gradcheck_networks(seed);
      results.insert(results.end(), r.begin(), r.end());
    }
    require(!results.empty(), "gradcheck scope must be one of: ops, block, network, all");

    bool all_pass = true;
    json out = json::array();
    std::printf("%-24s %14s %10s  %s\n", "target", "max_rel_err", "threshold", "status");
    for (const auto& r : results) {
      std::printf("%-24s %14.3e %10.0e  %s\n", r.target.c_str(), r.max_rel_err, r.threshold,
                  r.pass ? "pass" : "FAIL");
      out.push_back({{"target", r.target},
                     {"max_rel_err", r.max_rel_err},
                     {"threshold", r.threshold},
                     {"pass", r.pass}});
      all_pass = all_pass && r.pass;
    }
    if (!out_path.empty()) {
      std::ofstream os(out_path);
      os << out.dump(2) << "\n";
    }
    return all_pass ? kExitOk : kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

inline int run_sketch_bench(Index input_dim, const std::vector<Index>& dims, Index trials,
                            std::uint64_t seed, const std::string& out_path) {
  try {
    verify::SketchBenchReport rep = verify::sketch_bench(input_dim, dims, trials, seed);
    json j;
    j["input_dim"] = rep.input_dim;
    j["trials"] = rep.trials;
    j["oracle_equality"] = rep.oracle_equality_pass ? "pass" : "fail";
    j["oracle_max_abs_diff"] = rep.oracle_max_abs_diff;
    j["rows"] = json::array();
    std::printf("C=%lld, trials=%lld, exact <x,y>^2 = %.6f\n", static_cast<long long>(rep.input_dim),
                static_cast<long long>(rep.trials),
                rep.rows.empty() ? 0.0 : rep.rows.front().exact);
    std::printf("%8s %16s %14s %14s\n", "d", "mean_estimate", "rmse", "std_error");
    for (const auto& row : rep.rows) {
      std::printf("%8lld %16.6f %14.6f %14.6f\n", static_cast<long long>(row.d), row.mean_estimate, row.rmse,
                  row.std_error);
      j["rows"].push_back({{"d", row.d},
                           {"mean_estimate", row.mean_estimate},
                           {"exact", row.exact},
                           {"rmse", row.rmse},
                           {"std_error", row.std_error}});
    }
    std::printf("oracle equality (FFT sketch vs outer-product sketch): %s (max abs diff %.3e)\n",
                rep.oracle_equality_pass ? "pass" : "FAIL", rep.oracle_max_abs_diff);
    if (!out_path.empty()) {
      std::ofstream os(out_path);
      os << j.dump(2) << "\n";
    }
    return rep.oracle_equality_pass ? kExitOk : kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

inline NetworkSpec spec_from_preset(const std::string& name) {
  if (name == "toy2d") return preset_toy2d();
  if (name == "toy3d") return preset_toy3d();
  if (name == "resnet50_3d") return preset_resnet50_3d();
  throw ConfigError("unknown preset '" + name + "' (available: toy2d, toy3d, resnet50_3d)");
}

inline int run_shapes(const std::string& config_path, const std::string& preset) {
  try {
    NetworkSpec sp;
    if (!preset.empty()) {
      sp = spec_from_preset(preset);
    } else {
      require(!config_path.empty(), "shapes needs --config or --preset");
      sp = load_config_file(config_path).network;
    }
    std::vector<StageShape> rows = shape_schedule(sp);
    std::printf("%-8s %-36s %s\n", "layer", "operation", "local path size");
    for (const StageShape& r : rows)
      std::printf("%-8s %-36s %lldx%lldx%lld (C=%lld)\n", r.name.c_str(), r.op.c_str(),
                  static_cast<long long>(r.t), static_cast<long long>(r.h), static_cast<long long>(r.w),
                  static_cast<long long>(r.channels));
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

inline int run_gen_data(const std::string& config_path, const std::string& out_path, bool test_split) {
  try {
    ExperimentConfig cfg = load_config_file(config_path);
    require(cfg.data.synthetic, "gen-data needs a config with a synthetic data section");
    VideoDataset ds = make_dataset(cfg, !test_split);
    json latents = json::array();
    for (const VideoLatent& lat : ds.latents) {
      json shapes = json::array();
      for (const ShapeLatent& s : lat.shapes)
        shapes.push_back({{"carrier", s.carrier},
                          {"x0", s.x0},
                          {"y0", s.y0},
                          {"vx", s.vx},
                          {"vy", s.vy},
                          {"size", s.size},
                          {"value", s.value}});
      latents.push_back({{"label", lat.label}, {"shapes", shapes}});
    }
    write_dataset(out_path, ds, latents.dump());
    std::cout << "wrote " << ds.size() << " videos (" << (test_split ? "test" : "train") << " split) to "
              << out_path << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace lgd::cli
