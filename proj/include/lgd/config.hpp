#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "lgd/backbone.hpp"
#include "lgd/synthdata.hpp"
#include "lgd/train.hpp"

namespace lgd {

using json = nlohmann::json;

constexpr int kConfigFormat = 1;

struct DataConfig {
  bool synthetic = true;
  SyntheticVideoSpec spec;  // num_videos is the training-set size
  Index num_test = 300;
  std::string train_path, test_path;
};

struct ExperimentConfig {
  int format = kConfigFormat;
  std::uint64_t seed = 1234;
  std::string precision = "double";  // "single" | "double"
  std::string out_dir = "out";
  NetworkSpec network;
  TrainConfig train;
  DataConfig data;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cfgdetail {

// Fail closed: any key outside the schema is an error.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in config section '" + where + "'");
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for config key '" + key + "': " + e.what());
  }
}

inline NetKind parse_kind(const std::string& s) {
  if (s == "lgd2d") return NetKind::lgd2d;
  if (s == "lgd3d") return NetKind::lgd3d;
  if (s == "baseline2d") return NetKind::baseline2d;
  if (s == "baseline3d") return NetKind::baseline3d;
  throw ConfigError("unknown network kind '" + s + "'");
}

inline BlockVariant parse_variant(const std::string& s) {
  if (s == "lgd") return BlockVariant::lgd;
  if (s == "v1") return BlockVariant::v1;
  if (s == "v2") return BlockVariant::v2;
  throw ConfigError("unknown block variant '" + s + "'");
}

inline InitKind parse_init(const std::string& s) {
  if (s == "scratch") return InitKind::scratch;
  if (s == "pretrained_style") return InitKind::pretrained_style;
  throw ConfigError("unknown init strategy '" + s + "'");
}

inline ClassifierKind parse_classifier(const std::string& s) {
  if (s == "separate_heads") return ClassifierKind::separate_heads;
  if (s == "combined") return ClassifierKind::combined;
  throw ConfigError("unknown classifier kind '" + s + "'");
}

}  // namespace cfgdetail

inline NetworkSpec parse_network_spec(const json& j) {
  using namespace cfgdetail;
  check_keys(j, {"kind", "variant", "init", "classifier", "in_channels", "stem_channels", "stem_kernel",
                 "stem_stride", "stages", "temporal_pools", "input", "num_classes", "sketch_dim",
                 "sketch_signed_sqrt", "sketch_l2norm"},
             "network");
  NetworkSpec sp;
  sp.kind = parse_kind(get_or<std::string>(j, "kind", "lgd2d"));
  sp.variant = parse_variant(get_or<std::string>(j, "variant", "lgd"));
  sp.init = parse_init(get_or<std::string>(j, "init", "scratch"));
  sp.classifier = parse_classifier(get_or<std::string>(j, "classifier", "separate_heads"));
  sp.in_channels = get_or<Index>(j, "in_channels", 3);
  sp.stem_channels = get_or<Index>(j, "stem_channels", 16);
  sp.stem_kernel = get_or<Index>(j, "stem_kernel", 3);
  sp.stem_stride = get_or<Index>(j, "stem_stride", 1);
  sp.num_classes = get_or<Index>(j, "num_classes", 6);
  sp.sketch_dim = get_or<Index>(j, "sketch_dim", 0);
  sp.sketch_signed_sqrt = get_or<bool>(j, "sketch_signed_sqrt", false);
  sp.sketch_l2norm = get_or<bool>(j, "sketch_l2norm", false);
  if (j.contains("input")) {
    check_keys(j.at("input"), {"t", "h", "w"}, "network.input");
    sp.input_t = get_or<Index>(j.at("input"), "t", 3);
    sp.input_h = get_or<Index>(j.at("input"), "h", 32);
    sp.input_w = get_or<Index>(j.at("input"), "w", 32);
  }
  if (!j.contains("stages")) throw ConfigError("network config requires 'stages'");
  sp.stages.clear();
  for (const json& js : j.at("stages")) {
    check_keys(js, {"blocks", "channels", "spatial_stride"}, "network.stages[]");
    StageSpec st;
    st.blocks = get_or<Index>(js, "blocks", 1);
    st.channels = get_or<Index>(js, "channels", 16);
    st.spatial_stride = get_or<Index>(js, "spatial_stride", 1);
    sp.stages.push_back(st);
  }
  if (j.contains("temporal_pools")) {
    for (const json& jp : j.at("temporal_pools")) {
      check_keys(jp, {"after_stage", "extent", "stride"}, "network.temporal_pools[]");
      TemporalPool p;
      p.after_stage = get_or<int>(jp, "after_stage", -1);
      p.extent = get_or<Index>(jp, "extent", 2);
      p.stride = get_or<Index>(jp, "stride", 2);
      sp.temporal_pools.push_back(p);
    }
  }
  sp.validate();
  return sp;
}

inline json network_spec_to_json(const NetworkSpec& sp) {
  json j;
  j["kind"] = to_string(sp.kind);
  j["variant"] = to_string(sp.variant);
  j["init"] = to_string(sp.init);
  j["classifier"] = to_string(sp.classifier);
  j["in_channels"] = sp.in_channels;
  j["stem_channels"] = sp.stem_channels;
  j["stem_kernel"] = sp.stem_kernel;
  j["stem_stride"] = sp.stem_stride;
  j["input"] = {{"t", sp.input_t}, {"h", sp.input_h}, {"w", sp.input_w}};
  j["num_classes"] = sp.num_classes;
  j["sketch_dim"] = sp.sketch_dim;
  j["sketch_signed_sqrt"] = sp.sketch_signed_sqrt;
  j["sketch_l2norm"] = sp.sketch_l2norm;
  j["stages"] = json::array();
  for (const StageSpec& st : sp.stages)
    j["stages"].push_back({{"blocks", st.blocks}, {"channels", st.channels}, {"spatial_stride", st.spatial_stride}});
  j["temporal_pools"] = json::array();
  for (const TemporalPool& p : sp.temporal_pools)
    j["temporal_pools"].push_back({{"after_stage", p.after_stage}, {"extent", p.extent}, {"stride", p.stride}});
  return j;
}

inline TrainConfig parse_train_config(const json& j) {
  using namespace cfgdetail;
  check_keys(j, {"stage", "base_lr", "lr_decay_every", "lr_decay_factor", "epochs", "batch_size", "momentum",
                 "weight_decay", "flip_augment", "crop_h", "crop_w", "checkpoint_every", "infer_samples"},
             "train");
  TrainConfig tc;
  tc.stage = get_or<int>(j, "stage", 1);
  tc.base_lr = get_or<double>(j, "base_lr", 0.01);
  tc.lr_decay_every = get_or<Index>(j, "lr_decay_every", 20);
  tc.lr_decay_factor = get_or<double>(j, "lr_decay_factor", 10.0);
  tc.epochs = get_or<Index>(j, "epochs", 50);
  tc.batch_size = get_or<Index>(j, "batch_size", 16);
  tc.momentum = get_or<double>(j, "momentum", 0.9);
  tc.weight_decay = get_or<double>(j, "weight_decay", 0.0);
  tc.flip_augment = get_or<bool>(j, "flip_augment", true);
  tc.crop_h = get_or<Index>(j, "crop_h", 0);
  tc.crop_w = get_or<Index>(j, "crop_w", 0);
  tc.checkpoint_every = get_or<Index>(j, "checkpoint_every", 0);
  tc.infer_samples = get_or<Index>(j, "infer_samples", 0);
  tc.validate();
  return tc;
}

inline json train_config_to_json(const TrainConfig& tc) {
  return json{{"stage", tc.stage},
              {"base_lr", tc.base_lr},
              {"lr_decay_every", tc.lr_decay_every},
              {"lr_decay_factor", tc.lr_decay_factor},
              {"epochs", tc.epochs},
              {"batch_size", tc.batch_size},
              {"momentum", tc.momentum},
              {"weight_decay", tc.weight_decay},
              {"flip_augment", tc.flip_augment},
              {"crop_h", tc.crop_h},
              {"crop_w", tc.crop_w},
              {"checkpoint_every", tc.checkpoint_every},
              {"infer_samples", tc.infer_samples}};
}

inline DataConfig parse_data_config(const json& j) {
  using namespace cfgdetail;
  check_keys(j, {"synthetic", "train_path", "test_path"}, "data");
  DataConfig dc;
  if (j.contains("synthetic")) {
    dc.synthetic = true;
    const json& js = j.at("synthetic");
    check_keys(js, {"height", "width", "length", "num_shapes", "num_classes", "num_train", "num_test",
                    "carrier_size", "distractor_size", "noise", "background_amplitude", "time_code"},
               "data.synthetic");
    dc.spec.height = get_or<Index>(js, "height", 32);
    dc.spec.width = get_or<Index>(js, "width", 32);
    dc.spec.length = get_or<Index>(js, "length", 24);
    dc.spec.num_shapes = get_or<Index>(js, "num_shapes", 3);
    dc.spec.num_classes = get_or<Index>(js, "num_classes", 6);
    dc.spec.num_videos = get_or<Index>(js, "num_train", 600);
    dc.num_test = get_or<Index>(js, "num_test", 300);
    dc.spec.carrier_size = get_or<Index>(js, "carrier_size", 5);
    dc.spec.distractor_size = get_or<Index>(js, "distractor_size", 4);
    dc.spec.noise = get_or<double>(js, "noise", 0.02);
    dc.spec.background_amplitude = get_or<double>(js, "background_amplitude", 0.12);
    dc.spec.time_code = get_or<double>(js, "time_code", 0.25);
    dc.spec.validate();
  } else {
    dc.synthetic = false;
    dc.train_path = get_or<std::string>(j, "train_path", "");
    dc.test_path = get_or<std::string>(j, "test_path", "");
    if (dc.train_path.empty()) throw ConfigError("data config requires 'synthetic' or 'train_path'");
  }
  return dc;
}

inline json data_config_to_json(const DataConfig& dc) {
  json j;
  if (dc.synthetic) {
    j["synthetic"] = {{"height", dc.spec.height},
                      {"width", dc.spec.width},
                      {"length", dc.spec.length},
                      {"num_shapes", dc.spec.num_shapes},
                      {"num_classes", dc.spec.num_classes},
                      {"num_train", dc.spec.num_videos},
                      {"num_test", dc.num_test},
                      {"carrier_size", dc.spec.carrier_size},
                      {"distractor_size", dc.spec.distractor_size},
                      {"noise", dc.spec.noise},
                      {"background_amplitude", dc.spec.background_amplitude},
                      {"time_code", dc.spec.time_code}};
  } else {
    j["train_path"] = dc.train_path;
    j["test_path"] = dc.test_path;
  }
  return j;
}

inline ExperimentConfig parse_experiment_config(const json& j) {
  using namespace cfgdetail;
  check_keys(j, {"format", "seed", "precision", "out_dir", "network", "train", "data"}, "<root>");
  ExperimentConfig cfg;
  if (!j.contains("format")) throw ConfigError("config requires a 'format' field");
  cfg.format = j.at("format").get<int>();
  if (cfg.format != kConfigFormat)
    throw ConfigError("unsupported config format " + std::to_string(cfg.format) + " (expected " +
                      std::to_string(kConfigFormat) + ")");
  cfg.seed = get_or<std::uint64_t>(j, "seed", 1234);
  cfg.precision = get_or<std::string>(j, "precision", "double");
  if (cfg.precision != "single" && cfg.precision != "double")
    throw ConfigError("precision must be 'single' or 'double', got '" + cfg.precision + "'");
  cfg.out_dir = get_or<std::string>(j, "out_dir", "out");
  if (!j.contains("network")) throw ConfigError("config requires a 'network' section");
  cfg.network = parse_network_spec(j.at("network"));
  cfg.train = j.contains("train") ? parse_train_config(j.at("train")) : TrainConfig{};
  cfg.data = j.contains("data") ? parse_data_config(j.at("data")) : DataConfig{};
  if (cfg.data.synthetic) {
    require(cfg.data.spec.num_classes == cfg.network.num_classes,
            "network num_classes does not match synthetic data classes");
  }
  return cfg;
}

inline json experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["format"] = cfg.format;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  j["out_dir"] = cfg.out_dir;
  j["network"] = network_spec_to_json(cfg.network);
  j["train"] = train_config_to_json(cfg.train);
  j["data"] = data_config_to_json(cfg.data);
  return j;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

}  // namespace lgd
