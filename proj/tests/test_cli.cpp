#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "lgd/cli_app.hpp"

using namespace lgd;
namespace fs = std::filesystem;

namespace {

json micro_config() {
  json j;
  j["format"] = 1;
  j["seed"] = 424242;
  j["precision"] = "double";
  j["network"] = {{"kind", "lgd2d"},
                  {"stem_channels", 8},
                  {"stem_kernel", 3},
                  {"stem_stride", 1},
                  {"stages", json::array({{{"blocks", 1}, {"channels", 8}, {"spatial_stride", 1}},
                                          {{"blocks", 1}, {"channels", 16}, {"spatial_stride", 2}}})},
                  {"input", {{"t", 2}, {"h", 16}, {"w", 16}}},
                  {"num_classes", 6},
                  {"sketch_dim", 32}};
  j["train"] = {{"stage", 1}, {"epochs", 2}, {"batch_size", 8}, {"base_lr", 0.01}};
  j["data"] = {{"synthetic",
                {{"height", 16},
                 {"width", 16},
                 {"length", 8},
                 {"carrier_size", 4},
                 {"distractor_size", 3},
                 {"num_train", 24},
                 {"num_test", 8}}}};
  return j;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("lgd_cli_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_config(const TempDir& dir, const json& j, const std::string& name = "config.json") {
  std::string p = dir.file(name);
  std::ofstream os(p);
  os << j.dump(2);
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config: unknown keys are rejected at every level") {
  json j = micro_config();
  j["oops"] = 1;
  CHECK_THROWS_WITH(parse_experiment_config(j), Catch::Matchers::ContainsSubstring("oops"));

  j = micro_config();
  j["network"]["bogus"] = true;
  CHECK_THROWS_WITH(parse_experiment_config(j), Catch::Matchers::ContainsSubstring("bogus"));

  j = micro_config();
  j["train"]["lr"] = 0.1;  // wrong name
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);

  j = micro_config();
  j["data"]["synthetic"]["shape_count"] = 3;
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
}

TEST_CASE("config: format field is required and versioned") {
  json j = micro_config();
  j.erase("format");
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
  j = micro_config();
  j["format"] = 2;
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
}

TEST_CASE("config: bad enum values are rejected") {
  json j = micro_config();
  j["network"]["kind"] = "lgd4d";
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
  j = micro_config();
  j["precision"] = "half";
  CHECK_THROWS_AS(parse_experiment_config(j), ConfigError);
}

TEST_CASE("config: round trip through JSON is stable") {
  ExperimentConfig cfg = parse_experiment_config(micro_config());
  json emitted = experiment_config_to_json(cfg);
  ExperimentConfig back = parse_experiment_config(emitted);
  CHECK(experiment_config_to_json(back).dump() == emitted.dump());
}

TEST_CASE("cmd shapes: presets work, bad preset fails validation") {
  CHECK(cli::run_shapes("", "resnet50_3d") == cli::kExitOk);
  CHECK(cli::run_shapes("", "nope") == cli::kExitValidation);
  CHECK(cli::run_shapes("", "") == cli::kExitValidation);
}

TEST_CASE("cmd train: stage 1 then stage 2, determinism, stage-2 gating") {
  TempDir dir;
  json j = micro_config();
  j["out_dir"] = dir.file("run1");
  std::string cfg_path = write_config(dir, j);

  cli::Overrides ov;
  REQUIRE(cli::run_train(cfg_path, ov) == cli::kExitOk);
  REQUIRE(fs::exists(dir.file("run1/metrics_stage1.jsonl")));
  REQUIRE(fs::exists(dir.file("run1/ckpt_stage1.bin")));

  // identical seed and config: byte-identical metrics
  json j2 = micro_config();
  j2["out_dir"] = dir.file("run2");
  std::string cfg2 = write_config(dir, j2, "config2.json");
  REQUIRE(cli::run_train(cfg2, ov) == cli::kExitOk);
  CHECK(slurp(dir.file("run1/metrics_stage1.jsonl")) == slurp(dir.file("run2/metrics_stage1.jsonl")));

  // stage 2 without a stage-1 checkpoint is rejected
  cli::Overrides ov2;
  ov2.stage = 2;
  CHECK(cli::run_train(cfg_path, ov2) == cli::kExitValidation);

  // stage 2 resuming from stage 1 works
  ov2.resume = dir.file("run1/ckpt_stage1.bin");
  ov2.out_dir = dir.file("run1_s2");
  REQUIRE(cli::run_train(cfg_path, ov2) == cli::kExitOk);
  REQUIRE(fs::exists(dir.file("run1_s2/ckpt_stage2.bin")));

  // --from-scratch overrides the gate
  cli::Overrides ov3;
  ov3.stage = 2;
  ov3.from_scratch = true;
  ov3.out_dir = dir.file("run_scratch");
  CHECK(cli::run_train(cfg_path, ov3) == cli::kExitOk);

  // eval: runs from the checkpoint alone and is byte-stable
  REQUIRE(cli::run_eval(dir.file("run1/ckpt_stage1.bin"), "", dir.file("r1.json"), 3) == cli::kExitOk);
  REQUIRE(cli::run_eval(dir.file("run1/ckpt_stage1.bin"), "", dir.file("r2.json"), 3) == cli::kExitOk);
  CHECK(slurp(dir.file("r1.json")) == slurp(dir.file("r2.json")));
}

TEST_CASE("cmd train: invalid config exits with validation code") {
  TempDir dir;
  json j = micro_config();
  j["train"]["epochs"] = 0;
  std::string cfg_path = write_config(dir, j);
  CHECK(cli::run_train(cfg_path, {}) == cli::kExitValidation);
  CHECK(cli::run_train(dir.file("missing.json"), {}) == cli::kExitValidation);
}

TEST_CASE("cmd gen-data: writes a loadable dataset with latents") {
  TempDir dir;
  std::string cfg_path = write_config(dir, micro_config());
  std::string out = dir.file("data.bin");
  REQUIRE(cli::run_gen_data(cfg_path, out, false) == cli::kExitOk);
  std::string latents;
  VideoDataset ds = read_dataset(out, &latents);
  CHECK(ds.size() == 24);
  json lat = json::parse(latents);
  CHECK(lat.size() == 24);
  CHECK(lat[0].contains("shapes"));

  // test split uses an independent stream
  std::string out_test = dir.file("data_test.bin");
  REQUIRE(cli::run_gen_data(cfg_path, out_test, true) == cli::kExitOk);
  VideoDataset ts = read_dataset(out_test);
  CHECK(ts.size() == 8);
}

TEST_CASE("cmd gradcheck and sketch-bench exit codes") {
  CHECK(cli::run_gradcheck("ops", 1234, "") == cli::kExitOk);
  CHECK(cli::run_gradcheck("bogus-scope", 1234, "") == cli::kExitValidation);
  CHECK(cli::run_sketch_bench(8, {16, 64}, 60, 7, "") == cli::kExitOk);
  CHECK(cli::run_sketch_bench(8, {16}, 10, 7, "") == cli::kExitValidation);  // too few trials
}

TEST_CASE("cmd eval: rejects missing checkpoint") {
  CHECK(cli::run_eval("/nonexistent/ckpt.bin", "", "", 1) == cli::kExitValidation);
}
