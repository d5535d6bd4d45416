#include <CLI11.hpp>

#include "lgd/cli_app.hpp"

int main(int argc, char** argv) {
  CLI::App app{"lgd: local/global diffusion video networks"};
  app.require_subcommand(1);

  std::string config_path, resume, out_dir, precision, data_path, ckpt_path, preset, scope = "all";
  std::string report_path;
  int stage = 0;
  bool from_scratch = false, test_split = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  lgd::Index bench_c = 16, trials = 200, n_samples = 0;
  std::vector<lgd::Index> bench_dims{64, 256, 1024};

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override the master seed")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* t = app.add_subcommand("train", "run one training stage");
  t->add_option("--config", config_path, "experiment config file")->required();
  t->add_option("--stage", stage, "training stage (1 or 2)")->check(CLI::Range(1, 2));
  t->add_option("--resume", resume, "checkpoint to start from (stage 2 needs a stage-1 checkpoint)");
  t->add_flag("--from-scratch", from_scratch, "allow stage 2 without a stage-1 checkpoint");
  t->add_option("--out", out_dir, "output directory override");
  t->add_option("--precision", precision, "single or double");
  add_seed(t);

  CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  e->add_option("--data", data_path, "dataset file (defaults to the config's synthetic test split)");
  e->add_option("--out", report_path, "write the JSON report here");
  e->add_option("--samples", n_samples, "samples per video (default 10 for 2D, 15 for 3D)");

  CLI::App* g = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  g->add_option("--scope", scope, "ops | block | network | all");
  g->add_option("--out", report_path, "write the JSON report here");
  add_seed(g);

  CLI::App* s = app.add_subcommand("sketch-bench", "tensor-sketch kernel approximation benchmark");
  s->add_option("--input-dim", bench_c, "feature dimension C");
  s->add_option("--dims", bench_dims, "sketch dimensions to sweep");
  s->add_option("--trials", trials, "independent table draws per dimension (>= 50)");
  s->add_option("--out", report_path, "write the JSON report here");
  add_seed(s);

  CLI::App* sh = app.add_subcommand("shapes", "print the per-stage local path shape schedule");
  sh->add_option("--config", config_path, "experiment config file");
  sh->add_option("--preset", preset, "toy2d | toy3d | resnet50_3d");

  CLI::App* gd = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  gd->add_option("--config", config_path, "experiment config file")->required();
  gd->add_option("--out", out_dir, "output dataset path")->required();
  gd->add_flag("--test-split", test_split, "generate the test split instead of train");

  CLI11_PARSE(app, argc, argv);

  lgd::cli::Overrides ov;
  ov.stage = stage;
  ov.resume = resume;
  ov.from_scratch = from_scratch;
  ov.out_dir = out_dir;
  if (seed_set) ov.seed = seed;
  ov.precision = precision;

  if (t->parsed()) return lgd::cli::run_train(config_path, ov);
  if (e->parsed()) return lgd::cli::run_eval(ckpt_path, data_path, report_path, n_samples);
  if (g->parsed()) return lgd::cli::run_gradcheck(scope, seed_set ? seed : 1234, report_path);
  if (s->parsed())
    return lgd::cli::run_sketch_bench(bench_c, bench_dims, trials, seed_set ? seed : 1234, report_path);
  if (sh->parsed()) return lgd::cli::run_shapes(config_path, preset);
  if (gd->parsed()) return lgd::cli::run_gen_data(config_path, out_dir, test_split);
  return lgd::cli::kExitValidation;
}
