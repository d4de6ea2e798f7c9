#include "gabvit/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace gabvit;
  CLI::App app{"Toy vision transformer lab: Gaussian attention bias, ERF analysis and 2D Gaussian fits"};
  app.require_subcommand(1);

  TrainArgs train;
  std::string csv;
  auto* train_cmd = app.add_subcommand("train", "Train on the synthetic quadrant-blob task");
  train_cmd->add_option("config", train.config_path, "key = value config file")->required();
  train_cmd->add_option("checkpoint", train.checkpoint_path, "Output checkpoint path")->required();
  train_cmd->add_option("--csv", csv, "Loss-curve CSV path (default <checkpoint>.csv)");

  ErfArgs erf;
  std::size_t erf_target = 0;
  auto* erf_cmd = app.add_subcommand("erf", "Effective receptive field of one patch");
  erf_cmd->add_option("checkpoint", erf.checkpoint_path)->required();
  erf_cmd->add_option("images", erf.images, "noise:<seed>:<count> or a directory of P5/P6 images")->required();
  erf_cmd->add_option("output", erf.output_path, "Heatmap path (.pgm)")->required();
  auto* erf_target_opt = erf_cmd->add_option("--target", erf_target, "Target patch (default: central patch)");
  erf_cmd->add_option("--threads", erf.threads, "Worker threads")->check(CLI::PositiveNumber);

  RpeSliceArgs slice;
  std::string component = "both";
  std::size_t head = 0;
  auto* slice_cmd = app.add_subcommand("rpe-slice", "Export one query row of the attention bias");
  slice_cmd->add_option("checkpoint", slice.checkpoint_path)->required();
  slice_cmd->add_option("layer", slice.layer)->required();
  slice_cmd->add_option("patch", slice.patch)->required();
  slice_cmd->add_option("output", slice.output_path)->required();
  slice_cmd->add_option("--component", component, "rpe, gab or both")->check(CLI::IsMember({"rpe", "gab", "both"}));
  auto* head_opt = slice_cmd->add_option("--head", head, "Single head instead of the head average");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a 2D Gaussian to a raw grid or heatmap");
  fit_cmd->add_option("input", fit.input_path)->required();

  ReinitArgs reinit;
  auto* reinit_cmd = app.add_subcommand("reinit", "ERF before and after re-drawing a positional component");
  reinit_cmd->add_option("checkpoint", reinit.checkpoint_path)->required();
  reinit_cmd->add_option("component", reinit.component, "ape, rpe or gab")->required();
  reinit_cmd->add_option("seed", reinit.seed)->required();
  reinit_cmd->add_option("output_dir", reinit.output_dir)->required();
  reinit_cmd->add_option("--images", reinit.images, "noise:<seed>:<count> or a directory");
  reinit_cmd->add_option("--threads", reinit.threads)->check(CLI::PositiveNumber);

  GradcheckArgs gradcheck;
  std::string gradcheck_config;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference audit of every backward rule");
  gradcheck_cmd->add_option("--config", gradcheck_config, "Model config file (default: toy model)");
  gradcheck_cmd->add_option("--seed", gradcheck.seed);

  CLI11_PARSE(app, argc, argv);

  if (*train_cmd) {
    if (!csv.empty()) train.csv_path = csv;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (*erf_cmd) {
    if (*erf_target_opt) erf.target_patch = erf_target;
    return cmd_erf(erf, std::cout, std::cerr);
  }
  if (*slice_cmd) {
    slice.component = parse_slice_component(component);
    if (*head_opt) slice.head = head;
    return cmd_rpe_slice(slice, std::cout, std::cerr);
  }
  if (*fit_cmd) return cmd_fit(fit, std::cout, std::cerr);
  if (*reinit_cmd) return cmd_reinit(reinit, std::cout, std::cerr);
  if (*gradcheck_cmd) {
    if (!gradcheck_config.empty()) gradcheck.config_path = gradcheck_config;
    return cmd_gradcheck(gradcheck, std::cout, std::cerr);
  }
  return 1;
}
