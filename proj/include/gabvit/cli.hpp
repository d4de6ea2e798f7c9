#pragma once

#include "gabvit/gradcheck.hpp"
#include "gabvit/tensor.hpp"
#include "gabvit/vit.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gabvit {

// Each command returns the process exit status and never throws; messages go
// to `err`, results to `out`.

struct TrainArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::optional<std::string> csv_path;  // default: <checkpoint>.csv
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct ErfArgs {
  std::string checkpoint_path;
  std::string images = "noise:0:64";  // noise:<seed>:<count> or a directory of P5/P6 files
  std::string output_path;
  std::optional<std::size_t> target_patch;  // default: central patch
  std::size_t threads = 1;
};
int cmd_erf(const ErfArgs& args, std::ostream& out, std::ostream& err);

enum class SliceComponent { rpe, gab, both };

struct RpeSliceArgs {
  std::string checkpoint_path;
  std::size_t layer = 0;
  std::size_t patch = 0;
  std::string output_path;
  SliceComponent component = SliceComponent::both;
  std::optional<std::size_t> head;  // default: average over heads
};
int cmd_rpe_slice(const RpeSliceArgs& args, std::ostream& out, std::ostream& err);

struct FitArgs {
  std::string input_path;  // raw grid or heatmap
};
int cmd_fit(const FitArgs& args, std::ostream& out, std::ostream& err);

struct ReinitArgs {
  std::string checkpoint_path;
  std::string component;  // ape, rpe or gab
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string images = "noise:0:64";
  std::size_t threads = 1;
};
int cmd_reinit(const ReinitArgs& args, std::ostream& out, std::ostream& err);

struct GradcheckArgs {
  std::optional<std::string> config_path;  // default: the toy training model
  std::uint64_t seed = 0;
  std::vector<GradAudit> extra_audits;
};
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

/// `noise:<seed>:<count>` or a directory whose .pgm/.ppm/.pnm files are read
/// in name order. Every image must match the model input shape.
std::vector<Tensor> load_image_source(const std::string& spec, const ViTConfig& config);

SliceComponent parse_slice_component(std::string_view text);

/// Head-averaged (or single-head) bias row for query `patch`, [grid_h x grid_w].
Eigen::MatrixXd bias_slice(const ViTModel<float>& model, std::size_t layer, std::size_t patch,
                           SliceComponent component, std::optional<std::size_t> head = std::nullopt);

std::string fixed6(double value);

}  // namespace gabvit
