#pragma once

#include "gabvit/dataset.hpp"
#include "gabvit/training.hpp"
#include "gabvit/vit.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gabvit {

/// Everything cmd_train needs. Defaults describe the toy run: 8x8 inputs,
/// 4x4 patches, absolute embedding, relative-position MLP and Gaussian bias.
struct ExperimentConfig {
  ViTConfig model = default_model();
  SyntheticLocalityDataset data;
  TrainConfig train;
  std::uint64_t model_seed = 0;

  static ViTConfig default_model();
};

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string source, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// `key = value` per line; `#` starts a comment. `seed` sets the model, data
/// and training seeds at once; model_seed / data_seed override it.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_experiment_config(const std::string& path);

/// Single-line `key=value ...` form used inside checkpoints.
std::string format_model_config(const ViTConfig& config);
ViTConfig parse_model_config(const std::string& line);

}  // namespace gabvit
