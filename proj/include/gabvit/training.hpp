#pragma once

#include "gabvit/dataset.hpp"
#include "gabvit/vit.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gabvit {

enum class OptimizerKind { sgd_momentum, adaptive_moments };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adaptive_moments;
  double momentum = 0.9;  // sgd_momentum only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0;  // decoupled
  double clip_norm = 1.0;   // 0 disables clipping
  std::uint64_t seed = 0;
  // Parameters named here keep their values and are left out of the gradient norm.
  std::vector<std::string> frozen;

  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double loss = 0;       // batch loss before the update
  std::vector<std::pair<double, double>> gab;  // (A_l, sigma_l) after the update
};

struct TrainResult {
  std::vector<StepRecord> history;
};

/// Rescales the gradients of `params` so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);

/// Mean cross-entropy over samples (step * batch + b) mod samples_per_epoch,
/// one optimizer step per batch. Updates `model` in place.
TrainResult train(ViTModel<float>& model, const SyntheticLocalityDataset& dataset, const TrainConfig& config,
                  const std::function<void(const StepRecord&)>& on_step = {});

/// Fraction of samples [first, first + count) classified correctly.
double evaluate_accuracy(const ViTModel<float>& model, const SyntheticLocalityDataset& dataset, std::uint64_t first,
                         std::size_t count);

/// `step,loss,A_0,sigma_0,...` rows.
std::string loss_curve_csv(const TrainResult& result, std::size_t num_gab_layers);

}  // namespace gabvit
