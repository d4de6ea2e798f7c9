#pragma once

#include "gabvit/tensor.hpp"
#include "gabvit/vit.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace gabvit {

/// Row-major index of grid cell (grid_h / 2, grid_w / 2).
std::size_t central_patch_index(std::size_t grid_h, std::size_t grid_w);

/// Dataset-averaged rectified input gradient of the mean feature of one patch.
struct ErfMap {
  Eigen::MatrixXd values;  // H x W, non-negative
  std::size_t target_patch = 0;
  std::size_t sample_count = 0;
  ViTConfig config;
};

struct LocalityReport {
  double self_mass = 0;      // mean over the target patch's pixels
  double adjacent_mass = 0;  // mean over the 4-adjacent patches' pixels
  double far_mass = 0;       // mean over patches at Chebyshev distance >= 2
  std::optional<double> adjacency_ratio;  // adjacent / far, when far > 0
};

class LocalityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ErfOptions {
  // Worker threads for per-image gradients; the reduction is always serial
  // in submission order.
  std::size_t threads = 1;
};

/// ReLU of the channel-averaged gradient of mean_d y[target, d] with respect
/// to the image, shape [H x W]. Model parameters receive no gradient.
template <class Scalar>
BasicTensor<Scalar> erf_single(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model, std::size_t target);

/// Channel-averaged input gradient before rectification, [H x W].
template <class Scalar>
BasicTensor<Scalar> input_gradient(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model,
                                   std::size_t target);

template <class Scalar>
ErfMap erf_dataset(std::span<const BasicTensor<Scalar>> images, const ViTModel<Scalar>& model, std::size_t target,
                   const ErfOptions& options = {});

/// Seeded uniform [0, 1) noise images matching the model's input shape.
std::vector<Tensor> noise_images(const ViTConfig& config, std::uint64_t seed, std::size_t count);

LocalityReport locality_report(const ErfMap& erf);

enum class ReinitTarget { ape, rpe, gab };

std::string_view to_string(ReinitTarget target);
ReinitTarget parse_reinit_target(std::string_view text);

struct ReinitResult {
  ErfMap before;
  ErfMap after;
};

/// ERF before and after redrawing one positional component. The input model
/// is left untouched; the redraw happens on a clone.
ReinitResult reinit_experiment(const ViTModel<float>& model, ReinitTarget target, std::uint64_t seed,
                               std::span<const Tensor> images, const ErfOptions& options = {});

/// Applies the redraw used by reinit_experiment in place.
void reinitialize_component(ViTModel<float>& model, ReinitTarget target, std::uint64_t seed);

}  // namespace gabvit
