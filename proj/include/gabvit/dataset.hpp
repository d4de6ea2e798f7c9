#pragma once

#include "gabvit/tensor.hpp"

#include <cstdint>

namespace gabvit {

/// Uniform [0, 0.2] background plus one Gaussian blob of peak 1. The label is
/// the image quadrant holding the blob center: 2 * bottom + right.
struct SyntheticLocalityDataset {
  std::uint64_t seed = 0;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 1;
  std::size_t num_classes = 4;
  double blob_radius = 1.0;
  std::size_t samples_per_epoch = 1024;

  void validate() const;
};

struct Sample {
  Tensor image;  // [H x W x C]
  std::size_t label = 0;
  double center_y = 0;  // pixel units, pixel (r, c) is centered at (r + 0.5, c + 0.5)
  double center_x = 0;
};

std::size_t quadrant_label(double center_y, double center_x, std::size_t height, std::size_t width);

/// Deterministic in (dataset.seed, index).
Sample generate_sample(const SyntheticLocalityDataset& dataset, std::uint64_t index);

/// Image with the blob at a given center; `noise_stream` selects the background draw.
Tensor render_blob(const SyntheticLocalityDataset& dataset, double center_y, double center_x,
                   std::uint64_t noise_stream);

}  // namespace gabvit
