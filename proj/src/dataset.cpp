#include "gabvit/dataset.hpp"

#include "gabvit/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace gabvit {

void SyntheticLocalityDataset::validate() const {
  if (height < 2 || width < 2) throw std::invalid_argument("dataset image must be at least 2x2");
  if (channels == 0) throw std::invalid_argument("dataset channels must be >= 1");
  if (num_classes != 4) throw std::invalid_argument("dataset num_classes must be 4 (one per quadrant)");
  if (!(blob_radius > 0)) throw std::invalid_argument("dataset blob_radius must be > 0");
  if (samples_per_epoch == 0) throw std::invalid_argument("dataset samples_per_epoch must be >= 1");
}

std::size_t quadrant_label(double center_y, double center_x, std::size_t height, std::size_t width) {
  const bool bottom = center_y >= static_cast<double>(height) / 2;
  const bool right = center_x >= static_cast<double>(width) / 2;
  return 2 * static_cast<std::size_t>(bottom) + static_cast<std::size_t>(right);
}

Tensor render_blob(const SyntheticLocalityDataset& ds, double cy, double cx, std::uint64_t noise_stream) {
  Rng rng(ds.seed ^ 0x6e6f697365ULL, noise_stream);
  Tensor::Array data(static_cast<Eigen::Index>(ds.height * ds.width * ds.channels));
  const double two_r2 = 2 * ds.blob_radius * ds.blob_radius;
  Eigen::Index k = 0;
  for (std::size_t r = 0; r < ds.height; ++r) {
    for (std::size_t c = 0; c < ds.width; ++c) {
      const double dy = static_cast<double>(r) + 0.5 - cy;
      const double dx = static_cast<double>(c) + 0.5 - cx;
      const double blob = std::exp(-(dx * dx + dy * dy) / two_r2);
      for (std::size_t ch = 0; ch < ds.channels; ++ch) {
        data[k++] = static_cast<float>(rng.uniform(0.0, 0.2) + blob);
      }
    }
  }
  return Tensor({ds.height, ds.width, ds.channels}, std::move(data));
}

Sample generate_sample(const SyntheticLocalityDataset& ds, std::uint64_t index) {
  Rng rng(ds.seed, index);
  Sample s;
  s.center_y = rng.uniform(0.0, static_cast<double>(ds.height));
  s.center_x = rng.uniform(0.0, static_cast<double>(ds.width));
  s.label = quadrant_label(s.center_y, s.center_x, ds.height, ds.width);
  s.image = render_blob(ds, s.center_y, s.center_x, index);
  return s;
}

}  // namespace gabvit
