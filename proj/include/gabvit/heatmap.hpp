#pragma once

#include "gabvit/tensor.hpp"

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <string>

namespace gabvit {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HeatmapInfo {
  std::optional<std::size_t> target_patch;
  std::optional<std::size_t> sample_count;
};

struct EncodedHeatmap {
  std::string pgm;   // binary 16-bit graymap, maxval 65535
  std::string meta;  // key=value sidecar
  std::string grid;  // raw values in the `grid h w` format
  double raw_min = 0;
  double raw_max = 0;
  bool constant = false;
};

/// Pixel = round(65535 (raw - min) / (max - min)); constant maps are all zero.
EncodedHeatmap encode_heatmap(const Eigen::MatrixXd& raw, const HeatmapInfo& info = {});

/// Writes `path`, `path.meta` and `path.grid`.
void write_heatmap(const std::string& path, const Eigen::MatrixXd& raw, const HeatmapInfo& info = {});

/// `grid h w` followed by h * w whitespace-separated values, row-major.
std::string format_raw_grid(const Eigen::MatrixXd& grid);
Eigen::MatrixXd parse_raw_grid(const std::string& text, const std::string& source = "<grid>");

struct Graymap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 for P5, 3 for P6
  unsigned maxval = 0;
  Eigen::ArrayXd samples;  // row-major, interleaved channels, unscaled
};

Graymap parse_pnm(const std::string& bytes, const std::string& source = "<pnm>");

/// Reads a raw grid file or a heatmap. Heatmap pixels are mapped back to raw
/// values using the sidecar's raw_min/raw_max when `path.meta` exists.
Eigen::MatrixXd load_grid(const std::string& path);

/// Binary P5/P6 image scaled to [0, 1], shape [H x W x C].
Tensor load_image(const std::string& path);

std::string read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::string& bytes);

}  // namespace gabvit
