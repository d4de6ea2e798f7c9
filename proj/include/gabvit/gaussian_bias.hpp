#pragma once

#include "gabvit/ops.hpp"
#include "gabvit/rpe.hpp"
#include "gabvit/tensor.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace gabvit {

/// Added to the squared width so a width of exactly zero stays finite.
inline constexpr double kGaussianVarianceEpsilon = 1e-6;

/// Isotropic 2D Gaussian evaluated on the (2*grid_h-1) x (2*grid_w-1) grid of
/// relative offsets. With 1-based coordinates x = 1..2*grid_w-1 (columns) and
/// y = 1..2*grid_h-1 (rows), the peak sits at (center_x, center_y) =
/// (grid_w, grid_h) and equals amplitude^2.
template <class Scalar>
struct GaussianTable {
  BasicTensor<Scalar> values;  // [(2*grid_h-1) x (2*grid_w-1)]
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  double center_x = 0;
  double center_y = 0;
};

/// f(x, y) = A^2 exp(-((x-xc)^2 + (y-yc)^2) / (2 (sigma^2 + eps))).
/// Differentiable with respect to both single-element parameter tensors.
template <class Scalar>
GaussianTable<Scalar> gaussian_table(const BasicTensor<Scalar>& amplitude, const BasicTensor<Scalar>& width,
                                     std::size_t grid_h, std::size_t grid_w);

/// Flat table positions read by slice_and_stack, row-major over [N x N].
///
/// Row n (query cell (i, j)) is the grid_h x grid_w window whose top-left
/// corner is table cell (grid_h-1-i, grid_w-1-j), so the table center lands
/// on local position (i, j): the first slice peaks top-left, the last one
/// bottom-right.
IndexList slice_indices(std::size_t grid_h, std::size_t grid_w);

template <class Scalar>
BasicTensor<Scalar> slice_and_stack(const GaussianTable<Scalar>& table, std::size_t grid_h, std::size_t grid_w);

/// Per-layer (A_l, sigma_l) pairs shared by every head of the layer.
template <class Scalar>
class GaussianAttentionBias {
 public:
  GaussianAttentionBias(std::size_t num_layers, std::size_t grid_h, std::size_t grid_w);

  std::size_t num_layers() const { return amplitude_.size(); }
  std::size_t grid_h() const { return grid_h_; }
  std::size_t grid_w() const { return grid_w_; }

  const BasicTensor<Scalar>& amplitude(std::size_t layer) const { return amplitude_.at(layer); }
  const BasicTensor<Scalar>& width(std::size_t layer) const { return width_.at(layer); }
  void set(std::size_t layer, Scalar amplitude, Scalar width);

  double initial_width() const;

  /// Restores A_l = 1, sigma_l = max(grid_h, grid_w) / 4 on every layer.
  void reset();
  /// Redraws A_l from N(0, 0.02^2) and restores sigma_l to its initial value.
  void reinitialize(std::uint64_t seed);

  NamedTensors<Scalar> named_parameters() const;

  // The bias build is memoized on the parameter values while gradients are
  // disabled; copies share the memo.
  BasicTensor<Scalar> cached_bias(std::size_t layer) const;

 private:
  struct Memo;

  std::size_t grid_h_;
  std::size_t grid_w_;
  IndexList slices_;
  std::vector<BasicTensor<Scalar>> amplitude_;
  std::vector<BasicTensor<Scalar>> width_;
  std::shared_ptr<Memo> memo_;
};

/// B_Gauss for `layer`, [N x N]; gradients reach only (A_l, sigma_l).
template <class Scalar>
BasicTensor<Scalar> gab_bias(const GaussianAttentionBias<Scalar>& params, std::size_t layer);

}  // namespace gabvit
