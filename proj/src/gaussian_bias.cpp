#include "gabvit/gaussian_bias.hpp"

#include "init.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <optional>

namespace gabvit {

template <class Scalar>
GaussianTable<Scalar> gaussian_table(const BasicTensor<Scalar>& amplitude, const BasicTensor<Scalar>& width,
                                     std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) throw std::invalid_argument("gaussian_table: grid dimensions must be >= 1");
  if (amplitude.numel() != 1 || width.numel() != 1) {
    throw ShapeError("gaussian_table: amplitude and width must be single-element tensors");
  }
  using Array = typename BasicTensor<Scalar>::Array;
  const std::size_t rows = 2 * grid_h - 1, cols = 2 * grid_w - 1;
  const Scalar a = amplitude.item();
  const Scalar s = width.item();
  const Scalar variance = s * s + static_cast<Scalar>(kGaussianVarianceEpsilon);

  // Squared distance of each cell from the center, row-major.
  Array dist2(static_cast<Eigen::Index>(rows * cols));
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < cols; ++x) {
      const Scalar dy = static_cast<Scalar>(y) - static_cast<Scalar>(grid_h - 1);
      const Scalar dx = static_cast<Scalar>(x) - static_cast<Scalar>(grid_w - 1);
      dist2[y * cols + x] = dx * dx + dy * dy;
    }
  }
  Array shape = (-dist2 / (Scalar(2) * variance)).exp();
  BasicTensor<Scalar> values({rows, cols}, a * a * shape);

  if (autodiff::should_record(amplitude, width)) {
    autodiff::record(values, "gaussian_table", [amplitude, width, values, dist2, shape, a, s, variance] {
      const auto& g = values.grad();
      if (autodiff::wants_grad(amplitude)) {
        autodiff::accumulate_grad(amplitude, Array::Constant(1, (g * shape).sum() * Scalar(2) * a));
      }
      if (autodiff::wants_grad(width)) {
        // d/dsigma of A^2 exp(-d^2 / 2v) with v = sigma^2 + eps.
        const Scalar k = a * a * s / (variance * variance);
        autodiff::accumulate_grad(width, Array::Constant(1, k * (g * shape * dist2).sum()));
      }
    });
  }
  return GaussianTable<Scalar>{values, grid_h, grid_w, static_cast<double>(grid_w), static_cast<double>(grid_h)};
}

IndexList slice_indices(std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) throw std::invalid_argument("slice_indices: grid dimensions must be >= 1");
  const std::size_t n = grid_h * grid_w;
  const std::size_t table_cols = 2 * grid_w - 1;
  std::vector<std::size_t> idx(n * n);
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t i = q / grid_w, j = q % grid_w;
    const std::size_t top = grid_h - 1 - i, left = grid_w - 1 - j;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t r = k / grid_w, c = k % grid_w;
      idx[q * n + k] = (top + r) * table_cols + (left + c);
    }
  }
  return make_indices(std::move(idx));
}

template <class Scalar>
BasicTensor<Scalar> slice_and_stack(const GaussianTable<Scalar>& table, std::size_t grid_h, std::size_t grid_w) {
  if (table.values.shape() != Shape{2 * grid_h - 1, 2 * grid_w - 1}) {
    throw ShapeError("slice_and_stack: table " + shape_string(table.values.shape()) + " does not match a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  const std::size_t n = grid_h * grid_w;
  return gather(table.values, slice_indices(grid_h, grid_w), {n, n});
}

// ---------------------------------------------------------------------------

template <class Scalar>
struct GaussianAttentionBias<Scalar>::Memo {
  struct Entry {
    Scalar amplitude;
    Scalar width;
    BasicTensor<Scalar> bias;
  };
  std::mutex mutex;
  std::vector<std::optional<Entry>> entries;
};

namespace {

std::string gab_name(std::size_t layer, std::string_view leaf) {
  return "blocks." + std::to_string(layer) + ".gab." + std::string(leaf);
}

}  // namespace

template <class Scalar>
GaussianAttentionBias<Scalar>::GaussianAttentionBias(std::size_t num_layers, std::size_t grid_h, std::size_t grid_w)
    : grid_h_(grid_h), grid_w_(grid_w), slices_(slice_indices(grid_h, grid_w)), memo_(std::make_shared<Memo>()) {
  memo_->entries.resize(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    amplitude_.push_back(BasicTensor<Scalar>::scalar(Scalar(1), true));
    width_.push_back(BasicTensor<Scalar>::scalar(static_cast<Scalar>(initial_width()), true));
  }
}

template <class Scalar>
double GaussianAttentionBias<Scalar>::initial_width() const {
  return static_cast<double>(std::max(grid_h_, grid_w_)) / 4.0;
}

template <class Scalar>
void GaussianAttentionBias<Scalar>::set(std::size_t layer, Scalar amplitude, Scalar width) {
  amplitude_.at(layer).mutable_data()[0] = amplitude;
  width_.at(layer).mutable_data()[0] = width;
}

template <class Scalar>
void GaussianAttentionBias<Scalar>::reset() {
  for (std::size_t l = 0; l < num_layers(); ++l) set(l, Scalar(1), static_cast<Scalar>(initial_width()));
}

template <class Scalar>
void GaussianAttentionBias<Scalar>::reinitialize(std::uint64_t seed) {
  for (std::size_t l = 0; l < num_layers(); ++l) {
    detail::redraw_normal(amplitude_[l], 0.02, seed, gab_name(l, "amplitude"));
    width_[l].mutable_data()[0] = static_cast<Scalar>(initial_width());
  }
}

template <class Scalar>
NamedTensors<Scalar> GaussianAttentionBias<Scalar>::named_parameters() const {
  NamedTensors<Scalar> out;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    out.emplace_back(gab_name(l, "amplitude"), amplitude_[l]);
    out.emplace_back(gab_name(l, "width"), width_[l]);
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> GaussianAttentionBias<Scalar>::cached_bias(std::size_t layer) const {
  const Scalar a = amplitude(layer).item();
  const Scalar s = width(layer).item();
  std::lock_guard lock(memo_->mutex);
  auto& entry = memo_->entries.at(layer);
  if (entry && entry->amplitude == a && entry->width == s) return entry->bias;
  const std::size_t n = grid_h_ * grid_w_;
  auto table = gaussian_table(amplitude(layer), width(layer), grid_h_, grid_w_);
  auto bias = gather(table.values, slices_, {n, n});
  entry = typename Memo::Entry{a, s, bias};
  return bias;
}

template <class Scalar>
BasicTensor<Scalar> gab_bias(const GaussianAttentionBias<Scalar>& params, std::size_t layer) {
  if (layer >= params.num_layers()) {
    throw std::out_of_range("gab_bias: layer " + std::to_string(layer) + " out of range");
  }
  if (!grad_enabled()) return params.cached_bias(layer);
  auto table = gaussian_table(params.amplitude(layer), params.width(layer), params.grid_h(), params.grid_w());
  return slice_and_stack(table, params.grid_h(), params.grid_w());
}

template struct GaussianTable<float>;
template struct GaussianTable<double>;
template GaussianTable<float> gaussian_table(const BasicTensor<float>&, const BasicTensor<float>&, std::size_t,
                                             std::size_t);
template GaussianTable<double> gaussian_table(const BasicTensor<double>&, const BasicTensor<double>&, std::size_t,
                                              std::size_t);
template BasicTensor<float> slice_and_stack(const GaussianTable<float>&, std::size_t, std::size_t);
template BasicTensor<double> slice_and_stack(const GaussianTable<double>&, std::size_t, std::size_t);
template class GaussianAttentionBias<float>;
template class GaussianAttentionBias<double>;
template BasicTensor<float> gab_bias(const GaussianAttentionBias<float>&, std::size_t);
template BasicTensor<double> gab_bias(const GaussianAttentionBias<double>&, std::size_t);

}  // namespace gabvit
