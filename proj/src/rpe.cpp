#include "gabvit/rpe.hpp"

#include "init.hpp"

#include <stdexcept>

namespace gabvit {

std::string_view to_string(RpeKind kind) {
  switch (kind) {
    case RpeKind::none: return "none";
    case RpeKind::relposbias: return "relposbias";
    case RpeKind::relposmlp: return "relposmlp";
  }
  return "none";
}

RpeKind parse_rpe_kind(std::string_view text) {
  if (text == "none") return RpeKind::none;
  if (text == "relposbias") return RpeKind::relposbias;
  if (text == "relposmlp") return RpeKind::relposmlp;
  throw std::invalid_argument("unknown rpe kind '" + std::string(text) + "' (expected none, relposbias or relposmlp)");
}

std::pair<long, long> RelativeCoordinateIndex::offset(std::size_t bucket) const {
  const auto width = static_cast<long>(2 * grid_w - 1);
  const auto b = static_cast<long>(bucket);
  return {b / width - static_cast<long>(grid_h - 1), b % width - static_cast<long>(grid_w - 1)};
}

RelativeCoordinateIndex build_index(std::size_t grid_h, std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0) throw std::invalid_argument("build_index: grid dimensions must be >= 1");
  RelativeCoordinateIndex index;
  index.grid_h = grid_h;
  index.grid_w = grid_w;
  const std::size_t n = grid_h * grid_w;
  const std::size_t width = 2 * grid_w - 1;
  index.table.resize(n * n);
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t qr = q / grid_w, qc = q % grid_w;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t kr = k / grid_w, kc = k % grid_w;
      // (kr - qr + grid_h - 1) stays non-negative.
      index.table[q * n + k] = (kr + grid_h - 1 - qr) * width + (kc + grid_w - 1 - qc);
    }
  }
  return index;
}

namespace {

std::string layer_name(std::size_t layer, std::string_view leaf) {
  return "blocks." + std::to_string(layer) + ".rpe." + std::string(leaf);
}

}  // namespace

template <class Scalar>
RelativePositionBias<Scalar>::RelativePositionBias(RpeKind kind, std::size_t num_layers, std::size_t num_heads,
                                                   std::size_t grid_h, std::size_t grid_w, std::size_t hidden,
                                                   std::uint64_t seed)
    : kind_(kind), num_heads_(num_heads), hidden_(hidden), index_(build_index(grid_h, grid_w)) {
  if (kind == RpeKind::none) throw std::invalid_argument("RelativePositionBias needs relposbias or relposmlp");
  if (num_heads == 0) throw std::invalid_argument("RelativePositionBias: num_heads must be >= 1");
  if (kind == RpeKind::relposmlp && hidden == 0) throw std::invalid_argument("RelPosMlp hidden width must be >= 1");

  const std::size_t n = index_.num_patches();
  const std::size_t buckets = index_.num_buckets();

  std::vector<Scalar> coords(buckets * 2);
  for (std::size_t b = 0; b < buckets; ++b) {
    const auto [dr, dc] = index_.offset(b);
    coords[2 * b] = grid_h > 1 ? static_cast<Scalar>(dr) / static_cast<Scalar>(grid_h - 1) : Scalar(0);
    coords[2 * b + 1] = grid_w > 1 ? static_cast<Scalar>(dc) / static_cast<Scalar>(grid_w - 1) : Scalar(0);
  }
  coordinates_ = BasicTensor<Scalar>::from_vector({buckets, 2}, coords);

  std::vector<std::size_t> table_idx(num_heads * n * n), mlp_idx(num_heads * n * n);
  for (std::size_t h = 0; h < num_heads; ++h) {
    for (std::size_t i = 0; i < n * n; ++i) {
      table_idx[h * n * n + i] = h * buckets + index_.table[i];
      mlp_idx[h * n * n + i] = index_.table[i] * num_heads + h;
    }
  }
  table_lookup_ = make_indices(std::move(table_idx));
  mlp_lookup_ = make_indices(std::move(mlp_idx));

  layers_.resize(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    auto& layer = layers_[l];
    if (kind == RpeKind::relposbias) {
      layer.table = BasicTensor<Scalar>::zeros({num_heads, buckets}, true);
    } else {
      layer.fc1_weight = detail::normal_parameter<Scalar>({2, hidden}, detail::fan_in_stddev(2), seed,
                                                          layer_name(l, "fc1_weight"));
      layer.fc1_bias = detail::normal_parameter<Scalar>({hidden}, detail::fan_in_stddev(2), seed,
                                                        layer_name(l, "fc1_bias"));
      layer.fc2_weight = detail::normal_parameter<Scalar>({hidden, num_heads}, detail::fan_in_stddev(hidden),
                                                          seed, layer_name(l, "fc2_weight"));
      layer.fc2_bias = detail::normal_parameter<Scalar>({num_heads}, detail::fan_in_stddev(hidden), seed,
                                                        layer_name(l, "fc2_bias"));
    }
  }
}

template <class Scalar>
BasicTensor<Scalar> RelativePositionBias<Scalar>::materialize_bias(std::size_t layer) const {
  if (layer >= layers_.size()) throw std::out_of_range("materialize_bias: layer " + std::to_string(layer) + " out of range");
  const std::size_t n = index_.num_patches();
  const Shape shape{num_heads_, n, n};
  const auto& p = layers_[layer];
  if (kind_ == RpeKind::relposbias) return gather(p.table, table_lookup_, shape);
  auto hidden = gelu(linear(coordinates_, p.fc1_weight, &p.fc1_bias));
  auto per_bucket = linear(hidden, p.fc2_weight, &p.fc2_bias);  // [buckets x heads]
  return gather(per_bucket, mlp_lookup_, shape);
}

template <class Scalar>
void RelativePositionBias<Scalar>::reinitialize(std::uint64_t seed) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    if (kind_ == RpeKind::relposbias) {
      layer.table.mutable_data().setZero();
    } else {
      detail::redraw_normal(layer.fc1_weight, detail::fan_in_stddev(2), seed, layer_name(l, "fc1_weight"));
      detail::redraw_normal(layer.fc1_bias, detail::fan_in_stddev(2), seed, layer_name(l, "fc1_bias"));
      detail::redraw_normal(layer.fc2_weight, detail::fan_in_stddev(hidden_), seed, layer_name(l, "fc2_weight"));
      detail::redraw_normal(layer.fc2_bias, detail::fan_in_stddev(hidden_), seed, layer_name(l, "fc2_bias"));
    }
  }
}

template <class Scalar>
NamedTensors<Scalar> RelativePositionBias<Scalar>::named_parameters() const {
  NamedTensors<Scalar> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (kind_ == RpeKind::relposbias) {
      out.emplace_back(layer_name(l, "table"), layer.table);
    } else {
      out.emplace_back(layer_name(l, "fc1_weight"), layer.fc1_weight);
      out.emplace_back(layer_name(l, "fc1_bias"), layer.fc1_bias);
      out.emplace_back(layer_name(l, "fc2_weight"), layer.fc2_weight);
      out.emplace_back(layer_name(l, "fc2_bias"), layer.fc2_bias);
    }
  }
  return out;
}

template <class Scalar>
const BasicTensor<Scalar>& RelativePositionBias<Scalar>::table(std::size_t layer) const {
  if (kind_ != RpeKind::relposbias) throw std::logic_error("table() is only defined for relposbias");
  return layers_.at(layer).table;
}

template <class Scalar>
BasicTensor<Scalar> extract_rpe_slice(const BasicTensor<Scalar>& bias, std::size_t patch, std::size_t grid_h,
                                      std::size_t grid_w) {
  const std::size_t n = grid_h * grid_w;
  BasicTensor<Scalar> averaged;
  if (bias.rank() == 3 && bias.dim(1) == n && bias.dim(2) == n) {
    averaged = mean_over_dim(bias, 0);
  } else if (bias.rank() == 2 && bias.dim(0) == n && bias.dim(1) == n) {
    averaged = bias;
  } else {
    throw ShapeError("extract_rpe_slice: bias " + shape_string(bias.shape()) + " does not match a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  if (patch >= n) {
    throw std::out_of_range("extract_rpe_slice: patch " + std::to_string(patch) + " not in [0, " +
                            std::to_string(n) + ")");
  }
  return reshape(select_rows(averaged, patch, 1), {grid_h, grid_w});
}

template class RelativePositionBias<float>;
template class RelativePositionBias<double>;
template BasicTensor<float> extract_rpe_slice(const BasicTensor<float>&, std::size_t, std::size_t, std::size_t);
template BasicTensor<double> extract_rpe_slice(const BasicTensor<double>&, std::size_t, std::size_t, std::size_t);

}  // namespace gabvit
