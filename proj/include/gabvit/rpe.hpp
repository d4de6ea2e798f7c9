#pragma once

#include "gabvit/ops.hpp"
#include "gabvit/tensor.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gabvit {

enum class RpeKind { none, relposbias, relposmlp };

std::string_view to_string(RpeKind kind);
RpeKind parse_rpe_kind(std::string_view text);

/// Maps each (query, key) patch pair to the bucket of its relative offset.
///
/// Buckets enumerate (drow, dcol) with drow in [-(grid_h-1), grid_h-1] and
/// dcol in [-(grid_w-1), grid_w-1], row-major; the offset is key minus query.
struct RelativeCoordinateIndex {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<std::size_t> table;  // N x N, row-major

  std::size_t num_patches() const { return grid_h * grid_w; }
  std::size_t num_buckets() const { return (2 * grid_h - 1) * (2 * grid_w - 1); }
  std::size_t zero_offset_bucket() const { return (grid_h - 1) * (2 * grid_w - 1) + (grid_w - 1); }
  std::size_t operator()(std::size_t query, std::size_t key) const { return table[query * num_patches() + key]; }
  // Offset (drow, dcol) represented by a bucket.
  std::pair<long, long> offset(std::size_t bucket) const;
};

RelativeCoordinateIndex build_index(std::size_t grid_h, std::size_t grid_w);

template <class Scalar>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<Scalar>>>;

/// Per-layer, per-head relative position bias: either a learnable table
/// indexed by offset bucket (RelPosBias) or a two-layer perceptron evaluated
/// at normalized offsets (RelPosMlp).
template <class Scalar>
class RelativePositionBias {
 public:
  RelativePositionBias(RpeKind kind, std::size_t num_layers, std::size_t num_heads, std::size_t grid_h,
                       std::size_t grid_w, std::size_t hidden, std::uint64_t seed);

  RpeKind kind() const { return kind_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_heads() const { return num_heads_; }
  std::size_t hidden() const { return hidden_; }
  const RelativeCoordinateIndex& index() const { return index_; }

  /// Bias for every head of `layer`, shape [heads x N x N].
  BasicTensor<Scalar> materialize_bias(std::size_t layer) const;

  /// Redraws every parameter from the construction distribution, in place.
  void reinitialize(std::uint64_t seed);

  NamedTensors<Scalar> named_parameters() const;

  // RelPosBias only: [heads x buckets].
  const BasicTensor<Scalar>& table(std::size_t layer) const;

  /// Normalized offset coordinates fed to the perceptron, [buckets x 2].
  const BasicTensor<Scalar>& coordinates() const { return coordinates_; }

 private:
  struct Layer {
    BasicTensor<Scalar> table;
    BasicTensor<Scalar> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
  };

  RpeKind kind_;
  std::size_t num_heads_;
  std::size_t hidden_;
  RelativeCoordinateIndex index_;
  BasicTensor<Scalar> coordinates_;
  IndexList table_lookup_;
  IndexList mlp_lookup_;
  std::vector<Layer> layers_;
};

/// Head-averaged row `patch` of an attention bias, laid out on the patch
/// grid. Accepts [heads x N x N] or a head-shared [N x N].
template <class Scalar>
BasicTensor<Scalar> extract_rpe_slice(const BasicTensor<Scalar>& bias, std::size_t patch, std::size_t grid_h,
                                      std::size_t grid_w);

}  // namespace gabvit
