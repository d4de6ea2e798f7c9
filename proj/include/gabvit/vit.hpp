#pragma once

#include "gabvit/gaussian_bias.hpp"
#include "gabvit/ops.hpp"
#include "gabvit/rpe.hpp"
#include "gabvit/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gabvit {

struct ViTConfig {
  std::size_t image_height = 8;
  std::size_t image_width = 8;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  double mlp_ratio = 2.0;
  std::size_t num_classes = 4;
  RpeKind rpe_kind = RpeKind::none;
  bool use_ape = false;
  bool use_gab = false;
  std::size_t rpe_hidden = 128;
  double layernorm_eps = 1e-6;

  std::size_t grid_h() const { return image_height / patch_size; }
  std::size_t grid_w() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  bool operator==(const ViTConfig&) const = default;
};

template <class Scalar>
struct BlockWeights {
  BasicTensor<Scalar> norm1_gain, norm1_bias;
  BasicTensor<Scalar> query, key, value, output;  // [D x D]
  BasicTensor<Scalar> norm2_gain, norm2_bias;
  BasicTensor<Scalar> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

/// Standard pre-norm ViT without a class token. Parameters are shared tensor
/// handles; use clone() for an independent copy.
template <class Scalar>
class ViTModel {
 public:
  explicit ViTModel(const ViTConfig& config, std::uint64_t seed = 0);

  const ViTConfig& config() const { return config_; }

  BasicTensor<Scalar> patch_projection;  // [P*P*C x D]
  std::optional<BasicTensor<Scalar>> ape;  // [N x D]
  std::vector<BlockWeights<Scalar>> blocks;
  std::optional<RelativePositionBias<Scalar>> rpe;
  std::optional<GaussianAttentionBias<Scalar>> gab;
  BasicTensor<Scalar> final_gain, final_bias;
  BasicTensor<Scalar> head;  // [D x num_classes]

  /// Every parameter, sorted by name.
  NamedTensors<Scalar> named_parameters() const;
  std::size_t parameter_count() const;

  ViTModel clone() const { return cast<Scalar>(); }

  template <class Other>
  ViTModel<Other> cast() const {
    ViTModel<Other> out(config_, 0);
    auto src = named_parameters();
    auto dst = out.named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i].second.mutable_data() = src[i].second.data().template cast<Other>();
    }
    return out;
  }

  void zero_grad() const;

 private:
  ViTConfig config_;
};

/// Additive attention-logit terms: per-head [heads x N x N] and head-shared [N x N].
template <class Scalar>
struct AttentionBias {
  const BasicTensor<Scalar>* per_head = nullptr;
  const BasicTensor<Scalar>* shared = nullptr;
};

/// Image [H x W x C] to patch tokens [N x D]; patches are taken row-major over
/// the grid and flattened in (row, col, channel) order. Adds the APE if any.
template <class Scalar>
BasicTensor<Scalar> patch_embed(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model);

/// Flat image positions read by patch_embed, [N x P*P*C] row-major.
IndexList patch_partition_indices(const ViTConfig& config);

/// softmax(Q K^T / sqrt(embed_dim) + bias) V per head, projected back to [N x D].
/// No normalization and no residual.
template <class Scalar>
BasicTensor<Scalar> multi_head_attention(const BasicTensor<Scalar>& x, const BlockWeights<Scalar>& weights,
                                         std::size_t num_heads, Scalar scale, AttentionBias<Scalar> bias);

/// z + attention(LayerNorm(z)) for block `layer`, with the model's RPE and
/// Gaussian bias. `extra_shared_bias`, if given, is added to every head.
template <class Scalar>
BasicTensor<Scalar> attention_layer(const BasicTensor<Scalar>& z, std::size_t layer, const ViTModel<Scalar>& model,
                                    const BasicTensor<Scalar>* extra_shared_bias = nullptr);

template <class Scalar>
BasicTensor<Scalar> mlp_layer(const BasicTensor<Scalar>& z, std::size_t layer, const ViTModel<Scalar>& model);

template <class Scalar>
struct ForwardOutput {
  BasicTensor<Scalar> features;  // y, [N x D]
  BasicTensor<Scalar> logits;    // [num_classes]
};

template <class Scalar>
ForwardOutput<Scalar> forward(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model);

}  // namespace gabvit
