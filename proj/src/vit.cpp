#include "gabvit/vit.hpp"

#include "init.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gabvit {

std::size_t ViTConfig::mlp_hidden() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(embed_dim) * mlp_ratio)));
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid ViT config: " + msg); };
  if (image_height == 0 || image_width == 0) fail("image dimensions must be positive");
  if (channels == 0) fail("channels must be positive");
  if (patch_size == 0) fail("patch_size must be positive");
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    fail("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
         " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  if (num_classes == 0) fail("num_classes must be positive");
  if (rpe_kind == RpeKind::relposmlp && rpe_hidden == 0) fail("rpe_hidden must be positive");
  if (!(layernorm_eps > 0.0)) fail("layernorm_eps must be positive");
}

namespace {

std::string block_name(std::size_t layer, std::string_view leaf) {
  return "blocks." + std::to_string(layer) + "." + std::string(leaf);
}

}  // namespace

template <class Scalar>
ViTModel<Scalar>::ViTModel(const ViTConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  const std::size_t n = config_.num_patches();
  const std::size_t hidden = config_.mlp_hidden();
  using detail::fan_in_stddev;
  using detail::normal_parameter;
  auto ones = [](std::size_t len) { return BasicTensor<Scalar>::full({len}, Scalar(1), true); };
  auto zeros = [](Shape shape) { return BasicTensor<Scalar>::zeros(std::move(shape), true); };

  patch_projection = normal_parameter<Scalar>({config_.patch_dim(), d}, fan_in_stddev(config_.patch_dim()), seed,
                                              "patch_projection");
  if (config_.use_ape) ape = normal_parameter<Scalar>({n, d}, 0.02, seed, "ape");

  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    BlockWeights<Scalar> b;
    b.norm1_gain = ones(d);
    b.norm1_bias = zeros({d});
    b.query = normal_parameter<Scalar>({d, d}, fan_in_stddev(d), seed, block_name(l, "attn.query"));
    b.key = normal_parameter<Scalar>({d, d}, fan_in_stddev(d), seed, block_name(l, "attn.key"));
    b.value = normal_parameter<Scalar>({d, d}, fan_in_stddev(d), seed, block_name(l, "attn.value"));
    b.output = normal_parameter<Scalar>({d, d}, fan_in_stddev(d), seed, block_name(l, "attn.output"));
    b.norm2_gain = ones(d);
    b.norm2_bias = zeros({d});
    b.fc1_weight = normal_parameter<Scalar>({d, hidden}, fan_in_stddev(d), seed, block_name(l, "mlp.fc1_weight"));
    b.fc1_bias = zeros({hidden});
    b.fc2_weight = normal_parameter<Scalar>({hidden, d}, fan_in_stddev(hidden), seed, block_name(l, "mlp.fc2_weight"));
    b.fc2_bias = zeros({d});
    blocks.push_back(std::move(b));
  }
  if (config_.rpe_kind != RpeKind::none) {
    rpe.emplace(config_.rpe_kind, config_.num_layers, config_.num_heads, config_.grid_h(), config_.grid_w(),
                config_.rpe_hidden, seed);
  }
  if (config_.use_gab) gab.emplace(config_.num_layers, config_.grid_h(), config_.grid_w());

  final_gain = ones(d);
  final_bias = zeros({d});
  head = normal_parameter<Scalar>({d, config_.num_classes}, fan_in_stddev(d), seed, "head");
}

template <class Scalar>
NamedTensors<Scalar> ViTModel<Scalar>::named_parameters() const {
  NamedTensors<Scalar> out;
  out.emplace_back("patch_projection", patch_projection);
  if (ape) out.emplace_back("ape", *ape);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    out.emplace_back(block_name(l, "norm1.gain"), b.norm1_gain);
    out.emplace_back(block_name(l, "norm1.bias"), b.norm1_bias);
    out.emplace_back(block_name(l, "attn.query"), b.query);
    out.emplace_back(block_name(l, "attn.key"), b.key);
    out.emplace_back(block_name(l, "attn.value"), b.value);
    out.emplace_back(block_name(l, "attn.output"), b.output);
    out.emplace_back(block_name(l, "norm2.gain"), b.norm2_gain);
    out.emplace_back(block_name(l, "norm2.bias"), b.norm2_bias);
    out.emplace_back(block_name(l, "mlp.fc1_weight"), b.fc1_weight);
    out.emplace_back(block_name(l, "mlp.fc1_bias"), b.fc1_bias);
    out.emplace_back(block_name(l, "mlp.fc2_weight"), b.fc2_weight);
    out.emplace_back(block_name(l, "mlp.fc2_bias"), b.fc2_bias);
  }
  if (rpe) {
    for (auto& p : rpe->named_parameters()) out.push_back(std::move(p));
  }
  if (gab) {
    for (auto& p : gab->named_parameters()) out.push_back(std::move(p));
  }
  out.emplace_back("final_norm.gain", final_gain);
  out.emplace_back("final_norm.bias", final_bias);
  out.emplace_back("head", head);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

template <class Scalar>
std::size_t ViTModel<Scalar>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.numel();
  return total;
}

template <class Scalar>
void ViTModel<Scalar>::zero_grad() const {
  for (auto& [name, t] : named_parameters()) {
    auto copy = t;
    copy.zero_grad();
  }
}

IndexList patch_partition_indices(const ViTConfig& config) {
  const std::size_t p = config.patch_size, c = config.channels, w = config.image_width;
  const std::size_t gw = config.grid_w();
  std::vector<std::size_t> idx;
  idx.reserve(config.num_patches() * config.patch_dim());
  for (std::size_t n = 0; n < config.num_patches(); ++n) {
    const std::size_t bi = n / gw, bj = n % gw;
    for (std::size_t pi = 0; pi < p; ++pi) {
      for (std::size_t pj = 0; pj < p; ++pj) {
        for (std::size_t ch = 0; ch < c; ++ch) idx.push_back(((bi * p + pi) * w + (bj * p + pj)) * c + ch);
      }
    }
  }
  return make_indices(std::move(idx));
}

template <class Scalar>
BasicTensor<Scalar> patch_embed(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model) {
  const auto& cfg = model.config();
  const Shape expected{cfg.image_height, cfg.image_width, cfg.channels};
  if (image.shape() != expected) {
    throw ShapeError("patch_embed: image " + shape_string(image.shape()) + " does not match config " +
                     shape_string(expected));
  }
  auto patches = gather(image, patch_partition_indices(cfg), {cfg.num_patches(), cfg.patch_dim()});
  auto tokens = matmul(patches, model.patch_projection);
  if (model.ape) tokens = add(tokens, *model.ape);
  return tokens;
}

template <class Scalar>
BasicTensor<Scalar> multi_head_attention(const BasicTensor<Scalar>& x, const BlockWeights<Scalar>& weights,
                                         std::size_t num_heads, Scalar scale, AttentionBias<Scalar> bias) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (num_heads == 0 || d % num_heads != 0) throw ShapeError("multi_head_attention: bad head count");
  if (bias.per_head && bias.per_head->shape() != Shape{num_heads, n, n}) {
    throw ShapeError("multi_head_attention: per-head bias " + shape_string(bias.per_head->shape()) +
                     " must be " + shape_string({num_heads, n, n}));
  }
  if (bias.shared && bias.shared->shape() != Shape{n, n}) {
    throw ShapeError("multi_head_attention: shared bias " + shape_string(bias.shared->shape()) + " must be " +
                     shape_string({n, n}));
  }
  const std::size_t dh = d / num_heads;
  auto q = matmul(x, weights.query);
  auto k = matmul(x, weights.key);
  auto v = matmul(x, weights.value);

  BasicTensor<Scalar> out;
  for (std::size_t h = 0; h < num_heads; ++h) {
    auto qh = select_columns(q, h * dh, dh);
    auto kh = select_columns(k, h * dh, dh);
    auto vh = select_columns(v, h * dh, dh);
    auto logits = mul_scalar(matmul(qh, transpose_last_two(kh)), scale);
    if (bias.per_head) logits = add(logits, select_leading(*bias.per_head, h));
    if (bias.shared) logits = add(logits, *bias.shared);
    auto heads_out = matmul(softmax_lastdim(logits), vh);
    // Summing per-head projections equals projecting the concatenated heads.
    auto projected = matmul(heads_out, select_rows(weights.output, h * dh, dh));
    out = out.defined() ? add(out, projected) : projected;
  }
  return out;
}

template <class Scalar>
BasicTensor<Scalar> attention_layer(const BasicTensor<Scalar>& z, std::size_t layer, const ViTModel<Scalar>& model,
                                    const BasicTensor<Scalar>* extra_shared_bias) {
  const auto& cfg = model.config();
  if (layer >= model.blocks.size()) throw std::out_of_range("attention_layer: layer out of range");
  const auto& w = model.blocks[layer];
  const auto eps = static_cast<Scalar>(cfg.layernorm_eps);
  auto x = layernorm(z, w.norm1_gain, w.norm1_bias, eps);

  BasicTensor<Scalar> per_head, shared;
  if (model.rpe) per_head = model.rpe->materialize_bias(layer);
  if (model.gab) shared = gab_bias(*model.gab, layer);
  if (extra_shared_bias) shared = shared.defined() ? add(shared, *extra_shared_bias) : *extra_shared_bias;

  AttentionBias<Scalar> bias;
  if (per_head.defined()) bias.per_head = &per_head;
  if (shared.defined()) bias.shared = &shared;
  // Scaled by the full embedding width, not the per-head width.
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(cfg.embed_dim));
  return add(z, multi_head_attention(x, w, cfg.num_heads, scale, bias));
}

template <class Scalar>
BasicTensor<Scalar> mlp_layer(const BasicTensor<Scalar>& z, std::size_t layer, const ViTModel<Scalar>& model) {
  const auto& w = model.blocks.at(layer);
  auto x = layernorm(z, w.norm2_gain, w.norm2_bias, static_cast<Scalar>(model.config().layernorm_eps));
  auto h = gelu(linear(x, w.fc1_weight, &w.fc1_bias));
  return add(z, linear(h, w.fc2_weight, &w.fc2_bias));
}

template <class Scalar>
ForwardOutput<Scalar> forward(const BasicTensor<Scalar>& image, const ViTModel<Scalar>& model) {
  const auto& cfg = model.config();
  auto z = patch_embed(image, model);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    z = attention_layer(z, l, model);
    z = mlp_layer(z, l, model);
  }
  auto y = layernorm(z, model.final_gain, model.final_bias, static_cast<Scalar>(cfg.layernorm_eps));
  auto pooled = reshape(mean_over_dim(y, 0), {1, cfg.embed_dim});
  auto logits = reshape(matmul(pooled, model.head), {cfg.num_classes});
  return {y, logits};
}

#define GABVIT_INSTANTIATE_VIT(S)                                                                          \
  template class ViTModel<S>;                                                                              \
  template BasicTensor<S> patch_embed(const BasicTensor<S>&, const ViTModel<S>&);                          \
  template BasicTensor<S> multi_head_attention(const BasicTensor<S>&, const BlockWeights<S>&, std::size_t, \
                                               S, AttentionBias<S>);                                       \
  template BasicTensor<S> attention_layer(const BasicTensor<S>&, std::size_t, const ViTModel<S>&,          \
                                          const BasicTensor<S>*);                                          \
  template BasicTensor<S> mlp_layer(const BasicTensor<S>&, std::size_t, const ViTModel<S>&);               \
  template ForwardOutput<S> forward(const BasicTensor<S>&, const ViTModel<S>&);

GABVIT_INSTANTIATE_VIT(float)
GABVIT_INSTANTIATE_VIT(double)

#undef GABVIT_INSTANTIATE_VIT

}  // namespace gabvit
