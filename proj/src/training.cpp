#include "gabvit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

namespace gabvit {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adaptive_moments";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (text == "adaptive_moments") return OptimizerKind::adaptive_moments;
  throw std::invalid_argument("unknown optimizer '" + std::string(text) +
                              "' (expected sgd_momentum or adaptive_moments)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("betas must be in [0, 1)");
  if (!(adam_epsilon > 0)) throw std::invalid_argument("adam_epsilon must be > 0");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(clip_norm >= 0)) throw std::invalid_argument("clip_norm must be >= 0");
}

TrainingDiverged::TrainingDiverged(std::size_t step, double loss)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": loss is " + std::to_string(loss)),
      step_(step) {}

double clip_gradients(const std::vector<Tensor>& params, double max_norm) {
  double total = 0;
  for (const auto& p : params) {
    if (p.has_grad()) total += p.grad().template cast<double>().square().sum();
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0 && norm > max_norm) {
    const float scale = static_cast<float>(max_norm / (norm + 1e-12));
    for (const auto& p : params) {
      if (p.has_grad()) p.storage().grad *= scale;
    }
  }
  return norm;
}

namespace {

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const std::vector<Tensor>& params) : config_(config) {
    for (const auto& p : params) {
      first_.push_back(Tensor::Array::Zero(p.data().size()));
      second_.push_back(Tensor::Array::Zero(p.data().size()));
    }
  }

  void step(const std::vector<Tensor>& params) {
    ++t_;
    const float lr = static_cast<float>(config_.learning_rate);
    const float decay = static_cast<float>(config_.learning_rate * config_.weight_decay);
    const double bc1 = 1 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i];
      if (!p.has_grad()) continue;
      auto& data = p.mutable_data();
      const auto& g = p.grad();
      if (decay != 0) data -= decay * data;
      if (config_.optimizer == OptimizerKind::sgd_momentum) {
        first_[i] = static_cast<float>(config_.momentum) * first_[i] + g;
        data -= lr * first_[i];
      } else {
        const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
        first_[i] = b1 * first_[i] + (1 - b1) * g;
        second_[i] = b2 * second_[i] + (1 - b2) * g.square();
        const Tensor::Array m_hat = first_[i] / static_cast<float>(bc1);
        const Tensor::Array v_hat = second_[i] / static_cast<float>(bc2);
        data -= lr * m_hat / (v_hat.sqrt() + static_cast<float>(config_.adam_epsilon));
      }
    }
  }

 private:
  const TrainConfig& config_;
  std::vector<Tensor::Array> first_, second_;
  std::size_t t_ = 0;
};

std::vector<std::pair<double, double>> gab_snapshot(const ViTModel<float>& model) {
  std::vector<std::pair<double, double>> out;
  if (!model.gab) return out;
  for (std::size_t l = 0; l < model.gab->num_layers(); ++l) {
    out.emplace_back(model.gab->amplitude(l).item(), model.gab->width(l).item());
  }
  return out;
}

}  // namespace

TrainResult train(ViTModel<float>& model, const SyntheticLocalityDataset& dataset, const TrainConfig& config,
                  const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  dataset.validate();
  const auto& mc = model.config();
  if (mc.image_height != dataset.height || mc.image_width != dataset.width || mc.channels != dataset.channels) {
    throw std::invalid_argument("model input " + std::to_string(mc.image_height) + "x" +
                                std::to_string(mc.image_width) + "x" + std::to_string(mc.channels) +
                                " does not match dataset " + std::to_string(dataset.height) + "x" +
                                std::to_string(dataset.width) + "x" + std::to_string(dataset.channels));
  }
  if (mc.num_classes != dataset.num_classes) throw std::invalid_argument("model and dataset class counts differ");

  const std::unordered_set<std::string> frozen(config.frozen.begin(), config.frozen.end());
  std::vector<Tensor> trainable;
  std::size_t matched = 0;
  for (const auto& [name, tensor] : model.named_parameters()) {
    if (frozen.count(name)) {
      ++matched;
    } else {
      trainable.push_back(tensor);
    }
  }
  if (matched != frozen.size()) throw std::invalid_argument("frozen list names a parameter the model does not have");

  Optimizer optimizer(config, trainable);
  TrainResult result;
  const float inv_batch = 1.0f / static_cast<float>(config.batch_size);
  for (std::size_t step = 0; step < config.steps; ++step) {
    TapeScope scope;
    model.zero_grad();
    Tensor loss;
    try {
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        const auto index = (step * config.batch_size + b) % dataset.samples_per_epoch;
        const auto sample = generate_sample(dataset, index);
        auto term = cross_entropy(forward(sample.image, model).logits, sample.label);
        loss = loss.defined() ? add(loss, term) : term;
      }
    } catch (const std::domain_error&) {
      // Non-finite attention logits: the parameters have already blown up.
      throw TrainingDiverged(step + 1, std::nan(""));
    }
    loss = mul_scalar(loss, inv_batch);
    const double value = loss.item();
    if (!std::isfinite(value)) throw TrainingDiverged(step + 1, value);

    backward(loss, std::span<const Tensor>(trainable));
    clip_gradients(trainable, config.clip_norm);
    optimizer.step(trainable);

    StepRecord record{step + 1, value, gab_snapshot(model)};
    if (on_step) on_step(record);
    result.history.push_back(std::move(record));
  }
  model.zero_grad();
  return result;
}

double evaluate_accuracy(const ViTModel<float>& model, const SyntheticLocalityDataset& dataset, std::uint64_t first,
                         std::size_t count) {
  if (count == 0) throw std::invalid_argument("evaluate_accuracy: count must be >= 1");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto sample = generate_sample(dataset, first + i);
    const auto logits = forward(sample.image, model).logits;
    Eigen::Index best = 0;
    logits.data().maxCoeff(&best);
    if (static_cast<std::size_t>(best) == sample.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(count);
}

std::string loss_curve_csv(const TrainResult& result, std::size_t num_gab_layers) {
  std::string out = "step,loss";
  for (std::size_t l = 0; l < num_gab_layers; ++l) {
    out += ",A_" + std::to_string(l) + ",sigma_" + std::to_string(l);
  }
  out += '\n';
  char buf[64];
  for (const auto& r : result.history) {
    out += std::to_string(r.step);
    std::snprintf(buf, sizeof buf, ",%.9g", r.loss);
    out += buf;
    for (const auto& [a, s] : r.gab) {
      std::snprintf(buf, sizeof buf, ",%.9g,%.9g", a, s);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace gabvit
