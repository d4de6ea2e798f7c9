#include "gabvit/config_io.hpp"

#include <charconv>
#include <fstream>
#include <algorithm>
#include <map>
#include <optional>
#include <sstream>

namespace gabvit {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Applies one model key; returns false if the key is not a model key.
bool apply_model_key(ViTConfig& m, const std::string& key, const std::string& value) {
  if (key == "image_height") m.image_height = to_size(value);
  else if (key == "image_width") m.image_width = to_size(value);
  else if (key == "channels") m.channels = to_size(value);
  else if (key == "patch_size") m.patch_size = to_size(value);
  else if (key == "embed_dim") m.embed_dim = to_size(value);
  else if (key == "num_layers") m.num_layers = to_size(value);
  else if (key == "num_heads") m.num_heads = to_size(value);
  else if (key == "mlp_ratio") m.mlp_ratio = to_double(value);
  else if (key == "num_classes") m.num_classes = to_size(value);
  else if (key == "rpe") m.rpe_kind = parse_rpe_kind(value);
  else if (key == "ape") m.use_ape = to_bool(value);
  else if (key == "gab") m.use_gab = to_bool(value);
  else if (key == "rpe_hidden") m.rpe_hidden = to_size(value);
  else if (key == "layernorm_eps") m.layernorm_eps = to_double(value);
  else return false;
  return true;
}

}  // namespace

ViTConfig ExperimentConfig::default_model() {
  ViTConfig m;
  m.use_ape = true;
  m.rpe_kind = RpeKind::relposmlp;
  m.use_gab = true;
  return m;
}

ConfigError::ConfigError(std::string source, std::size_t line, const std::string& message)
    : std::invalid_argument(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  std::optional<std::uint64_t> seed, model_seed, data_seed;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source, line_no, "missing key before '='");
    if (value.empty()) throw ConfigError(source, line_no, "missing value for '" + key + "'");
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(source, line_no, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    }
    try {
      if (apply_model_key(cfg.model, key, value)) continue;
      auto& t = cfg.train;
      auto& d = cfg.data;
      if (key == "steps") t.steps = to_size(value);
      else if (key == "batch_size") t.batch_size = to_size(value);
      else if (key == "learning_rate") t.learning_rate = to_double(value);
      else if (key == "optimizer") t.optimizer = parse_optimizer_kind(value);
      else if (key == "momentum") t.momentum = to_double(value);
      else if (key == "beta1") t.beta1 = to_double(value);
      else if (key == "beta2") t.beta2 = to_double(value);
      else if (key == "adam_epsilon") t.adam_epsilon = to_double(value);
      else if (key == "weight_decay") t.weight_decay = to_double(value);
      else if (key == "clip_norm") t.clip_norm = to_double(value);
      else if (key == "frozen") t.frozen = to_list(value);
      else if (key == "blob_radius") d.blob_radius = to_double(value);
      else if (key == "samples_per_epoch") d.samples_per_epoch = to_size(value);
      else if (key == "seed") seed = to_u64(value);
      else if (key == "model_seed") model_seed = to_u64(value);
      else if (key == "data_seed") data_seed = to_u64(value);
      else throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(source, line_no, key + ": " + e.what());
    }
  }

  const std::uint64_t base = seed.value_or(0);
  cfg.model_seed = model_seed.value_or(base);
  cfg.data.seed = data_seed.value_or(base);
  cfg.train.seed = base;
  cfg.data.height = cfg.model.image_height;
  cfg.data.width = cfg.model.image_width;
  cfg.data.channels = cfg.model.channels;
  cfg.data.num_classes = cfg.model.num_classes;

  // Cross-field checks point at the line that set the offending key, or 0.
  const auto where = [&](std::initializer_list<const char*> keys) {
    std::size_t best = 0;
    for (const char* k : keys) {
      if (auto it = seen.find(k); it != seen.end()) best = std::max(best, it->second);
    }
    return best;
  };
  try {
    cfg.model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(source, where({"image_height", "image_width", "channels", "patch_size", "embed_dim",
                                     "num_layers", "num_heads", "mlp_ratio", "num_classes", "rpe_hidden",
                                     "layernorm_eps"}),
                      e.what());
  }
  try {
    cfg.data.validate();
  } catch (const std::exception& e) {
    throw ConfigError(source, where({"num_classes", "blob_radius", "samples_per_epoch"}), e.what());
  }
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(source, where({"batch_size", "learning_rate", "momentum", "beta1", "beta2", "adam_epsilon",
                                     "weight_decay", "clip_norm"}),
                      e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path);
}

std::string format_model_config(const ViTConfig& m) {
  std::ostringstream out;
  out.precision(17);
  out << "image_height=" << m.image_height << " image_width=" << m.image_width << " channels=" << m.channels
      << " patch_size=" << m.patch_size << " embed_dim=" << m.embed_dim << " num_layers=" << m.num_layers
      << " num_heads=" << m.num_heads << " mlp_ratio=" << m.mlp_ratio << " num_classes=" << m.num_classes
      << " rpe=" << to_string(m.rpe_kind) << " ape=" << (m.use_ape ? "true" : "false")
      << " gab=" << (m.use_gab ? "true" : "false") << " rpe_hidden=" << m.rpe_hidden
      << " layernorm_eps=" << m.layernorm_eps;
  return out.str();
}

ViTConfig parse_model_config(const std::string& line) {
  ViTConfig m;
  std::istringstream in(line);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed config token '" + token + "'");
    const std::string key = token.substr(0, eq);
    if (!apply_model_key(m, key, token.substr(eq + 1))) {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  m.validate();
  return m;
}

}  // namespace gabvit
