#include "gabvit/checkpoint.hpp"

#include "gabvit/config_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gabvit {

namespace {

constexpr std::string_view kMagic = "GABVIT-CHECKPOINT";

void put_le(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

struct Entry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

void check_names(const std::vector<Entry>& entries, const NamedTensors<float>& params, const std::string& source) {
  std::set<std::string> stored, wanted;
  for (const auto& e : entries) stored.insert(e.name);
  for (const auto& p : params) wanted.insert(p.first);
  std::vector<std::string> unexpected, missing;
  for (const auto& n : stored) {
    if (!wanted.count(n)) unexpected.push_back(n);
  }
  for (const auto& n : wanted) {
    if (!stored.count(n)) missing.push_back(n);
  }
  if (unexpected.empty() && missing.empty()) return;
  std::string msg = source + ": checkpoint does not match the model config";
  if (!unexpected.empty()) msg += "; unexpected tensors: " + join(unexpected);
  if (!missing.empty()) msg += "; missing tensors: " + join(missing);
  throw CheckpointError(msg);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Parsed {
  ViTConfig config;
  std::vector<Entry> entries;
  std::string_view payload;
};

Parsed parse_header(const std::string& bytes, const std::string& source) {
  Parsed parsed;
  std::size_t pos = 0;
  const auto next_line = [&](std::string& line) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError(source + ": header ends before the blank separator line");
    line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
  };

  std::string line;
  next_line(line);
  {
    std::istringstream in(line);
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != kMagic) throw CheckpointError(source + ": not a checkpoint file");
    if (version != kCheckpointVersion) {
      throw CheckpointError(source + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
  }
  next_line(line);
  if (line.rfind("config ", 0) != 0) throw CheckpointError(source + ": missing config line");
  try {
    parsed.config = parse_model_config(line.substr(7));
  } catch (const std::exception& e) {
    throw CheckpointError(source + ": bad config line: " + e.what());
  }

  std::size_t expected_offset = 0;
  for (next_line(line); !line.empty(); next_line(line)) {
    std::istringstream in(line);
    std::vector<std::string> tokens;
    for (std::string t; in >> t;) tokens.push_back(t);
    if (tokens.size() < 2) throw CheckpointError(source + ": malformed manifest line '" + line + "'");
    Entry e;
    e.name = tokens.front();
    try {
      for (std::size_t i = 1; i + 1 < tokens.size(); ++i) e.shape.push_back(std::stoull(tokens[i]));
      e.offset = std::stoull(tokens.back());
    } catch (const std::exception&) {
      throw CheckpointError(source + ": malformed manifest line '" + line + "'");
    }
    if (!parsed.entries.empty() && !(parsed.entries.back().name < e.name)) {
      throw CheckpointError(source + ": manifest names must be unique and sorted (at '" + e.name + "')");
    }
    if (e.offset != expected_offset) {
      throw CheckpointError(source + ": tensor '" + e.name + "' has offset " + std::to_string(e.offset) +
                            ", expected " + std::to_string(expected_offset));
    }
    expected_offset += 4 * shape_numel(e.shape);
    parsed.entries.push_back(std::move(e));
  }
  parsed.payload = std::string_view(bytes).substr(pos);

  for (const auto& e : parsed.entries) {
    if (e.offset + 4 * shape_numel(e.shape) > parsed.payload.size()) {
      throw CheckpointError(source + ": payload truncated: tensor '" + e.name + "' needs bytes [" +
                            std::to_string(e.offset) + ", " + std::to_string(e.offset + 4 * shape_numel(e.shape)) +
                            ") but the payload has " + std::to_string(parsed.payload.size()));
    }
  }
  if (parsed.payload.size() != expected_offset) {
    throw CheckpointError(source + ": payload has " + std::to_string(parsed.payload.size()) +
                          " bytes but the manifest describes " + std::to_string(expected_offset));
  }
  return parsed;
}

ViTModel<float> build(const Parsed& parsed, const std::string& source) {
  ViTModel<float> model(parsed.config, 0);
  auto params = model.named_parameters();
  check_names(parsed.entries, params, source);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = parsed.entries[i];
    auto& t = params[i].second;
    if (e.shape != t.shape()) {
      throw CheckpointError(source + ": tensor '" + e.name + "' has shape " + shape_string(e.shape) +
                            " but the config requires " + shape_string(t.shape()));
    }
    auto& data = t.mutable_data();
    const char* p = parsed.payload.data() + e.offset;
    for (Eigen::Index k = 0; k < data.size(); ++k) data[k] = get_le(p + 4 * k);
  }
  return model;
}

}  // namespace

std::string serialize_checkpoint(const ViTModel<float>& model) {
  std::string header = std::string(kMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  header += "config " + format_model_config(model.config()) + "\n";
  std::string payload;
  for (const auto& [name, t] : model.named_parameters()) {
    header += name;
    for (auto d : t.shape()) header += " " + std::to_string(d);
    header += " " + std::to_string(payload.size()) + "\n";
    for (Eigen::Index k = 0; k < t.data().size(); ++k) put_le(payload, t.data()[k]);
  }
  return header + "\n" + payload;
}

void save_checkpoint(const ViTModel<float>& model, const std::string& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

ViTModel<float> parse_checkpoint(const std::string& bytes, const std::string& source) {
  return build(parse_header(bytes, source), source);
}

ViTModel<float> load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path), path); }

ViTModel<float> load_checkpoint(const std::string& path, const ViTConfig& expected) {
  const auto bytes = read_file(path);
  const auto parsed = parse_header(bytes, path);
  const auto wanted = ViTModel<float>(expected, 0).named_parameters();
  check_names(parsed.entries, wanted, path);
  for (std::size_t i = 0; i < wanted.size(); ++i) {
    if (parsed.entries[i].shape != wanted[i].second.shape()) {
      throw CheckpointError(path + ": tensor '" + wanted[i].first + "' has shape " +
                            shape_string(parsed.entries[i].shape) + " but the expected config requires " +
                            shape_string(wanted[i].second.shape()));
    }
  }
  if (!(parsed.config == expected)) {
    throw CheckpointError(path + ": stored config '" + format_model_config(parsed.config) +
                          "' differs from the expected '" + format_model_config(expected) + "'");
  }
  return build(parsed, path);
}

}  // namespace gabvit
