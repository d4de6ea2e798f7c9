#pragma once

#include "gabvit/vit.hpp"

#include <stdexcept>
#include <string>

namespace gabvit {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout:
///   GABVIT-CHECKPOINT <version>
///   config <key=value ...>
///   <name> <dims...> <byte offset>      one line per tensor, sorted by name
///   <blank line>
///   <little-endian float32 payload>
void save_checkpoint(const ViTModel<float>& model, const std::string& path);
std::string serialize_checkpoint(const ViTModel<float>& model);

/// Rebuilds the model from the stored config.
ViTModel<float> load_checkpoint(const std::string& path);
ViTModel<float> parse_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>");

/// As above, but first checks the stored tensors against `expected`.
ViTModel<float> load_checkpoint(const std::string& path, const ViTConfig& expected);

}  // namespace gabvit
