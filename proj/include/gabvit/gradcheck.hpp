#pragma once

#include "gabvit/vit.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gabvit {

struct GradTolerance {
  double step = 1e-3;  // central difference step, applied in float64
  double rtol = 1e-3;
  double atol = 1e-5;
};

struct AuditResult {
  std::string name;
  std::size_t checked = 0;  // gradient entries compared
  double max_abs_error = 0;
  // max |analytic - fd| / (|fd| + atol / rtol); passes when <= rtol, which is
  // the same as |analytic - fd| <= atol + rtol |fd|.
  double max_rel_error = 0;
  bool passed = false;
};

/// One check: float32 analytic gradients from the tape against float64
/// central differences of the same function at the same (float-rounded) point.
struct GradAudit {
  std::string name;
  std::function<AuditResult(std::uint64_t seed, const GradTolerance&)> run;
};

/// One audit per entry of kEngineOps, plus gaussian_table.
std::vector<GradAudit> op_audits();

/// d loss / d A_l and d loss / d sigma_l for every layer (when the config has
/// the Gaussian bias) and d Y / d x for the central patch.
std::vector<GradAudit> model_audits(const ViTConfig& config);

struct GradcheckReport {
  std::vector<AuditResult> results;
  bool passed() const;
};

inline constexpr std::size_t kGradcheckSizeBound = 4096;

/// Rejects configs with num_patches * embed_dim above kGradcheckSizeBound.
GradcheckReport run_gradcheck(const ViTConfig& config, std::uint64_t seed,
                              const std::vector<GradAudit>& extra = {}, const GradTolerance& tolerance = {});

/// Compares an analytic gradient with a finite-difference one.
AuditResult compare_gradients(std::string name, const Eigen::ArrayXd& analytic, const Eigen::ArrayXd& numeric,
                              const GradTolerance& tolerance);

}  // namespace gabvit
