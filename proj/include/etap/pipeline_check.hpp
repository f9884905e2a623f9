#pragma once

#include "etap/grad_check.hpp"
#include "etap/model_config.hpp"

namespace etap {

/// Full-pipeline gradient check: heatmaps -> model -> total_loss, analytic
/// 64-bit gradient against central differences in extended precision.
struct PipelineCheckConfig {
  std::string preset = "tiny";
  std::string skeleton = "fork4";
  bool propagation = true;
  std::size_t seeds = 20;
  std::uint64_t first_seed = 1;
  std::size_t coords_per_tensor = 4;
  double step = 1e-5;
  /// Samples used for the output normalization; seed i checks sample i mod this.
  std::size_t norm_samples = 64;
  /// Also run the same check with a pure 64-bit difference quotient.
  bool pure64 = false;
  /// Leave out coordinates whose difference straddles a relu kink.
  bool skip_kinks = true;
};

struct PipelineCheckReport {
  std::vector<GradCheckReport> per_seed;
  std::vector<GradCheckReport> pure_per_seed;
  double max_rel_error = 0.0;
  double pure_max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_skipped = 0;
  std::size_t worst_seed = 0;
};

PipelineCheckReport pipeline_grad_check(const PipelineCheckConfig& cfg);

nlohmann::json to_json(const PipelineCheckConfig& c);

}  // namespace etap
