#pragma once

#include <string>
#include <vector>

#include "hmhi/config.hpp"
#include "hmhi/gradcheck.hpp"

namespace hmhi {

struct BlockCheck {
  std::string block;
  GradCheckReport report;
  double seconds = 0.0;
};

/// Small model used for gradient checks: side 32, channels [4, 8, 16, 32],
/// N = 2, L = 3.
RunConfig toy_gradcheck_config();

struct GradSuiteOptions {
  GradCheckOptions check;
  // Entry sample size per tensor for the full model; blocks check every entry.
  std::size_t full_model_entries = 24;
  bool include_full_model = true;
};

/// Central-difference checks of every building block and of the full model
/// (mean combined loss over an L-frame synthetic clip) under `config`.
std::vector<BlockCheck> run_gradcheck_suite(const RunConfig& config, const GradSuiteOptions& options);

}  // namespace hmhi
