#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hmhi/tensor.hpp"

namespace hmhi {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Differences below this are finite-difference roundoff (about
  // 1e-16 * |loss| / eps) and pass regardless of the relative error. Needed for
  // parameters whose true gradient is zero but which still perturb the loss at
  // roundoff level, e.g. key biases under softmax shift invariance.
  double abs_tol = 1e-9;
  // 0 checks every entry; otherwise a seeded sample of at most this many
  // entries per parameter tensor.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  // An entry whose central difference disagrees with the tape and whose
  // forward and backward differences disagree with each other by at least as
  // much has a relu/max kink inside [x - eps, x + eps]; it is re-measured with
  // the step scaled by kink_refine, up to three times. A wrong gradient still
  // disagrees after refinement.
  double kink_refine = 0.1;
  // Negative control: added to the first checked analytic entry of the first
  // parameter before comparison.
  double inject_error = 0.0;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_abs_diff = 0.0;
  double max_abs_numeric = 0.0;
  // max |analytic - numeric| / (max |numeric| + 1e-12) over checked entries.
  double rel_error = 0.0;
  std::size_t refined = 0;  // entries re-measured at the smaller step
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  // Over tensors that did not pass on abs_tol alone.
  double worst_rel_error = 0.0;
  std::string worst_param;

  std::size_t entries() const;
  std::size_t refined() const;

  bool passed() const;
  std::vector<ParamCheck> failures() const;
};

/// Central-difference derivative of `loss_fn` w.r.t. one entry of `param`.
double numeric_derivative(const std::function<Tensor()>& loss_fn, Tensor& param, std::size_t index, double eps);

/// Compares tape gradients of `loss_fn` against central differences. The
/// function must rebuild its graph from the current parameter values on every
/// call and be deterministic.
GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<NamedParam> params,
                                        const GradCheckOptions& options = {});

}  // namespace hmhi
