#include "hmhi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hmhi {

bool GradCheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
}

std::vector<ParamCheck> GradCheckReport::failures() const {
  std::vector<ParamCheck> out;
  std::copy_if(params.begin(), params.end(), std::back_inserter(out), [](const ParamCheck& p) { return !p.passed; });
  return out;
}

std::size_t GradCheckReport::entries() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.checked;
  return n;
}

std::size_t GradCheckReport::refined() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.refined;
  return n;
}

double numeric_derivative(const std::function<Tensor()>& loss_fn, Tensor& param, std::size_t index, double eps) {
  NoGradGuard no_grad;
  auto values = param.mutable_data();
  const double original = values[index];
  values[index] = original + eps;
  const double up = loss_fn().item();
  values[index] = original - eps;
  const double down = loss_fn().item();
  values[index] = original;
  return (up - down) / (2.0 * eps);
}

namespace {

double one_sided(const std::function<Tensor()>& loss_fn, Tensor& param, std::size_t index, double step) {
  NoGradGuard no_grad;
  auto values = param.mutable_data();
  const double original = values[index];
  const double base = loss_fn().item();
  values[index] = original + step;
  const double moved = loss_fn().item();
  values[index] = original;
  return (moved - base) / step;
}

}  // namespace

GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<NamedParam> params,
                                        const GradCheckOptions& options) {
  for (auto& p : params) {
    p.tensor.zero_grad();
    if (!p.tensor.requires_grad()) p.tensor.set_requires_grad(true);
  }
  loss_fn().backward();

  GradCheckReport report;
  Rng sampler(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, tensor] = params[pi];
    const std::size_t n = tensor.numel();
    std::vector<std::size_t> indices(n);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries_per_param > 0 && n > options.max_entries_per_param) {
      Rng local = sampler.fork(pi);
      local.shuffle(std::span<std::size_t>(indices));
      indices.resize(options.max_entries_per_param);
      std::sort(indices.begin(), indices.end());
    }
    std::vector<double> analytic(n, 0.0);
    if (tensor.has_grad()) {
      auto g = tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }

    ParamCheck check;
    check.name = name;
    check.checked = indices.size();
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const std::size_t idx = indices[j];
      double a = analytic[idx];
      if (pi == 0 && j == 0) a += options.inject_error;
      double step = options.eps;
      double num = numeric_derivative(loss_fn, tensor, idx, step);
      for (int attempt = 0; attempt < 3; ++attempt) {
        const double diff = std::abs(a - num);
        if (diff <= options.abs_tol || diff <= options.tol * std::max(std::abs(num), std::abs(a))) break;
        const double forward = one_sided(loss_fn, tensor, idx, step);
        const double backward = one_sided(loss_fn, tensor, idx, -step);
        if (std::abs(forward - backward) < diff) break;
        if (attempt == 0) ++check.refined;
        step *= options.kink_refine;
        num = numeric_derivative(loss_fn, tensor, idx, step);
      }
      check.max_abs_diff = std::max(check.max_abs_diff, std::abs(a - num));
      check.max_abs_numeric = std::max(check.max_abs_numeric, std::abs(num));
    }
    check.rel_error = check.max_abs_diff / (check.max_abs_numeric + 1e-12);
    check.passed = check.rel_error < options.tol || check.max_abs_diff < options.abs_tol;
    const bool abs_only = check.rel_error >= options.tol && check.max_abs_diff < options.abs_tol;
    if (!abs_only && check.rel_error >= report.worst_rel_error) {
      report.worst_rel_error = check.rel_error;
      report.worst_param = name;
    }
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace hmhi
