#pragma once

#include "gsacp/numgrid.hpp"

#include <functional>
#include <random>
#include <utility>

namespace gsacp {

/// Value and analytic gradient of a scalar loss at a parameter vector.
using LossEvaluator = std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>;

struct AuditOptions {
  double step = 1e-4;
  /// Gradient magnitudes below this are compared absolutely rather than relatively.
  double scale_floor = 1e-6;
  /// A coordinate whose step-h and step-h/2 estimates disagree by more than this sits on a kink.
  double kink_tolerance = 1e-2;
  int max_attempts = 10;
  double jitter = 1e-3;
  std::uint64_t seed = 0;
};

struct AuditResult {
  double max_relative_error = 0.0;
  Eigen::Index worst_coordinate = -1;
  int reprobes = 0;
};

/// Central-difference check of the analytic gradient over the given coordinates (all when
/// empty). Probes on a non-differentiable tie are jittered and retried.
inline AuditResult finite_difference_audit(const LossEvaluator& loss, Eigen::VectorXd params,
                                           const std::vector<Eigen::Index>& coordinates = {},
                                           const AuditOptions& opt = {}) {
  if (!(opt.step > 0.0)) throw InvalidParameter("finite_difference_audit: step must be positive");
  std::vector<Eigen::Index> coords = coordinates;
  if (coords.empty()) {
    coords.resize(static_cast<std::size_t>(params.size()));
    for (Eigen::Index k = 0; k < params.size(); ++k) coords[k] = k;
  }
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  AuditResult result;
  for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
    const Eigen::VectorXd grad = loss(params).second;
    if (grad.size() != params.size()) throw ShapeMismatch("finite_difference_audit: gradient size mismatch");
    bool kink = false;
    AuditResult local;
    local.reprobes = attempt;
    for (const Eigen::Index k : coords) {
      auto central = [&](double h) {
        const double x = params[k];
        params[k] = x + h;
        const double fp = loss(params).first;
        params[k] = x - h;
        const double fm = loss(params).first;
        params[k] = x;
        return (fp - fm) / (2.0 * h);
      };
      const double numeric = central(opt.step);
      // Halving the step moves a smooth estimate by O(h^2); a kink moves it by O(1).
      const double refined = central(0.5 * opt.step);
      const double denom = std::max({std::abs(grad[k]), std::abs(numeric), opt.scale_floor});
      if (std::abs(numeric - refined) > opt.kink_tolerance * denom) {
        kink = true;
        break;
      }
      const double err = std::abs(grad[k] - numeric) / denom;
      if (err > local.max_relative_error) {
        local.max_relative_error = err;
        local.worst_coordinate = k;
      }
    }
    if (!kink) return local;
    for (Eigen::Index k = 0; k < params.size(); ++k) params[k] += opt.jitter * noise(rng);
  }
  throw NumericalFailure("finite_difference_audit: every probe landed on a non-differentiable tie");
}

}  // namespace gsacp
