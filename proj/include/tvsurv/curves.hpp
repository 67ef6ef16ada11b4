#pragma once

#include <iosfwd>
#include <vector>

namespace tvsurv {

/// Right-continuous step function S(t) stored at its breakpoints.
/// S(t) = 1 before the first breakpoint.
struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> values;
  /// Greenwood variance at each breakpoint; empty when not estimated.
  std::vector<double> variance;
  /// The estimator stopped early (risk set exhausted before the last event).
  bool truncated = false;
  /// Evaluation was requested past the support; the tail is held flat.
  bool extended = false;

  double at(double t) const;
  /// Left limit S(t-).
  double before(double t) const;
  double variance_at(double t) const;

  struct Band {
    std::vector<double> lower, upper;
  };
  /// Pointwise S +- z * sqrt(var), clipped to [0, 1].
  Band confidence_band(double z = 1.959963984540054) const;
};

/// Cumulative hazard H(t) = sum_{t_j <= t} d_j / Y_j. Weighted estimators
/// (Breslow, bootstrap leaves) store a real-valued Y_j.
struct HazardCurve {
  std::vector<double> times;
  std::vector<double> events;
  std::vector<double> at_risk;
  std::vector<double> increments;
  std::vector<double> cumulative;
  bool truncated = false;

  double at(double t) const;
  SurvivalCurve to_survival() const;
};

/// Two-column `t_days,survival` export used for plotting.
void write_curve_csv(std::ostream& out, const SurvivalCurve& curve);

}  // namespace tvsurv
