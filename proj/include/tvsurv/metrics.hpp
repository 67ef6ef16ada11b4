#pragma once

// Censoring-aware evaluation: concordance, 1-year discrimination, IPCW
// Brier scores, thresholded classification, recalibration and calibration
// curves. Every function is pure and invariant to the order of patients.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tvsurv/curves.hpp"

namespace tvsurv {

inline constexpr double kOneYear = 365.0;

struct Concordance {
  double value = 0.0;
  double concordant = 0.0;
  double tied = 0.0;
  double comparable = 0.0;
  /// False when no comparable pair exists; `value` is then meaningless.
  bool defined = false;
};

/// Harrell's C. A pair (i, j) is comparable when i has an event at T_i and
/// T_j > T_i; it is concordant when risk_i > risk_j and counts one half on a
/// risk tie. O(n log n).
Concordance harrell_c(std::span<const double> risk, std::span<const double> time,
                      std::span<const std::uint8_t> event);

enum class Label1y : std::int8_t { Excluded = -1, Negative = 0, Positive = 1 };

/// Positive: event at or before the horizon. Negative: follow-up reaches past
/// the horizon, or censoring exactly at it. Censored earlier: excluded.
Label1y label_at(double time, bool event, double horizon = kOneYear);

struct Labels {
  std::vector<double> scores;
  std::vector<std::uint8_t> positive;
  std::size_t excluded = 0;
};

Labels labels_at(std::span<const double> scores, std::span<const double> time,
                 std::span<const std::uint8_t> event, double horizon = kOneYear);

struct Discrimination {
  double value = 0.0;
  bool defined = false;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t excluded = 0;
};

/// Mann-Whitney AUROC with midranks for tied scores.
Discrimination auroc(std::span<const double> scores, std::span<const std::uint8_t> positive);
/// Average precision: sum over distinct thresholds of (R_k - R_{k-1}) P_k.
Discrimination auprc(std::span<const double> scores, std::span<const std::uint8_t> positive);

Discrimination auroc_1y(std::span<const double> risk, std::span<const double> time,
                        std::span<const std::uint8_t> event, double horizon = kOneYear);
Discrimination auprc_1y(std::span<const double> risk, std::span<const double> time,
                        std::span<const std::uint8_t> event, double horizon = kOneYear);

struct BrierResult {
  double value = 0.0;
  /// Terms whose censoring weight was zero.
  std::size_t dropped = 0;
};

/// IPCW Brier score at t:
///   (1/n) sum_i [ S_i(t)^2 1{T_i <= t, event} / G(T_i-) + (1 - S_i(t))^2 1{T_i > t} / G(t) ].
BrierResult brier_at(std::span<const double> survival_at_t, std::span<const double> time,
                     std::span<const std::uint8_t> event, const SurvivalCurve& censoring, double t);

BrierResult brier_1y(std::span<const SurvivalCurve> curves, std::span<const double> time,
                     std::span<const std::uint8_t> event, const SurvivalCurve& censoring,
                     double horizon = kOneYear);

/// Grid {0} u {event times <= horizon} u {horizon}.
std::vector<double> ibs_grid(std::span<const double> time, std::span<const std::uint8_t> event,
                             double horizon = kOneYear);

/// (1/horizon) * trapezoid integral of the Brier score over ibs_grid.
BrierResult ibs_1y(std::span<const SurvivalCurve> curves, std::span<const double> time,
                   std::span<const std::uint8_t> event, const SurvivalCurve& censoring,
                   double horizon = kOneYear);

struct Classification {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t excluded = 0;
};

/// Confusion counts with predicted positive when probability >= threshold.
Classification classify(std::span<const double> probability, std::span<const std::uint8_t> positive,
                        double threshold = 0.5);
Classification classification_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
Classification classification_1y(std::span<const double> probability, std::span<const double> time,
                                 std::span<const std::uint8_t> event, double threshold = 0.5,
                                 double horizon = kOneYear);

/// p -> sigmoid(a + b logit(p)).
struct Recalibration {
  double a = 0.0;
  double b = 1.0;
  /// |b| reached the cap of 20 (separable validation data).
  bool capped = false;
  std::size_t iterations = 0;

  double apply(double p) const;
  std::vector<double> apply(std::span<const double> p) const;
};

Recalibration recalibrate(std::span<const double> probability, std::span<const std::uint8_t> positive);

struct CalibrationPoint {
  double mean_predicted = 0.0;
  double observed_rate = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins on [0, 1]; empty bins are omitted.
std::vector<CalibrationPoint> calibration_curve(std::span<const double> probability,
                                                std::span<const std::uint8_t> positive,
                                                std::size_t bins = 10);

/// The nine metrics of one model on one split.
struct EvalReport {
  static constexpr std::size_t kMetrics = 9;
  static const std::array<const char*, kMetrics>& column_names();

  std::string model;
  std::string mode;
  std::string imputation;
  std::array<double, kMetrics> values{};

  double& accuracy() { return values[0]; }
  double accuracy() const { return values[0]; }
  double& precision() { return values[1]; }
  double precision() const { return values[1]; }
  double& recall() { return values[2]; }
  double recall() const { return values[2]; }
  double& f1() { return values[3]; }
  double f1() const { return values[3]; }
  double& brier_1y() { return values[4]; }
  double brier_1y() const { return values[4]; }
  double& ibs_1y() { return values[5]; }
  double ibs_1y() const { return values[5]; }
  double& auroc_1y() { return values[6]; }
  double auroc_1y() const { return values[6]; }
  double& auprc_1y() { return values[7]; }
  double auprc_1y() const { return values[7]; }
  double& c_index() { return values[8]; }
  double c_index() const { return values[8]; }
};

/// Mean and sample SD rows ("pooled" and "sd") over reports sharing model and mode.
std::vector<EvalReport> pool_reports(std::span<const EvalReport> reports);

/// `model,mode,imputation,<nine columns>`.
void write_eval_csv(std::ostream& out, std::span<const EvalReport> reports);

/// `model,mode,imputation,bin_mean_predicted,observed_rate,count`.
struct CalibrationSeries {
  std::string model;
  std::string mode;
  std::string imputation;
  std::vector<CalibrationPoint> points;
};
void write_calibration_csv(std::ostream& out, std::span<const CalibrationSeries> series);

}  // namespace tvsurv
