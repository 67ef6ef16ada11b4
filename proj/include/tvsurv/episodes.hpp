#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tvsurv/cohort.hpp"

namespace tvsurv {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Column-oriented view of counting-process rows shared by all models.
/// Rows of one patient are contiguous and ordered by start time.
struct EpisodeTable {
  std::vector<double> start;
  std::vector<double> stop;
  std::vector<std::uint8_t> event;
  /// Index into patient_ids for every row.
  std::vector<std::size_t> patient;
  std::vector<std::string> patient_ids;
  /// First row of each patient, plus a final sentinel (CSR layout).
  std::vector<std::size_t> patient_offsets;
  RowMatrix x;
  std::vector<std::string> feature_names;

  std::size_t rows() const { return stop.size(); }
  std::size_t features() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t patients() const { return patient_ids.size(); }
  std::size_t event_count() const;

  static EpisodeTable from_rows(std::span<const CountingProcessRow> rows,
                                std::vector<std::string> feature_names);

  /// Rows of the listed patients, in the given patient order.
  EpisodeTable subset_patients(std::span<const std::size_t> patient_indices) const;
  /// Same rows restricted to a subset of feature columns.
  EpisodeTable select_features(std::span<const std::size_t> columns) const;
};

/// Piecewise-constant covariate trajectory. values[k] is in force on
/// (change_times[k], change_times[k+1]]; change_times[0] is 0.
struct CovariatePath {
  std::vector<double> change_times;
  std::vector<Eigen::VectorXd> values;

  static CovariatePath constant(Eigen::VectorXd x);

  /// Index of the value in force at time t (the last change strictly before t;
  /// the first value at t <= 0).
  std::size_t segment_at(double t) const;
  /// Path cut at an anchor: changes after the anchor are discarded and the
  /// value at the anchor is carried forward.
  CovariatePath truncated_at(double anchor) const;
};

/// Observed outcome of one patient, as seen by the evaluation code.
struct PatientOutcome {
  double time = 0.0;
  bool event = false;
};

/// Per-patient path reconstructed from its episode rows.
CovariatePath patient_path(const EpisodeTable& table, std::size_t patient);
PatientOutcome patient_outcome(const EpisodeTable& table, std::size_t patient);

}  // namespace tvsurv
