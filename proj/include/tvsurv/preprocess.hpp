#pragma once

// Preprocessing: missingness threshold, chained-equation imputation, VIF
// filtering, one-hot/z-score encoding and patient-level splits.

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tvsurv/cohort.hpp"

namespace tvsurv {

enum class ColumnKind { Numeric, Categorical };

/// Column-oriented covariate table. Numeric cells use NaN for missing,
/// categorical cells use the empty string.
struct CovariateMatrix {
  struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    std::vector<double> numeric;
    std::vector<std::string> labels;

    bool missing(std::size_t row) const;
    std::size_t missing_count() const;
  };
  struct RowKey {
    std::string patient_id;
    std::int64_t time_days = 0;
  };

  std::vector<Column> columns;
  std::vector<RowKey> keys;

  std::size_t rows() const { return keys.size(); }
  std::size_t cols() const { return columns.size(); }
  const Column* column(std::string_view name) const;

  /// Every observation of every patient, one row each. Column kind follows
  /// the first non-missing cell.
  static CovariateMatrix from_cohort(const Cohort& cohort);
  /// Writes the cells back into a cohort with the same row order; columns not
  /// present in the matrix are dropped from the returned schema.
  Cohort to_cohort(const Cohort& like) const;

  CovariateMatrix select_rows(std::span<const std::size_t> rows) const;
};

struct DropReport {
  CovariateMatrix matrix;
  std::vector<std::string> dropped;
};

/// Removes columns whose missing fraction is >= threshold.
DropReport drop_high_missing(const CovariateMatrix& m, double threshold = 0.30);

struct ImputationSet {
  std::vector<CovariateMatrix> completed;
  std::uint64_t seed = 0;
};

struct ImputeOptions {
  std::size_t count = 5;
  std::size_t sweeps = 10;
  std::uint64_t seed = 0;
  /// Chains run on this many threads; results do not depend on it.
  std::size_t threads = 1;
};

/// Fully-conditional (chained-equation) Gibbs imputation. Each chain starts
/// from a random hot-deck fill, then every sweep regresses each incomplete
/// column on all others (Bayesian linear for numeric, logistic per level for
/// categorical) and redraws its missing cells from the predictive
/// distribution. Numeric draws are clamped to the observed range.
ImputationSet impute(const CovariateMatrix& m, const ImputeOptions& options);

struct VifResult {
  std::vector<std::string> retained;
  std::vector<std::string> removed;
  /// VIF of each retained column at exit, parallel to `retained`.
  std::vector<double> final_vif;
  std::size_t iterations = 0;
};

/// VIF of every column of a complete numeric matrix (columns = variables).
/// Exact collinearity yields +inf.
std::vector<double> variance_inflation(const Eigen::MatrixXd& x);

/// Iteratively drops the highest-VIF numeric column while any VIF > cutoff.
VifResult vif_filter(const CovariateMatrix& m, double cutoff = 10.0);

/// Frozen training statistics for one-hot and z-score encoding.
class Encoder {
 public:
  struct NumericStats {
    std::string name;
    double mean = 0.0;
    double sd = 1.0;
  };
  struct CategoricalLevels {
    std::string name;
    std::vector<std::string> levels;
  };
  struct Output {
    std::vector<std::string> feature_names;
    std::vector<std::vector<double>> rows;
  };

  struct Options {
    /// Omit the first level of every categorical column. Cox fits need it:
    /// a full one-hot block sums to a constant, which the baseline absorbs.
    bool drop_reference_level = false;
    /// Input columns to leave out entirely.
    std::vector<std::string> exclude;
  };

  /// Fits on the training rows only. Zero-variance numeric columns are dropped.
  static Encoder fit(const CovariateMatrix& train, const Options& options);
  static Encoder fit(const CovariateMatrix& train) { return fit(train, Options{}); }

  Output apply(const CovariateMatrix& m) const;

  /// Binds the encoder to a cohort schema for use with to_counting_process.
  RowEncoder bind(std::span<const std::string> schema) const;

  std::vector<std::string> feature_names() const;
  std::size_t width() const;
  const std::vector<NumericStats>& numeric() const { return numeric_; }
  const std::vector<CategoricalLevels>& categorical() const { return categorical_; }
  /// Input columns in encoding order.
  const std::vector<std::string>& inputs() const { return inputs_; }

  nlohmann::json to_json() const;
  static Encoder from_json(const nlohmann::json& j);

 private:
  // Encoding order: inputs_ in training column order; each input is either
  // numeric (one output) or categorical (one output per level).
  std::vector<std::string> inputs_;
  std::vector<int> input_slot_;  // >= 0 numeric index, < 0 -(categorical index + 1)
  std::vector<NumericStats> numeric_;
  std::vector<CategoricalLevels> categorical_;
  bool drop_reference_ = false;

  void encode_cells(const std::vector<const Cell*>& cells, std::vector<double>& out,
                    const std::string& context) const;
};

struct PatientSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Largest-remainder sizes for the given ratios.
std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios);

/// Random patient-level split; indices refer to positions in the cohort.
PatientSplit split_patients(std::size_t n_patients, std::array<double, 3> ratios,
                            std::uint64_t seed);

}  // namespace tvsurv
