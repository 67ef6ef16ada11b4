#pragma once

// End-to-end experiment: load or simulate a cohort, split by patient,
// impute, encode per imputation, fit one model family in static or dynamic
// mode, and evaluate on the held-out split.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tvsurv/cohort.hpp"
#include "tvsurv/cox.hpp"
#include "tvsurv/discrete_nn.hpp"
#include "tvsurv/episodes.hpp"
#include "tvsurv/metrics.hpp"
#include "tvsurv/preprocess.hpp"
#include "tvsurv/rsf.hpp"
#include "tvsurv/simgen.hpp"

namespace tvsurv {

enum class ModelKind { Cox, Rsf, Nn };
enum class Mode { Static, Dynamic };
/// Which covariates a dynamic model sees at evaluation: the observed path
/// (values in force at each time) or the listing observation only.
enum class Anchor { Path, Listing };

std::string_view to_string(ModelKind kind);
std::string_view to_string(Mode mode);
ModelKind parse_model_kind(std::string_view s);
Mode parse_mode(std::string_view s);

struct DataConfig {
  std::string path;
  std::optional<SimSpec> simulate;
  /// MCAR rate applied to numeric cells after loading.
  double missing_rate = 0.0;
};

struct PreprocessConfig {
  double missing_threshold = 0.30;
  std::size_t imputations = 5;
  std::size_t sweeps = 10;
  double vif_cutoff = 10.0;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::size_t threads = 1;
};

struct ModelConfig {
  ModelKind kind = ModelKind::Cox;
  Mode mode = Mode::Dynamic;
  /// Hyperparameters for the kind; unknown keys are rejected.
  nlohmann::json params = nlohmann::json::object();
  /// Optional grid: key -> array of candidate values, crossed.
  nlohmann::json grid = nlohmann::json::object();
  std::size_t cv_folds = 5;
};

struct EvalConfig {
  double horizon_days = 365.0;
  double threshold = 0.5;
  std::size_t bins = 10;
  /// Also report dynamic models anchored at listing.
  bool listing_variant = true;
};

struct ExperimentConfig {
  DataConfig data;
  PreprocessConfig preprocess;
  ModelConfig model;
  EvalConfig evaluation;
  std::uint64_t seed = 0;

  /// Relative data paths resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = "");
  nlohmann::json to_json() const;
};

/// Hyperparameters resolved from a params object (defaults filled in).
CoxOptions cox_options(const nlohmann::json& params);
PenaltySpec cox_penalty(const nlohmann::json& params);
ForestSpec forest_spec(const nlohmann::json& params, std::uint64_t seed);
LossSpec loss_spec(const nlohmann::json& params, std::uint64_t seed);
TimeGrid time_grid(const nlohmann::json& params);
TrainOptions train_options(const nlohmann::json& params);
void validate_params(ModelKind kind, const nlohmann::json& params);

/// Cohort after loading, splitting and imputation.
struct PreparedData {
  Cohort cohort;  // as loaded, possibly with missing cells
  std::optional<SimTruth> truth;
  PatientSplit split;
  std::vector<Cohort> completed;  // one per imputation
  std::vector<std::string> dropped_missing;
  /// Numeric columns removed by the VIF filter (applied to Cox only).
  std::vector<std::string> vif_removed;
};

PreparedData prepare(const ExperimentConfig& config);

/// Encoded episode tables of one imputation.
struct Design {
  Encoder encoder;
  EpisodeTable train;
  EpisodeTable validation;
  EpisodeTable test;
};

Encoder::Options encoder_options(ModelKind kind, const PreparedData& data);
/// Fits the encoder on the training split unless one is supplied.
Design build_design(const PreparedData& data, std::size_t imputation, ModelKind kind, Mode mode,
                    const Encoder* encoder = nullptr);
EpisodeTable encode_patients(const Cohort& cohort, const std::vector<std::size_t>& patients, const Encoder& encoder,
                             Mode mode);

/// A fitted model of any family behind one prediction interface.
struct FittedModel {
  ModelKind kind = ModelKind::Cox;
  CoxFit cox;
  Forest forest;
  DiscreteSurvModel nn;

  /// Survival over [0, horizon] along a path of encoded covariates.
  SurvivalCurve predict(const CovariatePath& path, double horizon) const;

  nlohmann::json to_json() const;
  static FittedModel from_json(const nlohmann::json& j);
};

/// Fits one model on `train`; `validation` drives early stopping (nn).
FittedModel fit_model(ModelKind kind, const nlohmann::json& params, const EpisodeTable& train,
                      const EpisodeTable& validation, std::uint64_t seed, nlohmann::json* log = nullptr);

struct CvResult {
  nlohmann::json best_params;
  /// One entry per grid point: params and mean held-out C-index.
  nlohmann::json table = nlohmann::json::array();
};

/// Patient-level k-fold grid search on train + validation, scored by C-index.
CvResult cross_validate(const ExperimentConfig& config, const Design& design);

struct FitOutput {
  ExperimentConfig config;
  nlohmann::json selected_params;
  std::vector<Encoder> encoders;
  std::vector<FittedModel> models;
  nlohmann::json log;
  /// Cox only: per-imputation Wald reports and their pooled version.
  std::vector<WaldReport> wald;
  std::optional<WaldReport> wald_pooled;
  std::vector<std::string> vif_removed;
};

FitOutput run_fit(const ExperimentConfig& config, const PreparedData& data);
FitOutput run_fit(const ExperimentConfig& config);

nlohmann::json artifact_to_json(const FitOutput& fit);
FitOutput artifact_from_json(const nlohmann::json& j);

/// Per-patient predictions on one table.
struct Predictions {
  std::vector<SurvivalCurve> curves;
  std::vector<double> risk;  // 1 - S(horizon)
  std::vector<double> time;
  std::vector<std::uint8_t> event;
};

Predictions predict_table(const FittedModel& model, const EpisodeTable& table, Anchor anchor, double horizon);

/// Metrics of one model on one split. Probabilities are recalibrated on the
/// validation predictions before thresholding, Brier and calibration.
EvalReport evaluate_predictions(const Predictions& validation, const Predictions& test, const EvalConfig& config,
                                CalibrationSeries* calibration = nullptr);

struct EvalOutput {
  std::vector<EvalReport> reports;  // per imputation, then pooled and sd rows
  std::vector<CalibrationSeries> calibration;
};

EvalOutput run_evaluate(const FitOutput& fit, const PreparedData& data);

/// True-hazard predictions on the test split; requires simulated data.
/// Two rows: "latent" integrates the full simulated path, "observed-path"
/// only the updates recorded before each outcome, carried forward.
EvalOutput evaluate_oracle(const ExperimentConfig& config, const PreparedData& data);

struct ProfileRow {
  double anchor_day = 0.0;
  double t_day = 0.0;  // days after the anchor
  double survival = 1.0;
};

/// Re-anchored 1-year survival at every observation time of a patient,
/// using the first imputation's model. Unknown ids raise NotFound.
std::vector<ProfileRow> run_profile(const FitOutput& fit, const PreparedData& data, const std::string& patient_id);

void write_profile_csv(std::ostream& out, const std::vector<ProfileRow>& rows);

}  // namespace tvsurv
