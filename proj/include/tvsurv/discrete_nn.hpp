#pragma once

// Discrete-time neural survival model: a ReLU MLP whose softmax output is a
// probability mass over K equal-width time bins measured from listing. The
// loss is the censored negative log-likelihood plus an in-batch ranking term.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tvsurv/curves.hpp"
#include "tvsurv/episodes.hpp"

namespace tvsurv {

/// Bin k (1-based) covers (e_{k-1}, e_k] with e_k = k * horizon / K; bin 1
/// also contains t = 0.
struct TimeGrid {
  std::size_t bins = 60;
  double horizon_days = 1825.0;

  void validate() const;
  double edge(std::size_t k) const;
  double width() const { return horizon_days / static_cast<double>(bins); }
};

struct BinAssignment {
  std::size_t bin = 1;
  /// The time lay beyond the horizon and was clamped into bin K.
  bool clamped = false;
};

BinAssignment discretize(double time_days, const TimeGrid& grid);

/// sum_{r = t+1}^{K} p_r for t in [0, K].
double survival_from_pmf(std::span<const double> pmf, std::size_t t);

/// Network input for one anchor: encoded covariates in force, elapsed days
/// since listing (scaled by the horizon) and log(1 + number of prior updates).
Eigen::VectorXd history_input(const Eigen::VectorXd& covariates, double elapsed_days, std::size_t prior_updates,
                              const TimeGrid& grid);

struct LossSpec {
  double alpha_rank = 0.1;
  double sigma = 0.1;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Training samples: column i of `inputs` with the outcome of its patient.
struct SurvivalSamples {
  Eigen::MatrixXd inputs;  // features x samples
  std::vector<double> time;
  std::vector<std::uint8_t> event;

  std::size_t size() const { return time.size(); }
  SurvivalSamples select(std::span<const std::size_t> columns) const;
};

/// One sample per episode row: the row's covariates anchored at its start,
/// labelled with the patient's outcome. Static tables give one per patient.
SurvivalSamples samples_from_episodes(const EpisodeTable& episodes, const TimeGrid& grid);

class DiscreteSurvModel {
 public:
  DiscreteSurvModel() = default;
  /// He-normal weights, zero biases. `hidden` lists the hidden widths.
  DiscreteSurvModel(std::size_t inputs, std::vector<std::size_t> hidden, TimeGrid grid, std::uint64_t seed);

  const TimeGrid& grid() const { return grid_; }
  std::vector<std::size_t> layer_sizes() const;
  std::size_t inputs() const { return weights_.empty() ? 0 : static_cast<std::size_t>(weights_.front().cols()); }

  /// Softmax pmf for every column of `inputs` (bins x samples).
  Eigen::MatrixXd pmf(const Eigen::MatrixXd& inputs) const;

  /// Flattened parameters: W_1, b_1, W_2, b_2, ... (column-major weights).
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);
  std::size_t parameter_count() const;

  struct LossValue {
    double total = 0.0;
    double likelihood = 0.0;
    double ranking = 0.0;
    std::size_t pairs = 0;
  };
  /// Loss on one batch; fills `gradient` (same layout as parameters()) when non-null.
  LossValue loss(const SurvivalSamples& batch, const LossSpec& spec, Eigen::VectorXd* gradient = nullptr) const;

  nlohmann::json to_json() const;
  static DiscreteSurvModel from_json(const nlohmann::json& j);

  std::vector<std::string> feature_names;

 private:
  TimeGrid grid_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// The loss as a function of the pmf alone, with its gradient per sample.
DiscreteSurvModel::LossValue pmf_loss(const Eigen::MatrixXd& pmf, std::span<const double> time,
                                      std::span<const std::uint8_t> event, const TimeGrid& grid,
                                      const LossSpec& spec, Eigen::MatrixXd* d_pmf = nullptr);

struct TrainingLogRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainOptions {
  std::vector<std::size_t> hidden{128, 128};
};

struct TrainResult {
  DiscreteSurvModel model;
  std::vector<TrainingLogRow> log;
  std::size_t best_epoch = 0;
};

/// Adam with early stopping on the validation loss. Losses in the log are
/// evaluated after each epoch over fixed, unshuffled batches.
TrainResult train(const SurvivalSamples& training, const SurvivalSamples& validation, const TimeGrid& grid,
                  const LossSpec& spec, const TrainOptions& options = {});

void write_training_log_csv(std::ostream& out, std::span<const TrainingLogRow> log);

/// Step curve at the bin edges, S(e_k) = sum_{r > k} p_r.
SurvivalCurve predict_survival(const DiscreteSurvModel& model, const Eigen::VectorXd& input);

/// Dynamic prediction along a covariate path. Bin k uses the model anchored
/// at the latest change time <= e_{k-1}, through its discrete hazard
/// h_k = p_k / sum_{r >= k} p_r.
SurvivalCurve predict_survival(const DiscreteSurvModel& model, const CovariatePath& path);

}  // namespace tvsurv
