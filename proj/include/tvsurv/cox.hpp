#pragma once

// Time-dependent Cox proportional hazards on counting-process episodes.
//
// Model: h(t | x(t)) = h0(t) exp((x(t) - xbar)' beta). Ties use Breslow's
// approximation in both the partial likelihood and the baseline hazard.
// The penalized objective is
//
//   F(beta) = -loglik(beta) / n_rows + lambda * (a |beta|_1 + (1 - a)/2 |beta|_2^2)
//
// minimized by proximal Newton: a Newton model of the smooth part, solved
// with coordinate descent under the L1 term, then step halving until F
// does not increase.

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

struct PenaltySpec {
  double lambda = 0.0;
  /// Elastic-net mix: 1 is lasso, 0 is ridge.
  double l1_ratio = 1.0;

  void validate() const;
};

struct CoxOptions {
  std::size_t max_iterations = 100;
  /// Converged once max |beta_new - beta_old| falls below this.
  double tolerance = 1e-7;
};

struct CoxDiagnostics {
  bool converged = false;
  /// False when the information matrix is singular at the solution
  /// (e.g. duplicated columns without a ridge term).
  bool identifiable = true;
  std::size_t iterations = 0;
  double objective = 0.0;
  double log_likelihood = 0.0;
  double null_log_likelihood = 0.0;
  std::string message;
};

struct CoxFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd covariate_means;
  HazardCurve baseline;
  std::vector<std::string> feature_names;
  PenaltySpec penalty;
  CoxDiagnostics diagnostics;

  /// (x - xbar)' beta.
  double linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  nlohmann::json to_json() const;
  static CoxFit from_json(const nlohmann::json& j);
};

/// Log partial likelihood and its derivatives at beta, on covariates
/// centered by `means`. Exposed for gradient checks and inference.
struct PartialLikelihood {
  double value = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;  // negative Hessian
};

PartialLikelihood partial_likelihood(const EpisodeTable& episodes, const Eigen::VectorXd& means,
                                     const Eigen::VectorXd& beta, bool with_information = true);

CoxFit fit_cox_td(const EpisodeTable& episodes, const PenaltySpec& penalty,
                  const CoxOptions& options = {});

/// Breslow: dH0(t_j) = d_j / sum_{start < t_j <= stop} exp((x - xbar)' beta).
HazardCurve baseline_hazard(const CoxFit& fit, const EpisodeTable& episodes);

struct PredictOptions {
  double horizon = 365.0;
};

/// S(t) = exp(-int_0^t exp((x(s) - xbar)' beta) dH0(s)), with the value in
/// force at each baseline jump taken from the path. Breakpoints are the
/// baseline event times up to the horizon.
SurvivalCurve predict_survival(const CoxFit& fit, const CovariatePath& path,
                               const PredictOptions& options = {});
SurvivalCurve predict_survival(const CoxFit& fit, const Eigen::VectorXd& x,
                               const PredictOptions& options = {});

struct WaldRow {
  std::string feature;
  double coefficient = 0.0;
  double hazard_ratio = 1.0;
  double std_error = 0.0;
  double p_value = 1.0;
};

struct WaldReport {
  std::string label;
  std::vector<WaldRow> rows;
};

/// Hazard ratio and two-sided normal p value for one coefficient.
WaldRow wald_row(std::string feature, double coefficient, double std_error);

/// Unpenalized refit on the selected columns; standard errors from the
/// inverse observed information.
WaldReport wald_stats(const EpisodeTable& episodes, std::span<const std::size_t> selected,
                      const CoxOptions& options = {});

/// Rubin's rules across per-imputation reports with identical features.
WaldReport pool_wald(std::span<const WaldReport> reports);

/// `variable,coef,HR,std_err,p` sorted by p value.
void write_wald_csv(std::ostream& out, const WaldReport& report);

/// Columns whose penalized coefficient exceeds 1e-8 in magnitude.
std::vector<std::size_t> elasticnet_select(const EpisodeTable& episodes, const PenaltySpec& penalty,
                                           const CoxOptions& options = {});

/// Smallest lambda at which every coefficient of the lasso part is zero.
double lambda_max(const EpisodeTable& episodes, double l1_ratio);

}  // namespace tvsurv
