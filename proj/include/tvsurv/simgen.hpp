#pragma once

// Synthetic waitlist cohorts with a known hazard
//   h(t) = lambda0 * exp(beta' x(t) + sum_k gamma_k x_a(t) x_b(t))
// over piecewise-constant covariate paths, plus independent transplant and
// loss-to-follow-up censoring.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tvsurv/cohort.hpp"

namespace tvsurv {

struct SimSpec {
  struct Interaction {
    std::size_t a = 0;
    std::size_t b = 0;
    double coef = 0.0;
  };

  std::size_t n_patients = 1000;
  std::size_t numeric = 20;
  std::size_t binary = 10;
  /// Level count of every categorical covariate (>= 2 each).
  std::vector<std::size_t> categorical_levels;
  /// Coefficients on the design vector: numeric, binary, then one entry per
  /// non-reference categorical level. Missing trailing entries are zero.
  std::vector<double> beta;
  std::vector<Interaction> interactions;
  double baseline_hazard = 3.1e-4;
  double mean_update_gap_days = 92.0;
  double transplant_hazard = 5.0e-3;
  double loss_hazard = 1.3e-3;
  double horizon_days = 1825.0;
  /// Correlation of a numeric covariate across one update (stationary N(0, 1)).
  /// 0 redraws every value independently at each update.
  double persistence = 0.0;
  /// Probability that a binary or categorical covariate is redrawn at an update.
  double redraw_probability = 1.0;
  double binary_prevalence = 0.3;
  std::uint64_t seed = 0;
  /// Patients are generated on this many threads; output does not depend on it.
  std::size_t threads = 1;

  /// 20 numeric + 10 binary covariates, mean update gap 92 days, 5-year horizon.
  static SimSpec unos_like();

  std::size_t design_width() const;
  std::vector<std::string> covariate_names() const;
  void validate() const;

  nlohmann::json to_json() const;
  /// Strict: unknown keys and invalid values raise Config naming the field.
  static SimSpec from_json(const nlohmann::json& j);
};

enum class TrueCause { Death, Transplant, LostToFollowUp, Administrative };

struct SimPatientTruth {
  std::string patient_id;
  /// Latent path to the horizon: segment k spans (change_days[k], change_days[k+1]].
  std::vector<double> change_days;
  std::vector<double> linear_predictor;
  double event_time = 0.0;  // continuous time of the realized outcome
  TrueCause cause = TrueCause::Administrative;
};

struct SimTruth {
  std::vector<double> beta;
  std::vector<SimSpec::Interaction> interactions;
  double baseline_hazard = 0.0;
  double horizon_days = 0.0;
  std::vector<SimPatientTruth> patients;

  std::size_t find(const std::string& patient_id) const;
};

struct SimResult {
  Cohort cohort;
  SimTruth truth;
};

SimResult generate(const SimSpec& spec);

/// Linear predictor of one design vector.
double sim_linear_predictor(const SimSpec& spec, const Eigen::VectorXd& design);

/// exp(-sum over segments of lambda0 exp(eta_k) * overlap with (0, t]).
double true_survival(const SimTruth& truth, std::size_t patient, double t);
double true_survival(const SimTruth& truth, const std::string& patient_id, double t);
/// Same integral for a path supplied by the caller (e.g. a truncated one).
double true_survival(const SimTruth& truth, const SimPatientTruth& path, double t);
/// The latent path as an observer would see it at `cutoff`: changes at or
/// after the cutoff are dropped and the last value is carried forward.
SimPatientTruth truncated_path(const SimPatientTruth& patient, double cutoff);
/// Survival over (anchor, anchor + span] given survival to the anchor.
double true_conditional_survival(const SimTruth& truth, std::size_t patient, double anchor, double span);

/// Masks each numeric cell with probability `rate` (MCAR). Times and
/// outcomes are never touched.
Cohort inject_missingness(const Cohort& cohort, double rate, std::uint64_t seed);

/// Sidecar with beta, lambda0 and per-patient true 1-year survival.
nlohmann::json truth_to_json(const SimTruth& truth);

}  // namespace tvsurv
