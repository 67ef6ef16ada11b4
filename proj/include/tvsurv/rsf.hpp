#pragma once

// Random survival forest on counting-process episodes. Risk sets honor
// episode entry times (left truncation) both in the log-rank split score and
// in the Nelson-Aalen leaf estimates.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tvsurv/curves.hpp"
#include "tvsurv/episodes.hpp"
#include "tvsurv/metrics.hpp"

namespace tvsurv {

struct ForestSpec {
  std::size_t n_trees = 300;
  /// Features tried per node; 0 means ceil(sqrt(p)).
  std::size_t mtry = 0;
  /// A split is admissible only if each child keeps this much event weight.
  std::size_t min_leaf_events = 5;
  std::size_t max_depth = std::numeric_limits<std::size_t>::max();
  /// Threshold candidates per feature and node.
  std::size_t max_candidates = 64;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  /// Trees are grown on this many threads; results do not depend on it.
  std::size_t threads = 1;

  std::size_t resolved_mtry(std::size_t p) const;
  void validate(std::size_t p) const;
};

/// Leaf curves are stored sparsely on the forest's event-time grid.
struct SurvivalTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t leaf = -1;
  };
  struct Leaf {
    std::vector<std::uint32_t> grid_index;
    std::vector<double> increments;
  };

  std::vector<Node> nodes;
  std::vector<Leaf> leaves;
  /// Bootstrap multiplicity of every training patient.
  std::vector<std::uint32_t> in_bag;

  const Leaf& leaf_for(const double* x) const;
  std::size_t depth() const;
};

struct Forest {
  std::vector<SurvivalTree> trees;
  /// Distinct training event times, ascending.
  std::vector<double> grid;
  std::vector<std::string> feature_names;
  std::vector<std::string> patient_ids;
  ForestSpec spec;

  std::size_t features() const { return feature_names.size(); }

  nlohmann::json to_json() const;
  static Forest from_json(const nlohmann::json& j);
};

Forest fit_rsf(const EpisodeTable& episodes, const ForestSpec& spec);

/// Ensemble mean of the per-tree leaf cumulative hazards on the forest grid.
HazardCurve predict_chf(const Forest& forest, const Eigen::VectorXd& x);
/// Increments taken from the leaf of the covariates in force at each grid time.
HazardCurve predict_chf(const Forest& forest, const CovariatePath& path);
/// Same, restricted to a subset of trees.
HazardCurve predict_chf(const Forest& forest, const CovariatePath& path, std::span<const std::size_t> trees);

SurvivalCurve predict_survival(const Forest& forest, const Eigen::VectorXd& x);
SurvivalCurve predict_survival(const Forest& forest, const CovariatePath& path);

struct OobConcordance {
  Concordance concordance;
  /// Patients that were in bag for every tree.
  std::size_t excluded = 0;
};

/// Harrell's C with risk = out-of-bag ensemble mortality, the CHF summed over
/// the forest's event grid. Patients are matched to the training bag by id.
OobConcordance oob_concordance(const Forest& forest, const EpisodeTable& episodes);

/// Expected number of events: sum of the CHF over the forest's event grid.
double ensemble_mortality(const HazardCurve& chf);

/// Left-truncated two-sample log-rank chi-square statistic with frequency
/// weights. Returns 0 when the variance vanishes.
double log_rank_statistic(std::span<const double> entry, std::span<const double> exit,
                          std::span<const std::uint8_t> event, std::span<const double> weight,
                          std::span<const std::uint8_t> left);

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double statistic = 0.0;
};

/// Best admissible split of `rows` over `features` (left: x <= threshold).
/// Ties go to the lowest feature index, then the lowest threshold.
SplitChoice best_split(const EpisodeTable& episodes, std::span<const std::size_t> rows,
                       std::span<const double> weight, std::span<const std::size_t> features,
                       double min_leaf_events, std::size_t max_candidates = 64);

}  // namespace tvsurv
