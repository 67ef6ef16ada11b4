#pragma once

// Small builders shared by the unit tests.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tvsurv/cohort.hpp"
#include "tvsurv/episodes.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv::fixture {

inline Observation obs(std::int64_t t, std::vector<Cell> values) { return Observation{t, std::move(values)}; }

inline PatientHistory history(std::string id, std::vector<Observation> observations, OutcomeKind kind,
                              std::int64_t outcome_time) {
  PatientHistory h;
  h.patient_id = std::move(id);
  h.observations = std::move(observations);
  h.outcome = Outcome{kind, outcome_time};
  return h;
}

/// Numeric cells taken as-is, in schema order.
inline RowEncoder identity_encoder() {
  return [](const Observation& o) {
    std::vector<double> out;
    for (const auto& c : o.values) out.push_back(std::get<double>(c));
    return out;
  };
}

/// Random episode table: `patients` patients with 1-3 episodes each, p
/// standard-normal features, integer day times and ~60% final-row events.
inline EpisodeTable random_table(Rng& rng, std::size_t patients, std::size_t p, bool ties = true) {
  std::vector<CountingProcessRow> rows;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < patients; ++i) {
    const std::size_t k = 1 + rng.below(3);
    std::int64_t t = 0;
    for (std::size_t e = 0; e < k; ++e) {
      CountingProcessRow r;
      r.patient_id = "p" + std::to_string(i);
      r.start_days = t;
      t += ties ? 1 + static_cast<std::int64_t>(rng.below(20))
                : 1 + static_cast<std::int64_t>(rng.below(1000000));
      r.stop_days = t;
      r.event = (e + 1 == k) && rng.bernoulli(0.6);
      for (std::size_t j = 0; j < p; ++j) r.covariates.push_back(rng.normal());
      rows.push_back(std::move(r));
    }
  }
  return EpisodeTable::from_rows(rows, names);
}

}  // namespace tvsurv::fixture
