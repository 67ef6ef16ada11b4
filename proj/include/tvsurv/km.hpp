#pragma once

#include <cstdint>
#include <span>

#include "tvsurv/curves.hpp"

namespace tvsurv {

/// Product-limit estimator with left truncation: subject i is at risk at t
/// when entry_i < t <= exit_i. Deaths at a time are removed before the
/// censorings at that time. Greenwood variance is attached.
SurvivalCurve fit_km(std::span<const double> entry, std::span<const double> exit,
                     std::span<const std::uint8_t> events);

HazardCurve fit_nelson_aalen(std::span<const double> entry, std::span<const double> exit,
                             std::span<const std::uint8_t> events);

/// Same estimator with per-subject frequency weights (bootstrap counts).
HazardCurve fit_nelson_aalen_weighted(std::span<const double> entry, std::span<const double> exit,
                                      std::span<const std::uint8_t> events,
                                      std::span<const double> weights);

/// KM of the censoring distribution G(t): censorings play the role of events.
SurvivalCurve fit_censoring_km(std::span<const double> exit, std::span<const std::uint8_t> events);

}  // namespace tvsurv
