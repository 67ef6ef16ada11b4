#include "tvsurv/km.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <vector>

#include "tvsurv/csv.hpp"
#include "tvsurv/error.hpp"

namespace tvsurv {

namespace {

std::size_t last_at_or_before(const std::vector<double>& times, double t) {
  // Number of breakpoints <= t.
  return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
}

struct RiskTable {
  std::vector<double> times;
  std::vector<double> events;
  std::vector<double> at_risk;
  bool gap = false;             // risk set empty somewhere between two event times
  double gap_before = 0.0;      // first event time following such a gap
};

void check_inputs(std::span<const double> entry, std::span<const double> exit,
                  std::span<const std::uint8_t> events, std::span<const double> weights) {
  if (exit.empty()) throw Error(ErrorCode::EmptyCohort, "no subjects");
  if (entry.size() != exit.size() || events.size() != exit.size() ||
      (!weights.empty() && weights.size() != exit.size())) {
    throw Error(ErrorCode::InvalidArgument, "input lengths differ");
  }
  for (std::size_t i = 0; i < exit.size(); ++i) {
    if (!(entry[i] < exit[i])) {
      throw Error(ErrorCode::InvalidArgument, "entry must precede exit for every subject");
    }
  }
}

RiskTable risk_table(std::span<const double> entry, std::span<const double> exit,
                     std::span<const std::uint8_t> events, std::span<const double> weights) {
  check_inputs(entry, exit, events, weights);
  const std::size_t n = exit.size();
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  std::vector<std::size_t> by_exit(n), by_entry(n);
  std::iota(by_exit.begin(), by_exit.end(), 0);
  std::iota(by_entry.begin(), by_entry.end(), 0);
  std::sort(by_exit.begin(), by_exit.end(), [&](auto a, auto b) { return exit[a] < exit[b]; });
  std::sort(by_entry.begin(), by_entry.end(), [&](auto a, auto b) { return entry[a] < entry[b]; });

  RiskTable table;
  for (std::size_t k = 0; k < n;) {
    const double t = exit[by_exit[k]];
    double d = 0;
    std::size_t m = k;
    for (; m < n && exit[by_exit[m]] == t; ++m) {
      if (events[by_exit[m]]) d += w(by_exit[m]);
    }
    if (d > 0) {
      table.times.push_back(t);
      table.events.push_back(d);
    }
    k = m;
  }

  // Y(t) = sum w over {exit >= t} minus sum w over {entry >= t}; a subject
  // with entry >= t necessarily has exit > t, so the difference is the risk set.
  const std::size_t D = table.times.size();
  table.at_risk.assign(D, 0.0);
  {
    // Suffix sums over exits and entries.
    std::vector<double> exits_sorted(n), entries_sorted(n), exit_w(n), entry_w(n);
    for (std::size_t i = 0; i < n; ++i) {
      exits_sorted[i] = exit[by_exit[i]];
      exit_w[i] = w(by_exit[i]);
      entries_sorted[i] = entry[by_entry[i]];
      entry_w[i] = w(by_entry[i]);
    }
    std::vector<double> exit_suffix(n + 1, 0.0), entry_suffix(n + 1, 0.0);
    for (std::size_t i = n; i-- > 0;) {
      exit_suffix[i] = exit_suffix[i + 1] + exit_w[i];
      entry_suffix[i] = entry_suffix[i + 1] + entry_w[i];
    }
    for (std::size_t j = 0; j < D; ++j) {
      const double t = table.times[j];
      const auto e0 = std::lower_bound(exits_sorted.begin(), exits_sorted.end(), t) - exits_sorted.begin();
      const auto s0 = std::lower_bound(entries_sorted.begin(), entries_sorted.end(), t) - entries_sorted.begin();
      table.at_risk[j] = exit_suffix[e0] - entry_suffix[s0];
    }

    // Look for an empty risk set strictly inside (t_first, t_last).
    if (D > 1) {
      struct Change {
        double at;
        int delta;
      };
      std::vector<Change> changes;
      changes.reserve(2 * n);
      for (std::size_t i = 0; i < n; ++i) {
        changes.push_back({entry[i], +1});
        changes.push_back({exit[i], -1});
      }
      std::sort(changes.begin(), changes.end(), [](const Change& a, const Change& b) {
        return a.at < b.at;
      });
      long count = 0;
      for (std::size_t k = 0; k < changes.size();) {
        const double c = changes[k].at;
        for (; k < changes.size() && changes[k].at == c; ++k) count += changes[k].delta;
        // `count` holds the risk set size on (c, next change].
        if (count == 0 && c >= table.times.front() && c < table.times.back()) {
          table.gap = true;
          table.gap_before = *std::upper_bound(table.times.begin(), table.times.end(), c);
          break;
        }
      }
    }
  }
  return table;
}

}  // namespace

double SurvivalCurve::at(double t) const {
  const std::size_t k = last_at_or_before(times, t);
  return k == 0 ? 1.0 : values[k - 1];
}

double SurvivalCurve::before(double t) const {
  const auto k = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
  return k == 0 ? 1.0 : values[k - 1];
}

double SurvivalCurve::variance_at(double t) const {
  if (variance.empty()) return 0.0;
  const std::size_t k = last_at_or_before(times, t);
  return k == 0 ? 0.0 : variance[k - 1];
}

SurvivalCurve::Band SurvivalCurve::confidence_band(double z) const {
  Band band;
  band.lower.resize(values.size());
  band.upper.resize(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double se = variance.empty() ? 0.0 : std::sqrt(variance[k]);
    band.lower[k] = std::clamp(values[k] - z * se, 0.0, 1.0);
    band.upper[k] = std::clamp(values[k] + z * se, 0.0, 1.0);
  }
  return band;
}

double HazardCurve::at(double t) const {
  const std::size_t k = last_at_or_before(times, t);
  return k == 0 ? 0.0 : cumulative[k - 1];
}

SurvivalCurve HazardCurve::to_survival() const {
  SurvivalCurve s;
  s.times = times;
  s.values.resize(cumulative.size());
  for (std::size_t k = 0; k < cumulative.size(); ++k) s.values[k] = std::exp(-cumulative[k]);
  s.truncated = truncated;
  return s;
}

void write_curve_csv(std::ostream& out, const SurvivalCurve& curve) {
  out << "t_days,survival\n";
  out << "0,1\n";
  for (std::size_t k = 0; k < curve.times.size(); ++k) {
    out << csv::format_double(curve.times[k]) << ',' << csv::format_double(curve.values[k]) << '\n';
  }
}

SurvivalCurve fit_km(std::span<const double> entry, std::span<const double> exit,
                     std::span<const std::uint8_t> events) {
  const RiskTable table = risk_table(entry, exit, events, {});
  SurvivalCurve curve;
  double s = 1.0;
  double greenwood = 0.0;
  for (std::size_t j = 0; j < table.times.size(); ++j) {
    if (table.gap && table.times[j] >= table.gap_before) {
      curve.truncated = true;
      break;
    }
    const double d = table.events[j];
    const double y = table.at_risk[j];
    s *= 1.0 - d / y;
    curve.times.push_back(table.times[j]);
    curve.values.push_back(s);
    if (y > d) {
      greenwood += d / (y * (y - d));
      curve.variance.push_back(s * s * greenwood);
    } else {
      curve.variance.push_back(0.0);
      if (j + 1 < table.times.size()) curve.truncated = true;
      break;
    }
  }
  return curve;
}

HazardCurve fit_nelson_aalen_weighted(std::span<const double> entry, std::span<const double> exit,
                                      std::span<const std::uint8_t> events,
                                      std::span<const double> weights) {
  const RiskTable table = risk_table(entry, exit, events, weights);
  HazardCurve curve;
  curve.times = table.times;
  curve.events = table.events;
  curve.at_risk = table.at_risk;
  curve.truncated = table.gap;
  curve.increments.resize(table.times.size());
  curve.cumulative.resize(table.times.size());
  double h = 0.0;
  for (std::size_t j = 0; j < table.times.size(); ++j) {
    curve.increments[j] = table.events[j] / table.at_risk[j];
    h += curve.increments[j];
    curve.cumulative[j] = h;
  }
  return curve;
}

HazardCurve fit_nelson_aalen(std::span<const double> entry, std::span<const double> exit,
                             std::span<const std::uint8_t> events) {
  return fit_nelson_aalen_weighted(entry, exit, events, {});
}

SurvivalCurve fit_censoring_km(std::span<const double> exit, std::span<const std::uint8_t> events) {
  std::vector<double> entry(exit.size(), 0.0);
  std::vector<std::uint8_t> flipped(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = events[i] ? 0 : 1;
  for (double t : exit) {
    if (!(t > 0)) throw Error(ErrorCode::InvalidArgument, "exit times must be positive");
  }
  return fit_km(entry, exit, flipped);
}

}  // namespace tvsurv
