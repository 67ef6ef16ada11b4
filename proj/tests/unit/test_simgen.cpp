#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "tvsurv/cohort.hpp"
#include "tvsurv/error.hpp"
#include "tvsurv/km.hpp"
#include "tvsurv/simgen.hpp"

using namespace tvsurv;

namespace {

std::string long_csv(const Cohort& c) {
  std::ostringstream out;
  write_long_csv(out, c);
  return out.str();
}

SimSpec small_spec(std::uint64_t seed) {
  SimSpec s;
  s.n_patients = 300;
  s.numeric = 3;
  s.binary = 2;
  s.categorical_levels = {3};
  s.beta = {0.5, -0.4, 0.2, 0.7, 0.0, 0.3, -0.3};
  s.mean_update_gap_days = 60;
  s.seed = seed;
  return s;
}

SimTruth one_jump_truth(double lambda0, double eta0, double eta1, double jump) {
  SimTruth t;
  t.baseline_hazard = lambda0;
  t.horizon_days = 1825;
  SimPatientTruth p;
  p.patient_id = "a";
  p.change_days = {0.0, jump};
  p.linear_predictor = {eta0, eta1};
  t.patients.push_back(p);
  return t;
}

/// Composite Simpson rule for the integrated hazard, 20000 panels per piece.
double quadrature_survival(const SimTruth& t, double upto) {
  const auto& p = t.patients[0];
  auto hazard = [&](double u) {
    std::size_t k = 0;
    while (k + 1 < p.change_days.size() && u > p.change_days[k + 1]) ++k;
    return t.baseline_hazard * std::exp(p.linear_predictor[k]);
  };
  // Integrate each constant piece separately so the jump is not smeared.
  double total = 0;
  std::vector<double> cuts{0.0};
  for (std::size_t k = 1; k < p.change_days.size(); ++k) {
    if (p.change_days[k] < upto) cuts.push_back(p.change_days[k]);
  }
  cuts.push_back(upto);
  for (std::size_t c = 1; c < cuts.size(); ++c) {
    const double a = cuts[c - 1], b = cuts[c];
    const int n = 20000;
    const double h = (b - a) / n;
    double s = 0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
      // Evaluate inside the piece: the endpoints belong to it by continuity.
      const double u = std::clamp(a + i * h, std::nextafter(a, b), std::nextafter(b, a));
      s += w * hazard(u);
    }
    total += s * h / 3.0;
  }
  return std::exp(-total);
}

}  // namespace

TEST_SUITE("simgen") {
  TEST_CASE("same seed gives the same cohort on any thread count") {
    SimSpec a = small_spec(7);
    SimSpec b = a;
    b.threads = 4;
    const auto ra = generate(a);
    const auto rb = generate(b);
    CHECK(long_csv(ra.cohort) == long_csv(rb.cohort));
    CHECK(truth_to_json(ra.truth).dump() == truth_to_json(rb.truth).dump());
    SimSpec c = a;
    c.seed = 8;
    CHECK(long_csv(generate(c).cohort) != long_csv(ra.cohort));
  }

  TEST_CASE("vanishing baseline hazard gives no deaths") {
    SimSpec s = small_spec(1);
    s.baseline_hazard = 1e-300;
    s.transplant_hazard = 0;
    s.loss_hazard = 0;
    const auto r = generate(s);
    for (const auto& p : r.cohort.patients) {
      CHECK(p.outcome.kind == OutcomeKind::AdministrativeCensor);
      CHECK(p.outcome.time_days == 1825);
    }
  }

  TEST_CASE("null coefficients give exponential event times") {
    SimSpec s;
    s.n_patients = 20000;
    s.numeric = 2;
    s.binary = 1;
    s.beta = {};
    s.baseline_hazard = 1e-3;
    s.transplant_hazard = 0;
    s.loss_hazard = 0;
    s.horizon_days = 1e6;
    s.mean_update_gap_days = 1e7;  // keeps paths short over the long horizon
    s.seed = 3;
    const auto r = generate(s);
    std::vector<double> entry, exit;
    std::vector<std::uint8_t> event;
    for (const auto& p : r.truth.patients) {
      entry.push_back(0);
      exit.push_back(p.event_time);
      event.push_back(p.cause == TrueCause::Death);
    }
    const auto km = fit_km(entry, exit, event);
    double sup = 0;
    for (std::size_t k = 0; k < km.times.size(); ++k) {
      sup = std::max(sup, std::abs(km.values[k] - std::exp(-1e-3 * km.times[k])));
    }
    CHECK(sup <= 0.02);
  }

  TEST_CASE("true survival values") {
    const SimTruth t = one_jump_truth(2e-3, 0.0, 0.0, 1e9);
    CHECK(true_survival(t, 0, 0.0) == 1.0);
    CHECK(true_survival(t, 0, 500.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(true_survival(t, "a", 500.0) == true_survival(t, 0, 500.0));
    CHECK_THROWS_AS(true_survival(t, "zz", 10.0), Error);
    try {
      true_survival(t, "zz", 10.0);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NotFound);
    }

    const SimTruth j = one_jump_truth(1e-3, -0.2, 0.9, 137.5);
    for (double u : {50.0, 137.5, 200.0, 365.0, 1800.0}) {
      CHECK(std::abs(true_survival(j, 0, u) - quadrature_survival(j, u)) <= 1e-10);
    }
    CHECK(true_survival(j, 0, 365.0) ==
          doctest::Approx(std::exp(-1e-3 * (std::exp(-0.2) * 137.5 + std::exp(0.9) * (365.0 - 137.5)))).epsilon(1e-14));
  }

  TEST_CASE("truth curves are non-increasing") {
    const auto r = generate(small_spec(4));
    for (std::size_t i = 0; i < r.truth.patients.size(); i += 7) {
      double prev = 1.0;
      for (double u = 0; u <= 1825; u += 25) {
        const double s = true_survival(r.truth, i, u);
        CHECK(s <= prev);
        prev = s;
      }
    }
  }

  TEST_CASE("realized hazard follows the linear predictor") {
    // Deaths and exposure pooled by linear-predictor band along every path,
    // compared with lambda0 * exp(eta) * exposure.
    SimSpec s;
    s.n_patients = 6000;
    s.numeric = 2;
    s.binary = 1;
    s.beta = {0.6, -0.5, 0.8};
    s.baseline_hazard = 1e-3;
    s.mean_update_gap_days = 90;
    s.seed = 11;
    const auto r = generate(s);
    std::map<int, std::pair<double, double>> bands;  // band -> (deaths, expected)
    for (const auto& p : r.truth.patients) {
      for (std::size_t k = 0; k < p.change_days.size(); ++k) {
        const double a = p.change_days[k];
        if (a >= p.event_time) break;
        const double b = std::min(k + 1 < p.change_days.size() ? p.change_days[k + 1] : 1e18, p.event_time);
        const int band = static_cast<int>(std::floor(p.linear_predictor[k] * 2));
        auto& cell = bands[band];
        cell.second += r.truth.baseline_hazard * std::exp(p.linear_predictor[k]) * (b - a);
        if (p.cause == TrueCause::Death && b == p.event_time) cell.first += 1;
      }
    }
    std::size_t checked = 0;
    for (const auto& [band, cell] : bands) {
      if (cell.second < 20) continue;
      ++checked;
      CHECK(std::abs(cell.first - cell.second) <= 3.0 * std::sqrt(cell.second));
    }
    CHECK(checked >= 4);
  }

  TEST_CASE("default outcome mix") {
    SimSpec s = SimSpec::unos_like();
    s.n_patients = 5000;
    s.seed = 21;
    const auto r = generate(s);
    std::map<OutcomeKind, double> n;
    for (const auto& p : r.cohort.patients) n[p.outcome.kind] += 1;
    const double total = static_cast<double>(r.cohort.patients.size());
    CHECK(n[OutcomeKind::DeathOnWaitlist] / total == doctest::Approx(0.08).epsilon(0.3));
    CHECK(n[OutcomeKind::TransplantCensor] / total == doctest::Approx(0.73).epsilon(0.1));
    CHECK(s.numeric == 20);
    CHECK(s.binary == 10);
    CHECK(s.mean_update_gap_days == 92.0);
    CHECK(s.horizon_days == 1825.0);
  }

  TEST_CASE("observations stop at the outcome") {
    const auto r = generate(small_spec(5));
    for (const auto& p : r.cohort.patients) {
      CHECK(p.observations.front().time_days == 0);
      for (const auto& o : p.observations) CHECK(o.time_days < std::max<std::int64_t>(p.outcome.time_days, 1));
    }
  }

  TEST_CASE("missingness injection") {
    SimSpec s = small_spec(6);
    s.n_patients = 2000;
    const Cohort c = generate(s).cohort;
    CHECK(long_csv(inject_missingness(c, 0.0, 1)) == long_csv(c));

    const Cohort m = inject_missingness(c, 0.2, 1);
    CHECK(long_csv(inject_missingness(c, 0.2, 1)) == long_csv(m));
    double numeric = 0, masked = 0;
    REQUIRE(m.patients.size() == c.patients.size());
    for (std::size_t i = 0; i < c.patients.size(); ++i) {
      const auto& a = c.patients[i];
      const auto& b = m.patients[i];
      CHECK(a.patient_id == b.patient_id);
      CHECK(a.outcome.kind == b.outcome.kind);
      CHECK(a.outcome.time_days == b.outcome.time_days);
      REQUIRE(a.observations.size() == b.observations.size());
      for (std::size_t o = 0; o < a.observations.size(); ++o) {
        CHECK(a.observations[o].time_days == b.observations[o].time_days);
        for (std::size_t j = 0; j < a.observations[o].values.size(); ++j) {
          const Cell& x = a.observations[o].values[j];
          const Cell& y = b.observations[o].values[j];
          if (std::holds_alternative<double>(x)) {
            numeric += 1;
            if (is_missing(y)) masked += 1;
            else CHECK(std::get<double>(y) == std::get<double>(x));
          } else {
            CHECK(x == y);
          }
        }
      }
    }
    CHECK(std::abs(masked / numeric - 0.2) <= 0.01);
    CHECK_THROWS_AS(inject_missingness(c, 1.0, 1), Error);
  }

  TEST_CASE("spec validation names the field") {
    auto j = SimSpec::unos_like().to_json();
    j["baseline_hazard"] = -1.0;
    try {
      SimSpec::from_json(j);
      FAIL("expected Config");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Config);
      CHECK(std::string(e.what()).find("baseline_hazard") != std::string::npos);
    }
    auto k = SimSpec::unos_like().to_json();
    k["not_a_field"] = 1;
    CHECK_THROWS_AS(SimSpec::from_json(k), Error);
    auto g = SimSpec::unos_like().to_json();
    g["mean_update_gap_days"] = 0;
    CHECK_THROWS_AS(SimSpec::from_json(g), Error);

    const SimSpec back = SimSpec::from_json(small_spec(9).to_json());
    CHECK(back.to_json() == small_spec(9).to_json());
  }

  TEST_CASE("truth sidecar") {
    const auto r = generate(small_spec(10));
    const auto j = truth_to_json(r.truth);
    CHECK(j.at("beta").size() == r.truth.beta.size());
    CHECK(j.at("baseline_hazard").get<double>() == r.truth.baseline_hazard);
    REQUIRE(j.at("patients").size() == r.cohort.patients.size());
    const auto& first = j.at("patients")[0];
    CHECK(first.at("patient_id").get<std::string>() == r.cohort.patients[0].patient_id);
    CHECK(first.at("true_survival_1y").get<double>() == doctest::Approx(true_survival(r.truth, 0, 365.0)));
  }
}
