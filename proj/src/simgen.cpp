#include "tvsurv/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "tvsurv/error.hpp"
#include "tvsurv/json_util.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

SimSpec SimSpec::unos_like() {
  SimSpec s;
  s.numeric = 20;
  s.binary = 10;
  s.beta.assign(s.design_width(), 0.0);
  s.beta[0] = 0.8;
  s.beta[1] = -0.5;
  s.beta[2] = 0.4;
  s.beta[3] = 0.3;
  s.beta[20] = 0.4;
  s.beta[21] = -0.3;
  return s;
}

std::size_t SimSpec::design_width() const {
  std::size_t w = numeric + binary;
  for (auto l : categorical_levels) w += l >= 1 ? l - 1 : 0;
  return w;
}

std::vector<std::string> SimSpec::covariate_names() const {
  std::vector<std::string> names;
  char buf[32];
  for (std::size_t k = 0; k < numeric; ++k) {
    std::snprintf(buf, sizeof buf, "num_%02zu", k + 1);
    names.emplace_back(buf);
  }
  for (std::size_t k = 0; k < binary; ++k) {
    std::snprintf(buf, sizeof buf, "bin_%02zu", k + 1);
    names.emplace_back(buf);
  }
  for (std::size_t k = 0; k < categorical_levels.size(); ++k) {
    std::snprintf(buf, sizeof buf, "cat_%02zu", k + 1);
    names.emplace_back(buf);
  }
  return names;
}

void SimSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::Config, "simulate." + field + ": " + why);
  };
  if (n_patients == 0) fail("n_patients", "must be at least 1");
  if (numeric + binary + categorical_levels.size() == 0) fail("numeric", "no covariates requested");
  for (auto l : categorical_levels) {
    if (l < 2) fail("categorical_levels", "every categorical covariate needs >= 2 levels");
  }
  if (beta.size() > design_width()) fail("beta", "longer than the design width " + std::to_string(design_width()));
  for (double b : beta) {
    if (!std::isfinite(b)) fail("beta", "must be finite");
  }
  for (const auto& it : interactions) {
    if (it.a >= design_width() || it.b >= design_width()) fail("interactions", "index beyond the design width");
    if (!std::isfinite(it.coef)) fail("interactions", "coefficient must be finite");
  }
  if (!(baseline_hazard > 0.0) || !std::isfinite(baseline_hazard)) fail("baseline_hazard", "must be > 0");
  if (!(mean_update_gap_days > 0.0)) fail("mean_update_gap_days", "must be > 0");
  if (!(transplant_hazard >= 0.0)) fail("transplant_hazard", "must be >= 0");
  if (!(loss_hazard >= 0.0)) fail("loss_hazard", "must be >= 0");
  if (!(horizon_days > 0.0) || !std::isfinite(horizon_days)) fail("horizon_days", "must be > 0");
  if (!(persistence >= 0.0 && persistence <= 1.0)) fail("persistence", "must lie in [0, 1]");
  if (!(redraw_probability >= 0.0 && redraw_probability <= 1.0)) fail("redraw_probability", "must lie in [0, 1]");
  if (!(binary_prevalence > 0.0 && binary_prevalence < 1.0)) fail("binary_prevalence", "must lie in (0, 1)");
}

nlohmann::json SimSpec::to_json() const {
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& it : interactions) inter.push_back({{"a", it.a}, {"b", it.b}, {"coef", it.coef}});
  return {{"n_patients", n_patients},
          {"numeric", numeric},
          {"binary", binary},
          {"categorical_levels", categorical_levels},
          {"beta", beta},
          {"interactions", inter},
          {"baseline_hazard", baseline_hazard},
          {"mean_update_gap_days", mean_update_gap_days},
          {"transplant_hazard", transplant_hazard},
          {"loss_hazard", loss_hazard},
          {"horizon_days", horizon_days},
          {"persistence", persistence},
          {"redraw_probability", redraw_probability},
          {"binary_prevalence", binary_prevalence},
          {"seed", seed}};
}

SimSpec SimSpec::from_json(const nlohmann::json& j) {
  constexpr std::string_view where = "simulate";
  json::require_keys(j,
                     {"preset", "n_patients", "numeric", "binary", "categorical_levels", "beta", "interactions",
                      "baseline_hazard", "mean_update_gap_days", "transplant_hazard", "loss_hazard", "horizon_days",
                      "persistence", "redraw_probability", "binary_prevalence", "seed", "threads"},
                     where);
  SimSpec s;
  std::string preset;
  json::read(j, "preset", preset, where);
  if (preset == "unos-like") {
    s = unos_like();
  } else if (!preset.empty()) {
    throw Error(ErrorCode::Config, "simulate.preset: unknown preset '" + preset + "'");
  }
  json::read(j, "n_patients", s.n_patients, where);
  json::read(j, "numeric", s.numeric, where);
  json::read(j, "binary", s.binary, where);
  json::read(j, "categorical_levels", s.categorical_levels, where);
  json::read(j, "beta", s.beta, where);
  if (auto it = j.find("interactions"); it != j.end()) {
    if (!it->is_array()) throw Error(ErrorCode::Config, "simulate.interactions: expected an array");
    s.interactions.clear();
    for (const auto& ij : *it) {
      json::require_keys(ij, {"a", "b", "coef"}, "simulate.interactions[]");
      SimSpec::Interaction in;
      json::read(ij, "a", in.a, "simulate.interactions[]");
      json::read(ij, "b", in.b, "simulate.interactions[]");
      json::read(ij, "coef", in.coef, "simulate.interactions[]");
      s.interactions.push_back(in);
    }
  }
  json::read(j, "baseline_hazard", s.baseline_hazard, where);
  json::read(j, "mean_update_gap_days", s.mean_update_gap_days, where);
  json::read(j, "transplant_hazard", s.transplant_hazard, where);
  json::read(j, "loss_hazard", s.loss_hazard, where);
  json::read(j, "horizon_days", s.horizon_days, where);
  json::read(j, "persistence", s.persistence, where);
  json::read(j, "redraw_probability", s.redraw_probability, where);
  json::read(j, "binary_prevalence", s.binary_prevalence, where);
  json::read(j, "seed", s.seed, where);
  json::read(j, "threads", s.threads, where);
  s.validate();
  return s;
}

double sim_linear_predictor(const SimSpec& spec, const Eigen::VectorXd& design) {
  double eta = 0.0;
  for (std::size_t k = 0; k < spec.beta.size(); ++k) eta += spec.beta[k] * design(static_cast<Eigen::Index>(k));
  for (const auto& it : spec.interactions) {
    eta += it.coef * design(static_cast<Eigen::Index>(it.a)) * design(static_cast<Eigen::Index>(it.b));
  }
  return eta;
}

namespace {

struct PatientDraw {
  PatientHistory history;
  SimPatientTruth truth;
};

// Latent state of one patient: numeric values, binary values, categorical levels.
struct State {
  std::vector<double> numeric;
  std::vector<double> binary;
  std::vector<std::size_t> level;
};

Eigen::VectorXd design_of(const SimSpec& spec, const State& s) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.design_width()));
  Eigen::Index o = 0;
  for (double v : s.numeric) d(o++) = v;
  for (double v : s.binary) d(o++) = v;
  for (std::size_t c = 0; c < spec.categorical_levels.size(); ++c) {
    if (s.level[c] > 0) d(o + static_cast<Eigen::Index>(s.level[c] - 1)) = 1.0;
    o += static_cast<Eigen::Index>(spec.categorical_levels[c] - 1);
  }
  return d;
}

Observation observe(std::int64_t day, const State& s) {
  Observation obs;
  obs.time_days = day;
  for (double v : s.numeric) obs.values.emplace_back(v);
  for (double v : s.binary) obs.values.emplace_back(v);
  for (auto l : s.level) obs.values.emplace_back("L" + std::to_string(l));
  return obs;
}

PatientDraw draw_patient(const SimSpec& spec, std::size_t index) {
  Rng rng(sub_seed(spec.seed, index));
  char id[32];
  std::snprintf(id, sizeof id, "P%06zu", index + 1);

  State s;
  for (std::size_t k = 0; k < spec.numeric; ++k) s.numeric.push_back(rng.normal());
  for (std::size_t k = 0; k < spec.binary; ++k) s.binary.push_back(rng.bernoulli(spec.binary_prevalence) ? 1.0 : 0.0);
  for (auto l : spec.categorical_levels) s.level.push_back(static_cast<std::size_t>(rng.below(l)));

  // Latent path on integer update days up to the horizon.
  std::vector<State> states{s};
  std::vector<double> days{0.0};
  const double innovation = std::sqrt(std::max(0.0, 1.0 - spec.persistence * spec.persistence));
  for (;;) {
    const double gap = std::max(1.0, std::round(rng.exponential(1.0 / spec.mean_update_gap_days)));
    const double day = days.back() + gap;
    if (day >= spec.horizon_days) break;
    for (auto& v : s.numeric) v = spec.persistence * v + innovation * rng.normal();
    for (auto& v : s.binary) {
      if (rng.bernoulli(spec.redraw_probability)) v = rng.bernoulli(spec.binary_prevalence) ? 1.0 : 0.0;
    }
    for (std::size_t c = 0; c < s.level.size(); ++c) {
      if (rng.bernoulli(spec.redraw_probability)) s.level[c] = static_cast<std::size_t>(rng.below(spec.categorical_levels[c]));
    }
    states.push_back(s);
    days.push_back(day);
  }

  PatientDraw out;
  out.truth.patient_id = id;
  out.truth.change_days = days;
  for (const auto& st : states) out.truth.linear_predictor.push_back(sim_linear_predictor(spec, design_of(spec, st)));

  // Death by inversion of the cumulative hazard.
  const double target = rng.exponential(1.0);
  double death = std::numeric_limits<double>::infinity();
  double cum = 0.0;
  for (std::size_t k = 0; k < days.size(); ++k) {
    const double end = k + 1 < days.size() ? days[k + 1] : spec.horizon_days;
    const double rate = spec.baseline_hazard * std::exp(out.truth.linear_predictor[k]);
    const double seg = rate * (end - days[k]);
    if (cum + seg >= target) {
      death = days[k] + (target - cum) / rate;
      break;
    }
    cum += seg;
  }
  const double transplant =
      spec.transplant_hazard > 0 ? rng.exponential(spec.transplant_hazard) : std::numeric_limits<double>::infinity();
  const double lost = spec.loss_hazard > 0 ? rng.exponential(spec.loss_hazard) : std::numeric_limits<double>::infinity();

  double t = spec.horizon_days;
  TrueCause cause = TrueCause::Administrative;
  if (death <= t) {
    t = death;
    cause = TrueCause::Death;
  }
  if (transplant < t) {
    t = transplant;
    cause = TrueCause::Transplant;
  }
  if (lost < t) {
    t = lost;
    cause = TrueCause::LostToFollowUp;
  }
  out.truth.event_time = t;
  out.truth.cause = cause;

  auto& h = out.history;
  h.patient_id = id;
  h.outcome.time_days = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(t)));
  switch (cause) {
    case TrueCause::Death: h.outcome.kind = OutcomeKind::DeathOnWaitlist; break;
    case TrueCause::Transplant: h.outcome.kind = OutcomeKind::TransplantCensor; break;
    case TrueCause::LostToFollowUp: h.outcome.kind = OutcomeKind::LostToFollowUpCensor; break;
    case TrueCause::Administrative: h.outcome.kind = OutcomeKind::AdministrativeCensor; break;
  }
  for (std::size_t k = 0; k < days.size(); ++k) {
    const auto day = static_cast<std::int64_t>(days[k]);
    if (k > 0 && day >= h.outcome.time_days) break;
    h.observations.push_back(observe(day, states[k]));
  }
  return out;
}

}  // namespace

SimResult generate(const SimSpec& spec) {
  spec.validate();
  std::vector<PatientDraw> draws(spec.n_patients);
  const std::size_t threads = std::clamp<std::size_t>(spec.threads, 1, spec.n_patients);
  if (threads == 1) {
    for (std::size_t i = 0; i < spec.n_patients; ++i) draws[i] = draw_patient(spec, i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < spec.n_patients; i += threads) draws[i] = draw_patient(spec, i);
      });
    }
    for (auto& th : pool) th.join();
  }

  SimResult r;
  r.cohort.covariates = spec.covariate_names();
  r.truth.beta = spec.beta;
  r.truth.beta.resize(spec.design_width(), 0.0);
  r.truth.interactions = spec.interactions;
  r.truth.baseline_hazard = spec.baseline_hazard;
  r.truth.horizon_days = spec.horizon_days;
  for (auto& d : draws) {
    r.cohort.patients.push_back(std::move(d.history));
    r.truth.patients.push_back(std::move(d.truth));
  }
  return r;
}

std::size_t SimTruth::find(const std::string& patient_id) const {
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (patients[i].patient_id == patient_id) return i;
  }
  throw Error(ErrorCode::NotFound, "unknown patient '" + patient_id + "'");
}

namespace {

double cumulative_hazard(const SimTruth& truth, const SimPatientTruth& p, double from, double to) {
  double h = 0.0;
  for (std::size_t k = 0; k < p.change_days.size(); ++k) {
    const double lo = std::max(from, p.change_days[k]);
    const double hi = std::min(to, k + 1 < p.change_days.size() ? p.change_days[k + 1] : truth.horizon_days);
    if (hi > lo) h += truth.baseline_hazard * std::exp(p.linear_predictor[k]) * (hi - lo);
  }
  return h;
}

}  // namespace

double true_survival(const SimTruth& truth, std::size_t patient, double t) {
  if (patient >= truth.patients.size()) throw Error(ErrorCode::NotFound, "patient index out of range");
  if (t > truth.horizon_days) throw Error(ErrorCode::InvalidArgument, "t beyond the simulated horizon");
  if (t <= 0.0) return 1.0;
  return std::exp(-cumulative_hazard(truth, truth.patients[patient], 0.0, t));
}

double true_survival(const SimTruth& truth, const SimPatientTruth& path, double t) {
  if (t > truth.horizon_days) throw Error(ErrorCode::InvalidArgument, "t beyond the simulated horizon");
  if (t <= 0.0) return 1.0;
  return std::exp(-cumulative_hazard(truth, path, 0.0, t));
}

SimPatientTruth truncated_path(const SimPatientTruth& patient, double cutoff) {
  SimPatientTruth out = patient;
  std::size_t keep = 1;
  while (keep < out.change_days.size() && out.change_days[keep] < cutoff) ++keep;
  out.change_days.resize(keep);
  out.linear_predictor.resize(keep);
  return out;
}

double true_survival(const SimTruth& truth, const std::string& patient_id, double t) {
  return true_survival(truth, truth.find(patient_id), t);
}

double true_conditional_survival(const SimTruth& truth, std::size_t patient, double anchor, double span) {
  if (patient >= truth.patients.size()) throw Error(ErrorCode::NotFound, "patient index out of range");
  const auto& p = truth.patients[patient];
  // The latent path ends at the horizon; the last segment is extended flat.
  double h = cumulative_hazard(truth, p, anchor, std::min(anchor + span, truth.horizon_days));
  if (anchor + span > truth.horizon_days) {
    const double lo = std::max(anchor, truth.horizon_days);
    h += truth.baseline_hazard * std::exp(p.linear_predictor.back()) * (anchor + span - lo);
  }
  return std::exp(-h);
}

Cohort inject_missingness(const Cohort& cohort, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::InvalidArgument, "missingness rate must lie in [0, 1)");
  Cohort out = cohort;
  if (rate == 0.0) return out;
  for (std::size_t i = 0; i < out.patients.size(); ++i) {
    Rng rng(sub_seed(seed, i));
    for (auto& obs : out.patients[i].observations) {
      for (auto& cell : obs.values) {
        if (!std::holds_alternative<double>(cell)) continue;
        if (rng.bernoulli(rate)) cell = std::monostate{};
      }
    }
  }
  return out;
}

nlohmann::json truth_to_json(const SimTruth& truth) {
  nlohmann::json j;
  j["beta"] = truth.beta;
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& it : truth.interactions) inter.push_back({{"a", it.a}, {"b", it.b}, {"coef", it.coef}});
  j["interactions"] = inter;
  j["baseline_hazard"] = truth.baseline_hazard;
  j["horizon_days"] = truth.horizon_days;
  auto& pats = j["patients"] = nlohmann::json::array();
  static constexpr const char* kCause[] = {"death", "transplant", "lost_to_follow_up", "administrative"};
  for (std::size_t i = 0; i < truth.patients.size(); ++i) {
    const auto& p = truth.patients[i];
    pats.push_back({{"patient_id", p.patient_id},
                    {"cause", kCause[static_cast<int>(p.cause)]},
                    {"event_time", p.event_time},
                    {"true_survival_1y", true_survival(truth, i, std::min(365.0, truth.horizon_days))}});
  }
  return j;
}

}  // namespace tvsurv
