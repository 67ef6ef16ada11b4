#include "tvsurv/cox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "tvsurv/csv.hpp"
#include "tvsurv/error.hpp"

namespace tvsurv {

void PenaltySpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::InvalidArgument, "lambda must be finite and >= 0");
  }
  if (!(l1_ratio >= 0.0 && l1_ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "l1_ratio must lie in [0, 1]");
  }
}

double CoxFit::linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != beta.size()) {
    throw Error(ErrorCode::SchemaMismatch, "covariate vector has " + std::to_string(x.size()) +
                                               " entries, model expects " + std::to_string(beta.size()));
  }
  return (x - covariate_means).dot(beta);
}

namespace {

// Sorted views of an episode table reused across likelihood evaluations.
struct RiskSets {
  std::vector<double> event_times;             // ascending, distinct
  std::vector<std::vector<std::size_t>> dying; // event rows at each time
  std::vector<std::size_t> by_stop_desc;
  std::vector<std::size_t> by_start_desc;
};

RiskSets build_risk_sets(const EpisodeTable& ep) {
  RiskSets rs;
  const std::size_t n = ep.rows();
  std::vector<std::size_t> events;
  for (std::size_t i = 0; i < n; ++i) {
    if (ep.event[i]) events.push_back(i);
  }
  std::stable_sort(events.begin(), events.end(), [&](auto a, auto b) { return ep.stop[a] < ep.stop[b]; });
  for (auto i : events) {
    if (rs.event_times.empty() || rs.event_times.back() != ep.stop[i]) {
      rs.event_times.push_back(ep.stop[i]);
      rs.dying.emplace_back();
    }
    rs.dying.back().push_back(i);
  }
  rs.by_stop_desc.resize(n);
  rs.by_start_desc.resize(n);
  std::iota(rs.by_stop_desc.begin(), rs.by_stop_desc.end(), 0);
  std::iota(rs.by_start_desc.begin(), rs.by_start_desc.end(), 0);
  std::stable_sort(rs.by_stop_desc.begin(), rs.by_stop_desc.end(),
                   [&](auto a, auto b) { return ep.stop[a] > ep.stop[b]; });
  std::stable_sort(rs.by_start_desc.begin(), rs.by_start_desc.end(),
                   [&](auto a, auto b) { return ep.start[a] > ep.start[b]; });
  return rs;
}

struct Evaluation {
  double value = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
  // Breslow denominators sum exp(eta) at each event time, scaled by exp(-shift).
  std::vector<double> s0;
  double shift = 0.0;
};

enum class Need { Value, Score, Information };

Evaluation evaluate(const EpisodeTable& ep, const RiskSets& rs, const Eigen::VectorXd& means,
                    const Eigen::VectorXd& beta, Need need) {
  const auto p = static_cast<Eigen::Index>(ep.features());
  const std::size_t n = ep.rows();
  Evaluation out;
  Eigen::VectorXd eta(static_cast<Eigen::Index>(n));
  if (p > 0) {
    eta = ep.x * beta;
    eta.array() -= means.dot(beta);
  } else {
    eta.setZero();
  }
  out.shift = n > 0 ? eta.maxCoeff() : 0.0;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(eta(static_cast<Eigen::Index>(i)) - out.shift);

  const bool want_score = need != Need::Value;
  const bool want_info = need == Need::Information;
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(want_score ? p : 0);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(want_info ? p : 0, want_info ? p : 0);
  if (want_score) out.score = Eigen::VectorXd::Zero(p);
  if (want_info) out.information = Eigen::MatrixXd::Zero(p, p);
  out.s0.assign(rs.event_times.size(), 0.0);

  Eigen::VectorXd xc(p);
  auto accumulate = [&](std::size_t i, double sign) {
    const double wi = sign * w[i];
    s0 += wi;
    if (!want_score) return;
    xc = ep.x.row(static_cast<Eigen::Index>(i)).transpose() - means;
    s1.noalias() += wi * xc;
    if (want_info) s2.selfadjointView<Eigen::Lower>().rankUpdate(xc, wi);
  };

  std::size_t add = 0;
  std::size_t rem = 0;
  for (std::size_t j = rs.event_times.size(); j-- > 0;) {
    const double t = rs.event_times[j];
    while (add < n && ep.stop[rs.by_stop_desc[add]] >= t) accumulate(rs.by_stop_desc[add++], +1.0);
    while (rem < n && ep.start[rs.by_start_desc[rem]] >= t) accumulate(rs.by_start_desc[rem++], -1.0);
    out.s0[j] = s0;
    const double d = static_cast<double>(rs.dying[j].size());
    double eta_sum = 0.0;
    for (auto i : rs.dying[j]) eta_sum += eta(static_cast<Eigen::Index>(i));
    out.value += eta_sum - d * (std::log(s0) + out.shift);
    if (!want_score) continue;
    const Eigen::VectorXd mu = s1 / s0;
    for (auto i : rs.dying[j]) {
      out.score.noalias() += ep.x.row(static_cast<Eigen::Index>(i)).transpose() - means;
    }
    out.score.noalias() -= d * mu;
    if (want_info) {
      Eigen::MatrixXd m2 = s2.selfadjointView<Eigen::Lower>();
      out.information.noalias() += d * (m2 / s0 - mu * mu.transpose());
    }
  }
  return out;
}

double penalty_value(const PenaltySpec& pen, const Eigen::VectorXd& beta) {
  if (pen.lambda == 0.0) return 0.0;
  return pen.lambda * (pen.l1_ratio * beta.lpNorm<1>() + 0.5 * (1.0 - pen.l1_ratio) * beta.squaredNorm());
}

double soft_threshold(double z, double g) {
  if (z > g) return z - g;
  if (z < -g) return z + g;
  return 0.0;
}

// argmin_z  g'(z - b) + 1/2 (z - b)' H (z - b) + l1 |z|_1
Eigen::VectorXd solve_quadratic_l1(const Eigen::MatrixXd& h, const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& b, double l1) {
  const auto p = b.size();
  Eigen::VectorXd z = b;
  Eigen::VectorXd r = g;  // gradient of the quadratic at z
  for (int sweep = 0; sweep < 10000; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double hjj = h(j, j);
      if (!(hjj > 1e-14)) {
        if (l1 > 0.0 && z(j) != 0.0 && std::abs(r(j)) <= l1) {
          const double delta = -z(j);
          r.noalias() += h.col(j) * delta;
          z(j) = 0.0;
          max_delta = std::max(max_delta, std::abs(delta));
        }
        continue;
      }
      const double zj = soft_threshold(hjj * z(j) - r(j), l1) / hjj;
      const double delta = zj - z(j);
      if (delta != 0.0) {
        r.noalias() += h.col(j) * delta;
        z(j) = zj;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    if (max_delta < 1e-13) break;
  }
  return z;
}

HazardCurve breslow(const EpisodeTable& ep, const RiskSets& rs, const Evaluation& ev) {
  HazardCurve h;
  h.times = rs.event_times;
  const std::size_t D = rs.event_times.size();
  h.events.resize(D);
  h.at_risk.resize(D);
  h.increments.resize(D);
  h.cumulative.resize(D);
  const double scale = std::exp(ev.shift);
  double cum = 0.0;
  for (std::size_t j = 0; j < D; ++j) {
    const double d = static_cast<double>(rs.dying[j].size());
    h.events[j] = d;
    h.at_risk[j] = ev.s0[j] * scale;
    h.increments[j] = d / h.at_risk[j];
    if (!std::isfinite(h.increments[j])) h.increments[j] = (d / ev.s0[j]) / scale;
    cum += h.increments[j];
    h.cumulative[j] = cum;
  }
  (void)ep;
  return h;
}

Eigen::VectorXd column_means(const EpisodeTable& ep) {
  if (ep.rows() == 0) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ep.features()));
  return ep.x.colwise().mean().transpose();
}

}  // namespace

PartialLikelihood partial_likelihood(const EpisodeTable& episodes, const Eigen::VectorXd& means,
                                     const Eigen::VectorXd& beta, bool with_information) {
  const RiskSets rs = build_risk_sets(episodes);
  Evaluation ev = evaluate(episodes, rs, means, beta, with_information ? Need::Information : Need::Score);
  return {ev.value, std::move(ev.score), std::move(ev.information)};
}

CoxFit fit_cox_td(const EpisodeTable& episodes, const PenaltySpec& penalty, const CoxOptions& options) {
  penalty.validate();
  if (episodes.event_count() == 0) throw Error(ErrorCode::NoEvents, "no event rows to fit");
  for (Eigen::Index i = 0; i < episodes.x.size(); ++i) {
    if (!std::isfinite(episodes.x.data()[i])) throw Error(ErrorCode::InvalidArgument, "non-finite covariate");
  }

  const auto p = static_cast<Eigen::Index>(episodes.features());
  const double n = static_cast<double>(episodes.rows());
  const RiskSets rs = build_risk_sets(episodes);

  CoxFit fit;
  fit.feature_names = episodes.feature_names;
  fit.penalty = penalty;
  fit.covariate_means = column_means(episodes);
  fit.beta = Eigen::VectorXd::Zero(p);

  const double l1 = penalty.lambda * penalty.l1_ratio;
  const double l2 = penalty.lambda * (1.0 - penalty.l1_ratio);
  auto objective = [&](const Eigen::VectorXd& b, double loglik) {
    return -loglik / n + penalty_value(penalty, b);
  };

  Evaluation ev = evaluate(episodes, rs, fit.covariate_means, fit.beta, Need::Information);
  fit.diagnostics.null_log_likelihood = ev.value;
  double f = objective(fit.beta, ev.value);
  if (!std::isfinite(f)) throw Error(ErrorCode::Diverged, "non-finite loss at iteration 0");

  // Columns that carry no information stay at zero.
  std::vector<Eigen::Index> live;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (ev.information(j, j) > 0.0) live.push_back(j);
  }

  auto& diag = fit.diagnostics;
  for (std::size_t it = 1; it <= options.max_iterations && p > 0 && !live.empty(); ++it) {
    diag.iterations = it;
    const auto q = static_cast<Eigen::Index>(live.size());
    Eigen::VectorXd g(q), b(q);
    Eigen::MatrixXd h(q, q);
    for (Eigen::Index a = 0; a < q; ++a) {
      g(a) = -ev.score(live[a]) / n + l2 * fit.beta(live[a]);
      b(a) = fit.beta(live[a]);
      for (Eigen::Index c = 0; c < q; ++c) h(a, c) = ev.information(live[a], live[c]) / n;
      h(a, a) += l2;
    }

    Eigen::VectorXd z;
    if (l1 == 0.0) {
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
      z = b - ldlt.solve(g);
      if (!z.allFinite()) z = solve_quadratic_l1(h, g, b, 0.0);
    } else {
      z = solve_quadratic_l1(h, g, b, l1);
    }
    const Eigen::VectorXd dir = z - b;
    const double dir_max = dir.size() ? dir.cwiseAbs().maxCoeff() : 0.0;

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate = fit.beta;
    Evaluation cand_ev;
    double f_new = f;
    for (int halving = 0; halving < 60; ++halving) {
      candidate = fit.beta;
      for (Eigen::Index a = 0; a < q; ++a) candidate(live[a]) = b(a) + step * dir(a);
      cand_ev = evaluate(episodes, rs, fit.covariate_means, candidate, Need::Value);
      f_new = objective(candidate, cand_ev.value);
      if (std::isfinite(f_new) && f_new <= f) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!std::isfinite(f_new) && dir_max * step > options.tolerance) {
        throw Error(ErrorCode::Diverged, "non-finite loss at iteration " + std::to_string(it));
      }
      // No descent left along the Newton direction: stationary to working precision.
      diag.converged = dir_max < 1e-4;
      if (!diag.converged) diag.message = "line search stalled";
      break;
    }
    const double moved = dir_max * step;
    fit.beta = candidate;
    f = f_new;
    ev = evaluate(episodes, rs, fit.covariate_means, fit.beta, Need::Information);
    if (!std::isfinite(ev.value)) {
      throw Error(ErrorCode::Diverged, "non-finite loss at iteration " + std::to_string(it));
    }
    if (moved < options.tolerance) {
      diag.converged = true;
      break;
    }
  }
  if (p == 0 || live.empty()) diag.converged = true;
  if (!diag.converged && diag.message.empty()) diag.message = "iteration limit reached";

  // Identifiability on the columns the solution actually uses.
  std::vector<Eigen::Index> active;
  for (auto j : live) {
    if (l1 == 0.0 || fit.beta(j) != 0.0) active.push_back(j);
  }
  if (!active.empty()) {
    const auto q = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd h(q, q);
    for (Eigen::Index a = 0; a < q; ++a) {
      for (Eigen::Index c = 0; c < q; ++c) h(a, c) = ev.information(active[a], active[c]) / n;
      h(a, a) += l2;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (eig.eigenvalues().minCoeff() <= 1e-10 * std::max(top, 1e-300)) {
      diag.identifiable = false;
      diag.converged = false;
      diag.message = "information matrix singular: coefficients not identifiable";
    }
  }

  diag.objective = f;
  diag.log_likelihood = ev.value;
  fit.baseline = breslow(episodes, rs, ev);
  return fit;
}

HazardCurve baseline_hazard(const CoxFit& fit, const EpisodeTable& episodes) {
  if (static_cast<Eigen::Index>(episodes.features()) != fit.beta.size()) {
    throw Error(ErrorCode::SchemaMismatch, "episode width differs from the fitted model");
  }
  const RiskSets rs = build_risk_sets(episodes);
  const Evaluation ev = evaluate(episodes, rs, fit.covariate_means, fit.beta, Need::Value);
  return breslow(episodes, rs, ev);
}

SurvivalCurve predict_survival(const CoxFit& fit, const CovariatePath& path, const PredictOptions& options) {
  if (path.values.empty()) throw Error(ErrorCode::InvalidArgument, "empty covariate path");
  std::vector<double> risk(path.values.size());
  for (std::size_t k = 0; k < path.values.size(); ++k) risk[k] = std::exp(fit.linear_predictor(path.values[k]));

  SurvivalCurve curve;
  const auto& base = fit.baseline;
  double h = 0.0;
  for (std::size_t j = 0; j < base.times.size() && base.times[j] <= options.horizon; ++j) {
    h += risk[path.segment_at(base.times[j])] * base.increments[j];
    curve.times.push_back(base.times[j]);
    curve.values.push_back(std::exp(-h));
  }
  curve.extended = base.times.empty() || options.horizon > base.times.back();
  return curve;
}

SurvivalCurve predict_survival(const CoxFit& fit, const Eigen::VectorXd& x, const PredictOptions& options) {
  return predict_survival(fit, CovariatePath::constant(x), options);
}

nlohmann::json CoxFit::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["beta"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  j["covariate_means"] = std::vector<double>(covariate_means.data(), covariate_means.data() + covariate_means.size());
  j["feature_names"] = feature_names;
  j["penalty"] = {{"lambda", penalty.lambda}, {"l1_ratio", penalty.l1_ratio}};
  j["baseline"] = {{"times", baseline.times},         {"events", baseline.events},
                   {"at_risk", baseline.at_risk},     {"increments", baseline.increments},
                   {"cumulative", baseline.cumulative}};
  j["diagnostics"] = {{"converged", diagnostics.converged},
                      {"identifiable", diagnostics.identifiable},
                      {"iterations", diagnostics.iterations},
                      {"objective", diagnostics.objective},
                      {"log_likelihood", diagnostics.log_likelihood},
                      {"null_log_likelihood", diagnostics.null_log_likelihood},
                      {"message", diagnostics.message}};
  return j;
}

CoxFit CoxFit::from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw Error(ErrorCode::Parse, "unsupported Cox model version");
  CoxFit fit;
  const auto beta = j.at("beta").get<std::vector<double>>();
  const auto means = j.at("covariate_means").get<std::vector<double>>();
  fit.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  fit.covariate_means = Eigen::Map<const Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
  fit.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  fit.penalty.lambda = j.at("penalty").at("lambda").get<double>();
  fit.penalty.l1_ratio = j.at("penalty").at("l1_ratio").get<double>();
  const auto& b = j.at("baseline");
  fit.baseline.times = b.at("times").get<std::vector<double>>();
  fit.baseline.events = b.at("events").get<std::vector<double>>();
  fit.baseline.at_risk = b.at("at_risk").get<std::vector<double>>();
  fit.baseline.increments = b.at("increments").get<std::vector<double>>();
  fit.baseline.cumulative = b.at("cumulative").get<std::vector<double>>();
  const auto& d = j.at("diagnostics");
  fit.diagnostics.converged = d.at("converged").get<bool>();
  fit.diagnostics.identifiable = d.at("identifiable").get<bool>();
  fit.diagnostics.iterations = d.at("iterations").get<std::size_t>();
  fit.diagnostics.objective = d.at("objective").get<double>();
  fit.diagnostics.log_likelihood = d.at("log_likelihood").get<double>();
  fit.diagnostics.null_log_likelihood = d.at("null_log_likelihood").get<double>();
  fit.diagnostics.message = d.at("message").get<std::string>();
  return fit;
}

WaldRow wald_row(std::string feature, double coefficient, double std_error) {
  WaldRow row;
  row.feature = std::move(feature);
  row.coefficient = coefficient;
  row.hazard_ratio = std::exp(coefficient);
  row.std_error = std_error;
  const double z = std_error > 0.0 ? coefficient / std_error : 0.0;
  row.p_value = std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
  return row;
}

WaldReport wald_stats(const EpisodeTable& episodes, std::span<const std::size_t> selected,
                      const CoxOptions& options) {
  const EpisodeTable sub = episodes.select_features(selected);
  std::string names;
  for (const auto& f : sub.feature_names) names += (names.empty() ? "" : ", ") + f;

  WaldReport report;
  report.label = "unpenalized";
  if (selected.empty()) return report;
  const CoxFit fit = fit_cox_td(sub, PenaltySpec{0.0, 1.0}, options);
  const PartialLikelihood pl = partial_likelihood(sub, fit.covariate_means, fit.beta, true);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(pl.information);
  const auto& ev = eig.eigenvalues();
  if (!fit.diagnostics.identifiable || ev.minCoeff() <= 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300)) {
    throw Error(ErrorCode::SingularInformation, "information matrix singular for {" + names + "}");
  }
  const Eigen::MatrixXd cov =
      eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
    report.rows.push_back(wald_row(sub.feature_names[static_cast<std::size_t>(j)], fit.beta(j), std::sqrt(cov(j, j))));
  }
  return report;
}

WaldReport pool_wald(std::span<const WaldReport> reports) {
  if (reports.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to pool");
  const std::size_t m = reports.size();
  const std::size_t k = reports.front().rows.size();
  for (const auto& r : reports) {
    if (r.rows.size() != k) throw Error(ErrorCode::SchemaMismatch, "reports cover different features");
    for (std::size_t i = 0; i < k; ++i) {
      if (r.rows[i].feature != reports.front().rows[i].feature) {
        throw Error(ErrorCode::SchemaMismatch, "reports cover different features");
      }
    }
  }
  WaldReport pooled;
  pooled.label = "pooled";
  for (std::size_t i = 0; i < k; ++i) {
    double mean = 0.0;
    double within = 0.0;
    for (const auto& r : reports) {
      mean += r.rows[i].coefficient;
      within += r.rows[i].std_error * r.rows[i].std_error;
    }
    mean /= static_cast<double>(m);
    within /= static_cast<double>(m);
    double between = 0.0;
    if (m > 1) {
      for (const auto& r : reports) between += (r.rows[i].coefficient - mean) * (r.rows[i].coefficient - mean);
      between /= static_cast<double>(m - 1);
    }
    const double total = within + (1.0 + 1.0 / static_cast<double>(m)) * between;
    pooled.rows.push_back(wald_row(reports.front().rows[i].feature, mean, std::sqrt(total)));
  }
  return pooled;
}

void write_wald_csv(std::ostream& out, const WaldReport& report) {
  std::vector<std::size_t> order(report.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return report.rows[a].p_value < report.rows[b].p_value; });
  out << "variable,coef,HR,std_err,p\n";
  for (auto i : order) {
    const auto& r = report.rows[i];
    out << csv::escape(r.feature) << ',' << csv::format_double(r.coefficient) << ','
        << csv::format_double(r.hazard_ratio) << ',' << csv::format_double(r.std_error) << ','
        << csv::format_double(r.p_value) << '\n';
  }
}

std::vector<std::size_t> elasticnet_select(const EpisodeTable& episodes, const PenaltySpec& penalty,
                                           const CoxOptions& options) {
  const CoxFit fit = fit_cox_td(episodes, penalty, options);
  std::vector<std::size_t> keep;
  for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
    if (std::abs(fit.beta(j)) > 1e-8) keep.push_back(static_cast<std::size_t>(j));
  }
  return keep;
}

double lambda_max(const EpisodeTable& episodes, double l1_ratio) {
  if (episodes.event_count() == 0) throw Error(ErrorCode::NoEvents, "no event rows");
  const Eigen::VectorXd means = column_means(episodes);
  const RiskSets rs = build_risk_sets(episodes);
  const Evaluation ev = evaluate(episodes, rs, means, Eigen::VectorXd::Zero(means.size()), Need::Score);
  const double g = ev.score.size() ? ev.score.cwiseAbs().maxCoeff() / static_cast<double>(episodes.rows()) : 0.0;
  return g / std::max(l1_ratio, 1e-3);
}

}  // namespace tvsurv
