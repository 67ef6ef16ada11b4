#include "tvsurv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "tvsurv/csv.hpp"
#include "tvsurv/error.hpp"

namespace tvsurv {

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || b != c) throw Error(ErrorCode::InvalidArgument, "metric inputs differ in length");
}

// Counts of inserted values strictly below / equal to a compressed rank.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  std::uint64_t prefix(std::size_t i) const {  // sum over [0, i)
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

double logit(double p) {
  p = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(p / (1.0 - p));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Concordance harrell_c(std::span<const double> risk, std::span<const double> time,
                      std::span<const std::uint8_t> event) {
  check_sizes(risk.size(), time.size(), event.size());
  const std::size_t n = risk.size();
  std::vector<double> levels(risk.begin(), risk.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  auto rank = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), r) - levels.begin());
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] > time[b]; });

  // Walk times from the largest down; the tree holds every j with T_j > current time.
  Fenwick tree(levels.size());
  std::uint64_t inserted = 0;
  std::uint64_t concordant = 0, tied = 0, comparable = 0;
  std::size_t k = 0;
  while (k < n) {
    std::size_t end = k;
    while (end < n && time[order[end]] == time[order[k]]) ++end;
    for (std::size_t q = k; q < end; ++q) {
      const std::size_t i = order[q];
      if (!event[i]) continue;
      const std::size_t r = rank(risk[i]);
      const std::uint64_t below = tree.prefix(r);
      const std::uint64_t upto = tree.prefix(r + 1);
      concordant += below;
      tied += upto - below;
      comparable += inserted;
    }
    for (std::size_t q = k; q < end; ++q) {
      tree.add(rank(risk[order[q]]));
      ++inserted;
    }
    k = end;
  }
  Concordance c;
  c.concordant = static_cast<double>(concordant);
  c.tied = static_cast<double>(tied);
  c.comparable = static_cast<double>(comparable);
  c.defined = comparable > 0;
  c.value = c.defined ? (c.concordant + 0.5 * c.tied) / c.comparable : 0.0;
  return c;
}

Label1y label_at(double time, bool event, double horizon) {
  if (event && time <= horizon) return Label1y::Positive;
  if (time > horizon || (!event && time >= horizon)) return Label1y::Negative;
  return Label1y::Excluded;
}

Labels labels_at(std::span<const double> scores, std::span<const double> time,
                 std::span<const std::uint8_t> event, double horizon) {
  check_sizes(scores.size(), time.size(), event.size());
  Labels out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Label1y l = label_at(time[i], event[i] != 0, horizon);
    if (l == Label1y::Excluded) {
      ++out.excluded;
      continue;
    }
    out.scores.push_back(scores[i]);
    out.positive.push_back(l == Label1y::Positive ? 1 : 0);
  }
  return out;
}

Discrimination auroc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw Error(ErrorCode::InvalidArgument, "metric inputs differ in length");
  const std::size_t n = scores.size();
  Discrimination d;
  for (auto p : positive) (p ? d.positives : d.negatives) += 1;
  d.defined = d.positives > 0 && d.negatives > 0;
  if (!d.defined) return d;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps the rank sum integral.
  std::uint64_t rank_sum2 = 0;
  std::size_t k = 0;
  while (k < n) {
    std::size_t end = k;
    while (end < n && scores[order[end]] == scores[order[k]]) ++end;
    const std::uint64_t midrank2 = static_cast<std::uint64_t>(k + 1 + end);
    for (std::size_t q = k; q < end; ++q) {
      if (positive[order[q]]) rank_sum2 += midrank2;
    }
    k = end;
  }
  const double np = static_cast<double>(d.positives);
  const double u = 0.5 * static_cast<double>(rank_sum2) - np * (np + 1.0) / 2.0;
  d.value = u / (np * static_cast<double>(d.negatives));
  return d;
}

Discrimination auprc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw Error(ErrorCode::InvalidArgument, "metric inputs differ in length");
  const std::size_t n = scores.size();
  Discrimination d;
  for (auto p : positive) (p ? d.positives : d.negatives) += 1;
  d.defined = d.positives > 0 && d.negatives > 0;
  if (!d.defined) return d;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::size_t tp = 0, seen = 0;
  double ap = 0.0;
  std::size_t k = 0;
  while (k < n) {
    std::size_t end = k;
    std::size_t tp_group = 0;
    while (end < n && scores[order[end]] == scores[order[k]]) tp_group += positive[order[end++]] ? 1 : 0;
    tp += tp_group;
    seen = end;
    if (tp_group > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += precision * static_cast<double>(tp_group) / static_cast<double>(d.positives);
    }
    k = end;
  }
  d.value = ap;
  return d;
}

Discrimination auroc_1y(std::span<const double> risk, std::span<const double> time,
                        std::span<const std::uint8_t> event, double horizon) {
  const Labels l = labels_at(risk, time, event, horizon);
  Discrimination d = auroc(l.scores, l.positive);
  d.excluded = l.excluded;
  return d;
}

Discrimination auprc_1y(std::span<const double> risk, std::span<const double> time,
                        std::span<const std::uint8_t> event, double horizon) {
  const Labels l = labels_at(risk, time, event, horizon);
  Discrimination d = auprc(l.scores, l.positive);
  d.excluded = l.excluded;
  return d;
}

BrierResult brier_at(std::span<const double> survival_at_t, std::span<const double> time,
                     std::span<const std::uint8_t> event, const SurvivalCurve& censoring, double t) {
  check_sizes(survival_at_t.size(), time.size(), event.size());
  BrierResult r;
  const std::size_t n = time.size();
  if (n == 0) return r;
  const double g_t = censoring.at(t);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = survival_at_t[i];
    if (time[i] <= t && event[i]) {
      const double g = censoring.before(time[i]);
      if (g > 0.0) {
        sum += s * s / g;
      } else {
        ++r.dropped;
      }
    } else if (time[i] > t) {
      if (g_t > 0.0) {
        sum += (1.0 - s) * (1.0 - s) / g_t;
      } else {
        ++r.dropped;
      }
    }
  }
  r.value = sum / static_cast<double>(n);
  return r;
}

BrierResult brier_1y(std::span<const SurvivalCurve> curves, std::span<const double> time,
                     std::span<const std::uint8_t> event, const SurvivalCurve& censoring, double horizon) {
  std::vector<double> s(curves.size());
  for (std::size_t i = 0; i < curves.size(); ++i) s[i] = curves[i].at(horizon);
  return brier_at(s, time, event, censoring, horizon);
}

std::vector<double> ibs_grid(std::span<const double> time, std::span<const std::uint8_t> event, double horizon) {
  std::vector<double> grid{0.0};
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (event[i] && time[i] > 0.0 && time[i] < horizon) grid.push_back(time[i]);
  }
  grid.push_back(horizon);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

BrierResult ibs_1y(std::span<const SurvivalCurve> curves, std::span<const double> time,
                   std::span<const std::uint8_t> event, const SurvivalCurve& censoring, double horizon) {
  check_sizes(curves.size(), time.size(), event.size());
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "IBS horizon must be positive");
  const std::vector<double> grid = ibs_grid(time, event, horizon);
  std::vector<double> bs(grid.size());
  std::vector<double> s(curves.size());
  BrierResult out;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (std::size_t i = 0; i < curves.size(); ++i) s[i] = curves[i].at(grid[k]);
    const BrierResult b = brier_at(s, time, event, censoring, grid[k]);
    bs[k] = b.value;
    out.dropped = std::max(out.dropped, b.dropped);
  }
  double area = 0.0;
  for (std::size_t k = 1; k < grid.size(); ++k) area += 0.5 * (bs[k] + bs[k - 1]) * (grid[k] - grid[k - 1]);
  out.value = area / horizon;
  return out;
}

Classification classification_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  Classification c;
  c.tp = tp;
  c.fp = fp;
  c.fn = fn;
  c.tn = tn;
  const double n = static_cast<double>(tp + fp + fn + tn);
  c.accuracy = n > 0 ? static_cast<double>(tp + tn) / n : 0.0;
  c.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  c.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  c.f1 = c.precision + c.recall > 0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
  return c;
}

Classification classify(std::span<const double> probability, std::span<const std::uint8_t> positive,
                        double threshold) {
  if (probability.size() != positive.size()) {
    throw Error(ErrorCode::InvalidArgument, "metric inputs differ in length");
  }
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < probability.size(); ++i) {
    const bool predicted = probability[i] >= threshold;
    if (positive[i]) {
      (predicted ? tp : fn) += 1;
    } else {
      (predicted ? fp : tn) += 1;
    }
  }
  return classification_from_counts(tp, fp, fn, tn);
}

Classification classification_1y(std::span<const double> probability, std::span<const double> time,
                                 std::span<const std::uint8_t> event, double threshold, double horizon) {
  const Labels l = labels_at(probability, time, event, horizon);
  Classification c = classify(l.scores, l.positive, threshold);
  c.excluded = l.excluded;
  return c;
}

double Recalibration::apply(double p) const { return sigmoid(a + b * logit(p)); }

std::vector<double> Recalibration::apply(std::span<const double> p) const {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = apply(p[i]);
  return out;
}

Recalibration recalibrate(std::span<const double> probability, std::span<const std::uint8_t> positive) {
  if (probability.size() != positive.size()) {
    throw Error(ErrorCode::InvalidArgument, "metric inputs differ in length");
  }
  std::size_t pos = 0;
  for (auto y : positive) pos += y ? 1 : 0;
  if (pos == 0 || pos == positive.size()) {
    throw Error(ErrorCode::InvalidArgument, "recalibration needs both classes");
  }
  constexpr double kCap = 20.0;
  const std::size_t n = probability.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = logit(probability[i]);

  auto nll = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = a + b * x[i];
      // log(1 + e^z) - y z, stable in both tails
      s += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - (positive[i] ? z : 0.0);
    }
    return s;
  };

  Recalibration r;
  double f = nll(r.a, r.b);
  for (std::size_t it = 1; it <= 200; ++it) {
    r.iterations = it;
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = sigmoid(r.a + r.b * x[i]);
      const double res = mu - (positive[i] ? 1.0 : 0.0);
      const double w = mu * (1.0 - mu);
      ga += res;
      gb += res * x[i];
      haa += w;
      hab += w * x[i];
      hbb += w * x[i] * x[i];
    }
    const bool pinned = r.capped && std::abs(r.b) >= kCap && gb * r.b < 0.0;
    double da, db;
    const double det = haa * hbb - hab * hab;
    if (pinned || !(det > 1e-300)) {
      da = haa > 1e-300 ? -ga / haa : -ga;
      db = 0.0;
    } else {
      da = -(hbb * ga - hab * gb) / det;
      db = -(haa * gb - hab * ga) / det;
    }
    double step = 1.0;
    double a_new = r.a, b_new = r.b, f_new = f;
    bool moved = false;
    for (int h = 0; h < 60; ++h) {
      a_new = r.a + step * da;
      b_new = r.b + step * db;
      bool hit = false;
      if (std::abs(b_new) > kCap) {
        b_new = std::copysign(kCap, b_new);
        hit = true;
      }
      f_new = nll(a_new, b_new);
      if (std::isfinite(f_new) && f_new <= f) {
        moved = true;
        if (hit) r.capped = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
    const double change = std::max(std::abs(a_new - r.a), std::abs(b_new - r.b));
    r.a = a_new;
    r.b = b_new;
    f = f_new;
    if (change < 1e-8) break;
  }
  return r;
}

std::vector<CalibrationPoint> calibration_curve(std::span<const double> probability,
                                                std::span<const std::uint8_t> positive, std::size_t bins) {
  if (bins < 2) throw Error(ErrorCode::InvalidArgument, "calibration curve needs at least 2 bins");
  if (probability.size() != positive.size()) {
    throw Error(ErrorCode::InvalidArgument, "metric inputs differ in length");
  }
  std::vector<double> sum_p(bins, 0.0), sum_y(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < probability.size(); ++i) {
    const double p = std::clamp(probability[i], 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(p * static_cast<double>(bins)), bins - 1);
    sum_p[b] += p;
    sum_y[b] += positive[i] ? 1.0 : 0.0;
    ++count[b];
  }
  std::vector<CalibrationPoint> out;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    out.push_back({sum_p[b] / c, sum_y[b] / c, count[b]});
  }
  return out;
}

const std::array<const char*, EvalReport::kMetrics>& EvalReport::column_names() {
  static const std::array<const char*, kMetrics> names{
      "Accuracy (1Y)",    "Precision (1Y)",  "Recall (1Y)", "F1 Score (1Y)", "Brier Score (1Y)",
      "IBS (in 1 Year)", "AUROC (1Y)",      "AUPRC (1Y)",  "C-Index"};
  return names;
}

std::vector<EvalReport> pool_reports(std::span<const EvalReport> reports) {
  std::vector<EvalReport> out;
  std::vector<bool> used(reports.size(), false);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (used[i]) continue;
    std::vector<const EvalReport*> group;
    for (std::size_t j = i; j < reports.size(); ++j) {
      if (!used[j] && reports[j].model == reports[i].model && reports[j].mode == reports[i].mode) {
        used[j] = true;
        group.push_back(&reports[j]);
      }
    }
    EvalReport mean, sd;
    mean.model = sd.model = reports[i].model;
    mean.mode = sd.mode = reports[i].mode;
    mean.imputation = "pooled";
    sd.imputation = "sd";
    const double m = static_cast<double>(group.size());
    for (std::size_t k = 0; k < EvalReport::kMetrics; ++k) {
      double s = 0.0;
      for (auto* r : group) s += r->values[k];
      mean.values[k] = s / m;
      double ss = 0.0;
      for (auto* r : group) ss += (r->values[k] - mean.values[k]) * (r->values[k] - mean.values[k]);
      sd.values[k] = group.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
    }
    out.push_back(mean);
    out.push_back(sd);
  }
  return out;
}

void write_eval_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "model,mode,imputation";
  for (const char* name : EvalReport::column_names()) out << ',' << csv::escape(name);
  out << '\n';
  for (const auto& r : reports) {
    out << csv::escape(r.model) << ',' << csv::escape(r.mode) << ',' << csv::escape(r.imputation);
    for (double v : r.values) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

void write_calibration_csv(std::ostream& out, std::span<const CalibrationSeries> series) {
  out << "model,mode,imputation,bin_mean_predicted,observed_rate,count\n";
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      out << csv::escape(s.model) << ',' << csv::escape(s.mode) << ',' << csv::escape(s.imputation) << ','
          << csv::format_double(p.mean_predicted) << ',' << csv::format_double(p.observed_rate) << ','
          << p.count << '\n';
    }
  }
}

}  // namespace tvsurv
