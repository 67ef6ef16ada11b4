#include "tvsurv/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "tvsurv/error.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

bool CovariateMatrix::Column::missing(std::size_t row) const {
  return kind == ColumnKind::Numeric ? std::isnan(numeric[row]) : labels[row].empty();
}

std::size_t CovariateMatrix::Column::missing_count() const {
  const std::size_t n = kind == ColumnKind::Numeric ? numeric.size() : labels.size();
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) k += missing(i) ? 1 : 0;
  return k;
}

const CovariateMatrix::Column* CovariateMatrix::column(std::string_view name) const {
  for (const auto& c : columns) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

CovariateMatrix CovariateMatrix::from_cohort(const Cohort& cohort) {
  CovariateMatrix m;
  const std::size_t p = cohort.covariates.size();
  const std::size_t n = cohort.observation_count();
  m.columns.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    m.columns[j].name = cohort.covariates[j];
    m.columns[j].kind = ColumnKind::Numeric;
    for (const auto& pt : cohort.patients) {
      bool decided = false;
      for (const auto& obs : pt.observations) {
        if (std::holds_alternative<std::string>(obs.values[j])) {
          m.columns[j].kind = ColumnKind::Categorical;
          decided = true;
          break;
        }
        if (std::holds_alternative<double>(obs.values[j])) {
          decided = true;
          break;
        }
      }
      if (decided) break;
    }
    if (m.columns[j].kind == ColumnKind::Numeric) {
      m.columns[j].numeric.reserve(n);
    } else {
      m.columns[j].labels.reserve(n);
    }
  }
  m.keys.reserve(n);
  for (const auto& pt : cohort.patients) {
    for (const auto& obs : pt.observations) {
      m.keys.push_back({pt.patient_id, obs.time_days});
      for (std::size_t j = 0; j < p; ++j) {
        auto& col = m.columns[j];
        const Cell& cell = obs.values[j];
        if (col.kind == ColumnKind::Numeric) {
          if (const auto* d = std::get_if<double>(&cell)) {
            col.numeric.push_back(*d);
          } else if (is_missing(cell)) {
            col.numeric.push_back(std::numeric_limits<double>::quiet_NaN());
          } else {
            throw Error(ErrorCode::SchemaMismatch, "column '" + col.name + "' mixes numbers and labels");
          }
        } else {
          if (const auto* s = std::get_if<std::string>(&cell)) {
            col.labels.push_back(*s);
          } else if (is_missing(cell)) {
            col.labels.emplace_back();
          } else {
            throw Error(ErrorCode::SchemaMismatch, "column '" + col.name + "' mixes numbers and labels");
          }
        }
      }
    }
  }
  return m;
}

Cohort CovariateMatrix::to_cohort(const Cohort& like) const {
  if (like.observation_count() != rows()) {
    throw Error(ErrorCode::SchemaMismatch, "row count differs from cohort observation count");
  }
  Cohort out;
  for (const auto& c : columns) out.covariates.push_back(c.name);
  out.patients.reserve(like.patients.size());
  std::size_t r = 0;
  for (const auto& pt : like.patients) {
    PatientHistory h;
    h.patient_id = pt.patient_id;
    h.outcome = pt.outcome;
    for (const auto& obs : pt.observations) {
      if (keys[r].patient_id != pt.patient_id || keys[r].time_days != obs.time_days) {
        throw Error(ErrorCode::SchemaMismatch, "row keys do not follow the cohort order");
      }
      Observation o;
      o.time_days = obs.time_days;
      o.values.reserve(columns.size());
      for (const auto& c : columns) {
        if (c.missing(r)) {
          o.values.emplace_back(std::monostate{});
        } else if (c.kind == ColumnKind::Numeric) {
          o.values.emplace_back(c.numeric[r]);
        } else {
          o.values.emplace_back(c.labels[r]);
        }
      }
      h.observations.push_back(std::move(o));
      ++r;
    }
    out.patients.push_back(std::move(h));
  }
  return out;
}

CovariateMatrix CovariateMatrix::select_rows(std::span<const std::size_t> rows) const {
  CovariateMatrix m;
  m.columns.resize(columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto& src = columns[j];
    auto& dst = m.columns[j];
    dst.name = src.name;
    dst.kind = src.kind;
    for (auto r : rows) {
      if (src.kind == ColumnKind::Numeric) {
        dst.numeric.push_back(src.numeric[r]);
      } else {
        dst.labels.push_back(src.labels[r]);
      }
    }
  }
  for (auto r : rows) m.keys.push_back(keys[r]);
  return m;
}

DropReport drop_high_missing(const CovariateMatrix& m, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "missing threshold must lie in (0, 1]");
  }
  DropReport report;
  report.matrix.keys = m.keys;
  const double n = static_cast<double>(m.rows());
  for (const auto& c : m.columns) {
    const double frac = n > 0 ? static_cast<double>(c.missing_count()) / n : 0.0;
    if (frac >= threshold) {
      report.dropped.push_back(c.name);
    } else {
      report.matrix.columns.push_back(c);
    }
  }
  if (report.matrix.columns.empty()) {
    throw Error(ErrorCode::EmptyMatrix, "every column reaches the missingness threshold");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Imputation

namespace {

struct ChainState {
  const CovariateMatrix* source = nullptr;
  CovariateMatrix current;
  // Observed levels of every categorical column (sorted), empty for numeric.
  std::vector<std::vector<std::string>> levels;
};

// Design matrix: intercept, numeric columns as-is, categoricals as one-hot
// without their first level. Column `skip` is left out.
Eigen::MatrixXd design(const ChainState& s, std::size_t skip) {
  const auto& cols = s.current.columns;
  Eigen::Index q = 1;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (j == skip) continue;
    q += cols[j].kind == ColumnKind::Numeric
             ? 1
             : static_cast<Eigen::Index>(std::max<std::size_t>(s.levels[j].size(), 1) - 1);
  }
  const auto n = static_cast<Eigen::Index>(s.current.rows());
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, q);
  x.col(0).setOnes();
  Eigen::Index c = 1;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (j == skip) continue;
    if (cols[j].kind == ColumnKind::Numeric) {
      for (Eigen::Index i = 0; i < n; ++i) x(i, c) = cols[j].numeric[static_cast<std::size_t>(i)];
      ++c;
    } else {
      const auto& lv = s.levels[j];
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& label = cols[j].labels[static_cast<std::size_t>(i)];
        const auto pos = std::lower_bound(lv.begin(), lv.end(), label) - lv.begin();
        if (pos > 0) x(i, c + pos - 1) = 1.0;
      }
      c += static_cast<Eigen::Index>(std::max<std::size_t>(lv.size(), 1) - 1);
    }
  }
  return x;
}

// Draw from N(mean, A^{-1}) given A = L L^T.
Eigen::VectorXd draw_coefficients(const Eigen::VectorXd& mean, const Eigen::LLT<Eigen::MatrixXd>& chol,
                                  double scale, Rng& rng) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
  const Eigen::VectorXd v = chol.matrixU().solve(z);
  return mean + scale * v;
}

void impute_numeric(ChainState& s, std::size_t j, const std::vector<std::size_t>& observed,
                    const std::vector<std::size_t>& missing, double lo, double hi, Rng& rng) {
  const Eigen::MatrixXd x = design(s, j);
  const auto q = x.cols();
  const auto n_obs = static_cast<Eigen::Index>(observed.size());
  Eigen::MatrixXd xo(n_obs, q);
  Eigen::VectorXd yo(n_obs);
  const auto& src = s.source->columns[j].numeric;
  for (Eigen::Index r = 0; r < n_obs; ++r) {
    xo.row(r) = x.row(static_cast<Eigen::Index>(observed[static_cast<std::size_t>(r)]));
    yo(r) = src[observed[static_cast<std::size_t>(r)]];
  }
  Eigen::MatrixXd xtx = xo.transpose() * xo;
  const double ridge = 1e-8 * std::max(1.0, xtx.diagonal().mean());
  xtx.diagonal().array() += ridge;
  const Eigen::LLT<Eigen::MatrixXd> chol(xtx);
  const Eigen::VectorXd beta = chol.solve(xo.transpose() * yo);
  const double rss = (yo - xo * beta).squaredNorm();
  const double dof = std::max<double>(1.0, static_cast<double>(n_obs - q));
  const double sigma = std::sqrt(std::max(rss, 1e-300) / rng.chi_squared(dof));
  const Eigen::VectorXd beta_draw = draw_coefficients(beta, chol, sigma, rng);
  auto& dst = s.current.columns[j].numeric;
  for (auto i : missing) {
    const double mu = x.row(static_cast<Eigen::Index>(i)).dot(beta_draw);
    dst[i] = std::clamp(mu + sigma * rng.normal(), lo, hi);
  }
}

// Penalized logistic regression by Newton's method; returns coefficients
// and the Cholesky factor of the final Hessian.
Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             Eigen::LLT<Eigen::MatrixXd>& chol) {
  const auto q = x.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  const double ridge = 1e-4;
  for (int it = 0; it < 25; ++it) {
    const Eigen::ArrayXd eta = (x * beta).array();
    const Eigen::ArrayXd p = 1.0 / (1.0 + (-eta).exp());
    const Eigen::ArrayXd w = (p * (1.0 - p)).max(1e-10);
    Eigen::VectorXd grad = x.transpose() * (y.array() - p).matrix() - ridge * beta;
    Eigen::MatrixXd h = x.transpose() * (x.array().colwise() * w).matrix();
    h.diagonal().array() += ridge;
    chol.compute(h);
    const Eigen::VectorXd step = chol.solve(grad);
    beta += step;
    if (step.cwiseAbs().maxCoeff() < 1e-8) break;
  }
  return beta;
}

void impute_categorical(ChainState& s, std::size_t j, const std::vector<std::size_t>& observed,
                        const std::vector<std::size_t>& missing, Rng& rng) {
  const auto& lv = s.levels[j];
  auto& dst = s.current.columns[j].labels;
  if (lv.size() == 1) {
    for (auto i : missing) dst[i] = lv.front();
    return;
  }
  const Eigen::MatrixXd x = design(s, j);
  const auto n_obs = static_cast<Eigen::Index>(observed.size());
  Eigen::MatrixXd xo(n_obs, x.cols());
  for (Eigen::Index r = 0; r < n_obs; ++r) {
    xo.row(r) = x.row(static_cast<Eigen::Index>(observed[static_cast<std::size_t>(r)]));
  }
  const auto& src = s.source->columns[j].labels;
  // Two levels: a single logistic model. More: one-vs-rest, renormalized.
  const std::size_t n_models = lv.size() == 2 ? 1 : lv.size();
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(missing.size()), static_cast<Eigen::Index>(n_models));
  for (std::size_t m = 0; m < n_models; ++m) {
    const std::string& target = lv.size() == 2 ? lv[1] : lv[m];
    Eigen::VectorXd y(n_obs);
    for (Eigen::Index r = 0; r < n_obs; ++r) {
      y(r) = src[observed[static_cast<std::size_t>(r)]] == target ? 1.0 : 0.0;
    }
    Eigen::LLT<Eigen::MatrixXd> chol;
    const Eigen::VectorXd beta = fit_logistic(xo, y, chol);
    const Eigen::VectorXd beta_draw = draw_coefficients(beta, chol, 1.0, rng);
    for (std::size_t k = 0; k < missing.size(); ++k) {
      const double eta = x.row(static_cast<Eigen::Index>(missing[k])).dot(beta_draw);
      scores(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m)) = 1.0 / (1.0 + std::exp(-eta));
    }
  }
  for (std::size_t k = 0; k < missing.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (lv.size() == 2) {
      dst[missing[k]] = rng.uniform() < scores(row, 0) ? lv[1] : lv[0];
      continue;
    }
    const double total = scores.row(row).sum();
    double u = rng.uniform() * total;
    std::size_t pick = lv.size() - 1;
    for (std::size_t m = 0; m < lv.size(); ++m) {
      u -= scores(row, static_cast<Eigen::Index>(m));
      if (u < 0) {
        pick = m;
        break;
      }
    }
    dst[missing[k]] = lv[pick];
  }
}

CovariateMatrix run_chain(const CovariateMatrix& m, std::size_t sweeps, std::uint64_t seed) {
  Rng rng(seed);
  ChainState s;
  s.source = &m;
  s.current = m;
  const std::size_t p = m.cols();
  const std::size_t n = m.rows();
  s.levels.resize(p);

  std::vector<std::vector<std::size_t>> observed(p), missing(p);
  std::vector<double> lo(p, 0.0), hi(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    const auto& col = m.columns[j];
    for (std::size_t i = 0; i < n; ++i) (col.missing(i) ? missing[j] : observed[j]).push_back(i);
    if (observed[j].empty()) {
      throw Error(ErrorCode::CannotImpute, "column '" + col.name + "' has no observed values");
    }
    if (col.kind == ColumnKind::Numeric) {
      lo[j] = hi[j] = col.numeric[observed[j].front()];
      for (auto i : observed[j]) {
        lo[j] = std::min(lo[j], col.numeric[i]);
        hi[j] = std::max(hi[j], col.numeric[i]);
      }
    } else {
      std::set<std::string> lv;
      for (auto i : observed[j]) lv.insert(col.labels[i]);
      s.levels[j].assign(lv.begin(), lv.end());
    }
  }

  // Hot-deck start.
  for (std::size_t j = 0; j < p; ++j) {
    auto& col = s.current.columns[j];
    for (auto i : missing[j]) {
      const auto donor = observed[j][rng.below(observed[j].size())];
      if (col.kind == ColumnKind::Numeric) {
        col.numeric[i] = m.columns[j].numeric[donor];
      } else {
        col.labels[i] = m.columns[j].labels[donor];
      }
    }
  }

  for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t j = 0; j < p; ++j) {
      if (missing[j].empty()) continue;
      if (m.columns[j].kind == ColumnKind::Numeric) {
        impute_numeric(s, j, observed[j], missing[j], lo[j], hi[j], rng);
      } else {
        impute_categorical(s, j, observed[j], missing[j], rng);
      }
    }
  }
  return std::move(s.current);
}

}  // namespace

ImputationSet impute(const CovariateMatrix& m, const ImputeOptions& options) {
  if (options.count == 0) throw Error(ErrorCode::InvalidArgument, "imputation count must be >= 1");
  bool any_complete = false;
  bool any_missing = false;
  for (const auto& c : m.columns) {
    const auto k = c.missing_count();
    if (k == m.rows() && m.rows() > 0) {
      throw Error(ErrorCode::CannotImpute, "column '" + c.name + "' has no observed values");
    }
    any_complete = any_complete || k == 0;
    any_missing = any_missing || k > 0;
  }
  ImputationSet set;
  set.seed = options.seed;
  if (!any_missing) {
    set.completed.assign(options.count, m);
    return set;
  }
  if (!any_complete) {
    throw Error(ErrorCode::CannotImpute, "imputation needs at least one fully observed column");
  }

  set.completed.resize(options.count);
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, options.count);
  if (threads == 1) {
    for (std::size_t c = 0; c < options.count; ++c) {
      set.completed[c] = run_chain(m, options.sweeps, sub_seed(options.seed, c));
    }
    return set;
  }
  std::vector<std::exception_ptr> errors(options.count);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t c = t; c < options.count; c += threads) {
        try {
          set.completed[c] = run_chain(m, options.sweeps, sub_seed(options.seed, c));
        } catch (...) {
          errors[c] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return set;
}

// ---------------------------------------------------------------------------
// VIF

std::vector<double> variance_inflation(const Eigen::MatrixXd& x) {
  const auto n = x.rows();
  const auto p = x.cols();
  std::vector<double> vif(static_cast<std::size_t>(p), 1.0);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::VectorXd y = centered.col(j);
    const double tss = y.squaredNorm();
    if (!(tss > 0.0)) {
      vif[static_cast<std::size_t>(j)] = std::numeric_limits<double>::infinity();
      continue;
    }
    if (p == 1) continue;
    Eigen::MatrixXd others(n, p - 1);
    others << centered.leftCols(j), centered.rightCols(p - 1 - j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(others);
    qr.setThreshold(1e-12);
    const Eigen::VectorXd coef = qr.solve(y);
    const double rss = (y - others * coef).squaredNorm();
    vif[static_cast<std::size_t>(j)] =
        rss <= 1e-12 * tss ? std::numeric_limits<double>::infinity() : tss / rss;
  }
  return vif;
}

VifResult vif_filter(const CovariateMatrix& m, double cutoff) {
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < m.cols(); ++j) {
    if (m.columns[j].kind == ColumnKind::Numeric) active.push_back(j);
  }
  if (active.size() < 2) throw Error(ErrorCode::InvalidArgument, "VIF needs at least two numeric columns");
  const auto n = static_cast<Eigen::Index>(m.rows());
  Eigen::MatrixXd full(n, static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) {
    const auto& col = m.columns[active[k]];
    if (col.missing_count() > 0) {
      throw Error(ErrorCode::InvalidArgument, "VIF requires complete data ('" + col.name + "')");
    }
    full.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(col.numeric.data(), n);
  }

  VifResult result;
  std::vector<std::size_t> keep(active.size());
  std::iota(keep.begin(), keep.end(), 0);
  std::vector<double> vif;
  for (;;) {
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = full.col(static_cast<Eigen::Index>(keep[k]));
    vif = keep.size() >= 2 ? variance_inflation(x) : std::vector<double>(keep.size(), 1.0);
    std::size_t worst = 0;
    for (std::size_t k = 1; k < vif.size(); ++k) {
      if (vif[k] > vif[worst]) worst = k;
    }
    if (vif.empty() || !(vif[worst] > cutoff)) break;
    result.removed.push_back(m.columns[active[keep[worst]]].name);
    keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(worst));
    ++result.iterations;
  }
  for (std::size_t k = 0; k < keep.size(); ++k) {
    result.retained.push_back(m.columns[active[keep[k]]].name);
    result.final_vif.push_back(vif[k]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Encoder

Encoder Encoder::fit(const CovariateMatrix& train, const Options& options) {
  Encoder e;
  e.drop_reference_ = options.drop_reference_level;
  for (const auto& col : train.columns) {
    if (std::find(options.exclude.begin(), options.exclude.end(), col.name) != options.exclude.end()) continue;
    if (col.kind == ColumnKind::Numeric) {
      double sum = 0;
      std::size_t k = 0;
      for (double v : col.numeric) {
        if (!std::isnan(v)) {
          sum += v;
          ++k;
        }
      }
      if (k < 2) continue;
      const double mean = sum / static_cast<double>(k);
      double ss = 0;
      for (double v : col.numeric) {
        if (!std::isnan(v)) ss += (v - mean) * (v - mean);
      }
      const double sd = std::sqrt(ss / static_cast<double>(k - 1));
      if (!(sd > 0.0)) continue;
      e.inputs_.push_back(col.name);
      e.input_slot_.push_back(static_cast<int>(e.numeric_.size()));
      e.numeric_.push_back({col.name, mean, sd});
    } else {
      std::set<std::string> levels;
      for (const auto& l : col.labels) {
        if (!l.empty()) levels.insert(l);
      }
      if (levels.empty()) continue;
      e.inputs_.push_back(col.name);
      e.input_slot_.push_back(-static_cast<int>(e.categorical_.size()) - 1);
      e.categorical_.push_back({col.name, std::vector<std::string>(levels.begin(), levels.end())});
    }
  }
  return e;
}

std::vector<std::string> Encoder::feature_names() const {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < inputs_.size(); ++k) {
    const int slot = input_slot_[k];
    if (slot >= 0) {
      names.push_back(inputs_[k]);
    } else {
      const auto& cat = categorical_[static_cast<std::size_t>(-slot - 1)];
      for (std::size_t l = drop_reference_ ? 1 : 0; l < cat.levels.size(); ++l) {
        names.push_back(cat.name + "=" + cat.levels[l]);
      }
    }
  }
  return names;
}

std::size_t Encoder::width() const { return feature_names().size(); }

void Encoder::encode_cells(const std::vector<const Cell*>& cells, std::vector<double>& out,
                           const std::string& context) const {
  for (std::size_t k = 0; k < inputs_.size(); ++k) {
    const int slot = input_slot_[k];
    const Cell& cell = *cells[k];
    if (slot >= 0) {
      const auto* v = std::get_if<double>(&cell);
      if (!v) {
        throw Error(is_missing(cell) ? ErrorCode::InvalidArgument : ErrorCode::SchemaMismatch,
                    "column '" + inputs_[k] + "' " + (is_missing(cell) ? "missing" : "not numeric") +
                        " at " + context);
      }
      const auto& st = numeric_[static_cast<std::size_t>(slot)];
      out.push_back((*v - st.mean) / st.sd);
    } else {
      const auto& cat = categorical_[static_cast<std::size_t>(-slot - 1)];
      const auto* label = std::get_if<std::string>(&cell);
      if (!label) {
        throw Error(is_missing(cell) ? ErrorCode::InvalidArgument : ErrorCode::SchemaMismatch,
                    "column '" + inputs_[k] + "' " + (is_missing(cell) ? "missing" : "not categorical") +
                        " at " + context);
      }
      for (std::size_t l = drop_reference_ ? 1 : 0; l < cat.levels.size(); ++l) {
        out.push_back(cat.levels[l] == *label ? 1.0 : 0.0);
      }
    }
  }
}

Encoder::Output Encoder::apply(const CovariateMatrix& m) const {
  std::vector<const CovariateMatrix::Column*> cols;
  for (const auto& name : inputs_) {
    const auto* c = m.column(name);
    if (!c) throw Error(ErrorCode::SchemaMismatch, "matrix lacks column '" + name + "'");
    cols.push_back(c);
  }
  Output out;
  out.feature_names = feature_names();
  out.rows.reserve(m.rows());
  std::vector<Cell> cells(inputs_.size());
  std::vector<const Cell*> ptrs(inputs_.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto* c = cols[k];
      if (c->missing(r)) {
        cells[k] = std::monostate{};
      } else if (c->kind == ColumnKind::Numeric) {
        cells[k] = c->numeric[r];
      } else {
        cells[k] = c->labels[r];
      }
      ptrs[k] = &cells[k];
    }
    std::vector<double> row;
    row.reserve(out.feature_names.size());
    encode_cells(ptrs, row, "row " + std::to_string(r));
    out.rows.push_back(std::move(row));
  }
  return out;
}

RowEncoder Encoder::bind(std::span<const std::string> schema) const {
  std::vector<std::size_t> positions;
  for (const auto& name : inputs_) {
    const auto it = std::find(schema.begin(), schema.end(), name);
    if (it == schema.end()) throw Error(ErrorCode::SchemaMismatch, "schema lacks column '" + name + "'");
    positions.push_back(static_cast<std::size_t>(it - schema.begin()));
  }
  const std::size_t width = this->width();
  return [this, positions, width](const Observation& obs) {
    std::vector<const Cell*> ptrs(positions.size());
    for (std::size_t k = 0; k < positions.size(); ++k) ptrs[k] = &obs.values.at(positions[k]);
    std::vector<double> row;
    row.reserve(width);
    encode_cells(ptrs, row, "day " + std::to_string(obs.time_days));
    return row;
  };
}

nlohmann::json Encoder::to_json() const {
  nlohmann::json j;
  j["drop_reference_level"] = drop_reference_;
  j["inputs"] = nlohmann::json::array();
  for (std::size_t k = 0; k < inputs_.size(); ++k) {
    const int slot = input_slot_[k];
    if (slot >= 0) {
      const auto& st = numeric_[static_cast<std::size_t>(slot)];
      j["inputs"].push_back({{"name", st.name}, {"kind", "numeric"}, {"mean", st.mean}, {"sd", st.sd}});
    } else {
      const auto& cat = categorical_[static_cast<std::size_t>(-slot - 1)];
      j["inputs"].push_back({{"name", cat.name}, {"kind", "categorical"}, {"levels", cat.levels}});
    }
  }
  return j;
}

Encoder Encoder::from_json(const nlohmann::json& j) {
  Encoder e;
  e.drop_reference_ = j.at("drop_reference_level").get<bool>();
  for (const auto& in : j.at("inputs")) {
    const auto name = in.at("name").get<std::string>();
    e.inputs_.push_back(name);
    if (in.at("kind") == "numeric") {
      e.input_slot_.push_back(static_cast<int>(e.numeric_.size()));
      e.numeric_.push_back({name, in.at("mean").get<double>(), in.at("sd").get<double>()});
    } else {
      e.input_slot_.push_back(-static_cast<int>(e.categorical_.size()) - 1);
      e.categorical_.push_back({name, in.at("levels").get<std::vector<std::string>>()});
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Splits

std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios) {
  double total = 0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw Error(ErrorCode::InvalidArgument, "split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "split ratios must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = ratios[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

PatientSplit split_patients(std::size_t n_patients, std::array<double, 3> ratios, std::uint64_t seed) {
  if (n_patients < 3) throw Error(ErrorCode::TooFewPatients, "need at least 3 patients for a 3-way split");
  const auto sizes = split_sizes(n_patients, ratios);
  std::vector<std::size_t> perm(n_patients);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  PatientSplit split;
  split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  split.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                          perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), perm.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace tvsurv
