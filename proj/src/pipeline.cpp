#include "tvsurv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <ostream>

#include "tvsurv/csv.hpp"
#include "tvsurv/error.hpp"
#include "tvsurv/json_util.hpp"
#include "tvsurv/km.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

namespace {

// Stream identifiers for sub_seed; one per pipeline stage.
enum : std::uint64_t {
  kSeedSimulate = 1,
  kSeedMask = 2,
  kSeedSplit = 3,
  kSeedImpute = 4,
  kSeedFolds = 5,
  kSeedModel = 100,
};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Cox: return "cox";
    case ModelKind::Rsf: return "rsf";
    case ModelKind::Nn: return "nn";
  }
  return "?";
}

std::string_view to_string(Mode mode) { return mode == Mode::Static ? "static" : "dynamic"; }

ModelKind parse_model_kind(std::string_view s) {
  if (s == "cox") return ModelKind::Cox;
  if (s == "rsf") return ModelKind::Rsf;
  if (s == "nn") return ModelKind::Nn;
  throw Error(ErrorCode::Config, "model.kind: expected cox, rsf or nn, got '" + std::string(s) + "'");
}

Mode parse_mode(std::string_view s) {
  if (s == "static") return Mode::Static;
  if (s == "dynamic") return Mode::Dynamic;
  throw Error(ErrorCode::Config, "model.mode: expected static or dynamic, got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Hyperparameters

namespace {

std::vector<std::string_view> param_keys(ModelKind kind) {
  switch (kind) {
    case ModelKind::Cox: return {"lambda", "l1_ratio", "max_iterations", "tolerance"};
    case ModelKind::Rsf:
      return {"n_trees", "mtry", "min_leaf_events", "max_depth", "max_candidates", "bootstrap", "threads"};
    case ModelKind::Nn:
      return {"hidden", "alpha_rank", "sigma", "batch_size", "learning_rate", "epochs", "patience", "bins",
              "horizon_days"};
  }
  return {};
}

void check_param_keys(ModelKind kind, const nlohmann::json& params, std::string_view where) {
  if (!params.is_object()) throw Error(ErrorCode::Config, std::string(where) + ": expected an object");
  const auto keys = param_keys(kind);
  for (const auto& item : params.items()) {
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
      throw Error(ErrorCode::Config, std::string(where) + ": unknown key '" + item.key() + "' for model kind " +
                                         std::string(to_string(kind)));
    }
  }
}

}  // namespace

CoxOptions cox_options(const nlohmann::json& params) {
  CoxOptions o;
  json::read(params, "max_iterations", o.max_iterations, "model.params");
  json::read(params, "tolerance", o.tolerance, "model.params");
  return o;
}

PenaltySpec cox_penalty(const nlohmann::json& params) {
  PenaltySpec p{1e-3, 0.5};
  json::read(params, "lambda", p.lambda, "model.params");
  json::read(params, "l1_ratio", p.l1_ratio, "model.params");
  return p;
}

ForestSpec forest_spec(const nlohmann::json& params, std::uint64_t seed) {
  ForestSpec s;
  json::read(params, "n_trees", s.n_trees, "model.params");
  json::read(params, "mtry", s.mtry, "model.params");
  json::read(params, "min_leaf_events", s.min_leaf_events, "model.params");
  json::read(params, "max_depth", s.max_depth, "model.params");
  json::read(params, "max_candidates", s.max_candidates, "model.params");
  json::read(params, "bootstrap", s.bootstrap, "model.params");
  json::read(params, "threads", s.threads, "model.params");
  s.seed = seed;
  return s;
}

LossSpec loss_spec(const nlohmann::json& params, std::uint64_t seed) {
  LossSpec s;
  json::read(params, "alpha_rank", s.alpha_rank, "model.params");
  json::read(params, "sigma", s.sigma, "model.params");
  json::read(params, "batch_size", s.batch_size, "model.params");
  json::read(params, "learning_rate", s.learning_rate, "model.params");
  json::read(params, "epochs", s.epochs, "model.params");
  json::read(params, "patience", s.patience, "model.params");
  s.seed = seed;
  return s;
}

TimeGrid time_grid(const nlohmann::json& params) {
  TimeGrid g;
  json::read(params, "bins", g.bins, "model.params");
  json::read(params, "horizon_days", g.horizon_days, "model.params");
  return g;
}

TrainOptions train_options(const nlohmann::json& params) {
  TrainOptions o;
  json::read(params, "hidden", o.hidden, "model.params");
  return o;
}

void validate_params(ModelKind kind, const nlohmann::json& params) {
  check_param_keys(kind, params, "model.params");
  try {
    switch (kind) {
      case ModelKind::Cox: {
        cox_penalty(params).validate();
        const auto o = cox_options(params);
        if (o.max_iterations == 0 || !(o.tolerance > 0)) {
          throw Error(ErrorCode::Config, "model.params: max_iterations and tolerance must be positive");
        }
        break;
      }
      case ModelKind::Rsf: {
        const auto s = forest_spec(params, 0);
        if (s.n_trees == 0) throw Error(ErrorCode::Config, "model.params.n_trees: must be at least 1");
        if (s.max_candidates == 0) throw Error(ErrorCode::Config, "model.params.max_candidates: must be at least 1");
        break;
      }
      case ModelKind::Nn:
        loss_spec(params, 0).validate();
        time_grid(params).validate();
        for (auto h : train_options(params).hidden) {
          if (h == 0) throw Error(ErrorCode::Config, "model.params.hidden: widths must be positive");
        }
        break;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    throw Error(ErrorCode::Config, std::string("model.params: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  json::require_keys(j, {"seed", "data", "preprocess", "model", "evaluation"}, "config");
  ExperimentConfig c;
  json::read(j, "seed", c.seed, "config");

  if (!j.contains("data")) throw Error(ErrorCode::Config, "config.data: required");
  const auto& d = j.at("data");
  json::require_keys(d, {"path", "simulate", "missing_rate"}, "data");
  const bool has_path = d.contains("path");
  const bool has_sim = d.contains("simulate");
  if (has_path == has_sim) throw Error(ErrorCode::Config, "data: exactly one of 'path' or 'simulate' is required");
  if (has_path) {
    json::read(d, "path", c.data.path, "data");
    std::filesystem::path p(c.data.path);
    if (p.is_relative() && !base_dir.empty()) c.data.path = (std::filesystem::path(base_dir) / p).string();
  } else {
    c.data.simulate = SimSpec::from_json(d.at("simulate"));
  }
  json::read(d, "missing_rate", c.data.missing_rate, "data");
  if (!(c.data.missing_rate >= 0.0 && c.data.missing_rate < 1.0)) {
    throw Error(ErrorCode::Config, "data.missing_rate: must lie in [0, 1)");
  }

  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    json::require_keys(p, {"missing_threshold", "imputations", "sweeps", "vif_cutoff", "split", "threads"},
                       "preprocess");
    auto& pp = c.preprocess;
    json::read(p, "missing_threshold", pp.missing_threshold, "preprocess");
    json::read(p, "imputations", pp.imputations, "preprocess");
    json::read(p, "sweeps", pp.sweeps, "preprocess");
    json::read(p, "vif_cutoff", pp.vif_cutoff, "preprocess");
    json::read(p, "split", pp.split, "preprocess");
    json::read(p, "threads", pp.threads, "preprocess");
    if (!(pp.missing_threshold > 0.0 && pp.missing_threshold <= 1.0)) {
      throw Error(ErrorCode::Config, "preprocess.missing_threshold: must lie in (0, 1]");
    }
    if (pp.imputations == 0) throw Error(ErrorCode::Config, "preprocess.imputations: must be at least 1");
    if (!(pp.vif_cutoff > 1.0)) throw Error(ErrorCode::Config, "preprocess.vif_cutoff: must exceed 1");
    for (double r : pp.split) {
      if (!(r >= 0.0)) throw Error(ErrorCode::Config, "preprocess.split: ratios must be >= 0");
    }
    if (!(pp.split[0] > 0.0) || !(pp.split[2] > 0.0)) {
      throw Error(ErrorCode::Config, "preprocess.split: training and test ratios must be positive");
    }
  }

  if (!j.contains("model")) throw Error(ErrorCode::Config, "config.model: required");
  const auto& m = j.at("model");
  json::require_keys(m, {"kind", "mode", "params", "grid", "cv_folds"}, "model");
  std::string kind = "cox", mode = "dynamic";
  json::read(m, "kind", kind, "model");
  json::read(m, "mode", mode, "model");
  c.model.kind = parse_model_kind(kind);
  c.model.mode = parse_mode(mode);
  if (m.contains("params")) c.model.params = m.at("params");
  if (m.contains("grid")) c.model.grid = m.at("grid");
  json::read(m, "cv_folds", c.model.cv_folds, "model");
  validate_params(c.model.kind, c.model.params);
  check_param_keys(c.model.kind, c.model.grid, "model.grid");
  for (const auto& item : c.model.grid.items()) {
    if (!item.value().is_array() || item.value().empty()) {
      throw Error(ErrorCode::Config, "model.grid." + item.key() + ": expected a non-empty array");
    }
    for (const auto& v : item.value()) {
      nlohmann::json trial = c.model.params;
      trial[item.key()] = v;
      validate_params(c.model.kind, trial);
    }
  }
  if (!c.model.grid.empty() && c.model.cv_folds < 2) {
    throw Error(ErrorCode::Config, "model.cv_folds: must be at least 2 when a grid is given");
  }

  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    json::require_keys(e, {"horizon_days", "threshold", "bins", "listing_variant"}, "evaluation");
    json::read(e, "horizon_days", c.evaluation.horizon_days, "evaluation");
    json::read(e, "threshold", c.evaluation.threshold, "evaluation");
    json::read(e, "bins", c.evaluation.bins, "evaluation");
    json::read(e, "listing_variant", c.evaluation.listing_variant, "evaluation");
    if (!(c.evaluation.horizon_days > 0.0)) throw Error(ErrorCode::Config, "evaluation.horizon_days: must be > 0");
    if (!(c.evaluation.threshold > 0.0 && c.evaluation.threshold < 1.0)) {
      throw Error(ErrorCode::Config, "evaluation.threshold: must lie in (0, 1)");
    }
    if (c.evaluation.bins < 2) throw Error(ErrorCode::Config, "evaluation.bins: must be at least 2");
  }
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  nlohmann::json d;
  if (data.simulate) {
    d["simulate"] = data.simulate->to_json();
  } else {
    d["path"] = data.path;
  }
  d["missing_rate"] = data.missing_rate;
  j["data"] = d;
  j["preprocess"] = {{"missing_threshold", preprocess.missing_threshold},
                     {"imputations", preprocess.imputations},
                     {"sweeps", preprocess.sweeps},
                     {"vif_cutoff", preprocess.vif_cutoff},
                     {"split", preprocess.split},
                     {"threads", preprocess.threads}};
  j["model"] = {{"kind", to_string(model.kind)},
                {"mode", to_string(model.mode)},
                {"params", model.params},
                {"grid", model.grid},
                {"cv_folds", model.cv_folds}};
  j["evaluation"] = {{"horizon_days", evaluation.horizon_days},
                     {"threshold", evaluation.threshold},
                     {"bins", evaluation.bins},
                     {"listing_variant", evaluation.listing_variant}};
  return j;
}

// ---------------------------------------------------------------------------
// Data preparation

PreparedData prepare(const ExperimentConfig& config) {
  PreparedData out;
  if (config.data.simulate) {
    SimSpec spec = *config.data.simulate;
    spec.seed = sub_seed(config.seed, kSeedSimulate ^ (spec.seed << 8));
    SimResult sim = generate(spec);
    out.cohort = std::move(sim.cohort);
    out.truth = std::move(sim.truth);
  } else {
    out.cohort = ingest_long_csv_file(config.data.path);
  }
  validate(out.cohort);
  if (config.data.missing_rate > 0.0) {
    out.cohort = inject_missingness(out.cohort, config.data.missing_rate, sub_seed(config.seed, kSeedMask));
  }
  out.split = split_patients(out.cohort.patients.size(), config.preprocess.split, sub_seed(config.seed, kSeedSplit));

  const CovariateMatrix raw = CovariateMatrix::from_cohort(out.cohort);
  DropReport drop = drop_high_missing(raw, config.preprocess.missing_threshold);
  out.dropped_missing = drop.dropped;
  bool any_missing = false;
  for (const auto& c : drop.matrix.columns) any_missing = any_missing || c.missing_count() > 0;

  ImputeOptions io;
  io.count = any_missing ? config.preprocess.imputations : 1;
  io.sweeps = config.preprocess.sweeps;
  io.seed = sub_seed(config.seed, kSeedImpute);
  io.threads = config.preprocess.threads;
  const ImputationSet set = impute(drop.matrix, io);
  for (const auto& m : set.completed) out.completed.push_back(m.to_cohort(out.cohort));

  // VIF on the imputation-averaged numeric training rows.
  std::vector<std::size_t> offsets{0};
  for (const auto& p : out.cohort.patients) offsets.push_back(offsets.back() + p.observations.size());
  std::vector<std::size_t> train_rows;
  for (auto p : out.split.train) {
    for (std::size_t r = offsets[p]; r < offsets[p + 1]; ++r) train_rows.push_back(r);
  }
  CovariateMatrix avg;
  for (std::size_t j = 0; j < drop.matrix.cols(); ++j) {
    if (drop.matrix.columns[j].kind != ColumnKind::Numeric) continue;
    CovariateMatrix::Column col;
    col.name = drop.matrix.columns[j].name;
    col.kind = ColumnKind::Numeric;
    col.numeric.assign(train_rows.size(), 0.0);
    for (const auto& m : set.completed) {
      for (std::size_t k = 0; k < train_rows.size(); ++k) col.numeric[k] += m.columns[j].numeric[train_rows[k]];
    }
    for (auto& v : col.numeric) v /= static_cast<double>(set.completed.size());
    avg.columns.push_back(std::move(col));
  }
  for (auto r : train_rows) avg.keys.push_back(drop.matrix.keys[r]);
  if (avg.cols() >= 2 && avg.rows() > avg.cols()) {
    out.vif_removed = vif_filter(avg, config.preprocess.vif_cutoff).removed;
  }
  return out;
}

Encoder::Options encoder_options(ModelKind kind, const PreparedData& data) {
  Encoder::Options o;
  if (kind == ModelKind::Cox) {
    o.drop_reference_level = true;
    o.exclude = data.vif_removed;
  }
  return o;
}

EpisodeTable encode_patients(const Cohort& cohort, const std::vector<std::size_t>& patients, const Encoder& encoder,
                             Mode mode) {
  const RowEncoder enc = encoder.bind(cohort.covariates);
  std::vector<CountingProcessRow> rows;
  for (auto p : patients) {
    const PatientHistory& h = cohort.patients.at(p);
    auto r = mode == Mode::Static ? to_counting_process(baseline_snapshot(h), enc) : to_counting_process(h, enc);
    for (auto& row : r) rows.push_back(std::move(row));
  }
  return EpisodeTable::from_rows(rows, encoder.feature_names());
}

Design build_design(const PreparedData& data, std::size_t imputation, ModelKind kind, Mode mode,
                    const Encoder* encoder) {
  if (imputation >= data.completed.size()) throw Error(ErrorCode::InvalidArgument, "imputation index out of range");
  const Cohort& cohort = data.completed[imputation];
  Design d;
  if (encoder) {
    d.encoder = *encoder;
  } else {
    Cohort train;
    train.covariates = cohort.covariates;
    for (auto p : data.split.train) {
      train.patients.push_back(mode == Mode::Static ? baseline_snapshot(cohort.patients[p]) : cohort.patients[p]);
    }
    d.encoder = Encoder::fit(CovariateMatrix::from_cohort(train), encoder_options(kind, data));
  }
  d.train = encode_patients(cohort, data.split.train, d.encoder, mode);
  d.validation = encode_patients(cohort, data.split.validation, d.encoder, mode);
  d.test = encode_patients(cohort, data.split.test, d.encoder, mode);
  return d;
}

// ---------------------------------------------------------------------------
// Models

SurvivalCurve FittedModel::predict(const CovariatePath& path, double horizon) const {
  switch (kind) {
    case ModelKind::Cox: return predict_survival(cox, path, PredictOptions{horizon});
    case ModelKind::Rsf: return predict_survival(forest, path);
    case ModelKind::Nn: return predict_survival(nn, path);
  }
  return {};
}

nlohmann::json FittedModel::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  switch (kind) {
    case ModelKind::Cox: j["cox"] = cox.to_json(); break;
    case ModelKind::Rsf: j["rsf"] = forest.to_json(); break;
    case ModelKind::Nn: j["nn"] = nn.to_json(); break;
  }
  return j;
}

FittedModel FittedModel::from_json(const nlohmann::json& j) {
  FittedModel m;
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  switch (m.kind) {
    case ModelKind::Cox: m.cox = CoxFit::from_json(j.at("cox")); break;
    case ModelKind::Rsf: m.forest = Forest::from_json(j.at("rsf")); break;
    case ModelKind::Nn: m.nn = DiscreteSurvModel::from_json(j.at("nn")); break;
  }
  return m;
}

FittedModel fit_model(ModelKind kind, const nlohmann::json& params, const EpisodeTable& train,
                      const EpisodeTable& validation, std::uint64_t seed, nlohmann::json* log) {
  FittedModel m;
  m.kind = kind;
  nlohmann::json entry;
  entry["rows"] = train.rows();
  entry["patients"] = train.patients();
  entry["events"] = train.event_count();
  entry["features"] = train.features();
  switch (kind) {
    case ModelKind::Cox: {
      m.cox = fit_cox_td(train, cox_penalty(params), cox_options(params));
      const auto& d = m.cox.diagnostics;
      std::size_t nonzero = 0;
      for (Eigen::Index k = 0; k < m.cox.beta.size(); ++k) nonzero += std::abs(m.cox.beta(k)) > 1e-8 ? 1 : 0;
      entry["converged"] = d.converged;
      entry["identifiable"] = d.identifiable;
      entry["iterations"] = d.iterations;
      entry["objective"] = d.objective;
      entry["log_likelihood"] = d.log_likelihood;
      entry["null_log_likelihood"] = d.null_log_likelihood;
      entry["nonzero_coefficients"] = nonzero;
      entry["message"] = d.message;
      break;
    }
    case ModelKind::Rsf: {
      m.forest = fit_rsf(train, forest_spec(params, seed));
      const OobConcordance oob = oob_concordance(m.forest, train);
      entry["converged"] = true;
      entry["trees"] = m.forest.trees.size();
      entry["oob_c_index"] = oob.concordance.defined ? oob.concordance.value : kNaN;
      entry["oob_excluded"] = oob.excluded;
      break;
    }
    case ModelKind::Nn: {
      const TimeGrid grid = time_grid(params);
      const LossSpec spec = loss_spec(params, seed);
      TrainResult r = tvsurv::train(samples_from_episodes(train, grid), samples_from_episodes(validation, grid), grid, spec,
                            train_options(params));
      m.nn = std::move(r.model);
      m.nn.feature_names = train.feature_names;
      entry["converged"] = true;
      entry["epochs"] = r.log.size();
      entry["best_epoch"] = r.best_epoch;
      nlohmann::json trace = nlohmann::json::array();
      for (const auto& row : r.log) trace.push_back({row.epoch, row.train_loss, row.validation_loss});
      entry["loss_trace"] = trace;
      break;
    }
  }
  if (log) *log = std::move(entry);
  return m;
}

Predictions predict_table(const FittedModel& model, const EpisodeTable& table, Anchor anchor, double horizon) {
  Predictions p;
  for (std::size_t i = 0; i < table.patients(); ++i) {
    CovariatePath path = patient_path(table, i);
    if (anchor == Anchor::Listing) path = path.truncated_at(0.0);
    SurvivalCurve c = model.predict(path, horizon);
    const PatientOutcome o = patient_outcome(table, i);
    p.risk.push_back(std::clamp(1.0 - c.at(horizon), 0.0, 1.0));
    p.curves.push_back(std::move(c));
    p.time.push_back(o.time);
    p.event.push_back(o.event ? 1 : 0);
  }
  return p;
}

namespace {

EpisodeTable concat(const EpisodeTable& a, const EpisodeTable& b) {
  EpisodeTable t = a;
  const std::size_t rows = a.rows();
  const std::size_t pats = a.patients();
  t.start.insert(t.start.end(), b.start.begin(), b.start.end());
  t.stop.insert(t.stop.end(), b.stop.begin(), b.stop.end());
  t.event.insert(t.event.end(), b.event.begin(), b.event.end());
  for (auto p : b.patient) t.patient.push_back(p + pats);
  t.patient_ids.insert(t.patient_ids.end(), b.patient_ids.begin(), b.patient_ids.end());
  for (std::size_t k = 1; k < b.patient_offsets.size(); ++k) t.patient_offsets.push_back(b.patient_offsets[k] + rows);
  t.x.resize(static_cast<Eigen::Index>(rows + b.rows()), a.x.cols());
  t.x.topRows(static_cast<Eigen::Index>(rows)) = a.x;
  t.x.bottomRows(static_cast<Eigen::Index>(b.rows())) = b.x;
  return t;
}

std::vector<nlohmann::json> expand_grid(const nlohmann::json& params, const nlohmann::json& grid) {
  std::vector<nlohmann::json> out{params};
  for (const auto& item : grid.items()) {
    std::vector<nlohmann::json> next;
    for (const auto& base : out) {
      for (const auto& v : item.value()) {
        nlohmann::json p = base;
        p[item.key()] = v;
        next.push_back(std::move(p));
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace

CvResult cross_validate(const ExperimentConfig& config, const Design& design) {
  CvResult r;
  r.best_params = config.model.params;
  if (config.model.grid.empty()) return r;

  const EpisodeTable pool = concat(design.train, design.validation);
  const std::size_t n = pool.patients();
  const std::size_t k = config.model.cv_folds;
  if (n < 2 * k) throw Error(ErrorCode::TooFewPatients, "too few patients for " + std::to_string(k) + "-fold CV");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sub_seed(config.seed, kSeedFolds));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = i % k;

  double best = -std::numeric_limits<double>::infinity();
  std::size_t point = 0;
  for (const auto& params : expand_grid(config.model.params, config.model.grid)) {
    double sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<std::size_t> fit_idx, early_idx, held_idx;
      for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? held_idx : fit_idx).push_back(i);
      if (config.model.kind == ModelKind::Nn) {
        // A slice of the fitting folds drives early stopping.
        const std::size_t take = std::max<std::size_t>(1, fit_idx.size() / 9);
        early_idx.assign(fit_idx.end() - static_cast<std::ptrdiff_t>(take), fit_idx.end());
        fit_idx.resize(fit_idx.size() - take);
      }
      const EpisodeTable fit_table = pool.subset_patients(fit_idx);
      const EpisodeTable early_table = pool.subset_patients(early_idx);
      const EpisodeTable held = pool.subset_patients(held_idx);
      const FittedModel m = fit_model(config.model.kind, params, fit_table, early_table,
                                      sub_seed(config.seed, kSeedModel + 1000 * (point + 1) + f));
      const Predictions p = predict_table(m, held, Anchor::Path, config.evaluation.horizon_days);
      const Concordance c = harrell_c(p.risk, p.time, p.event);
      if (c.defined) {
        sum += c.value;
        ++scored;
      }
    }
    const double mean = scored ? sum / static_cast<double>(scored) : kNaN;
    r.table.push_back({{"params", params}, {"cv_c_index", mean}});
    if (scored && mean > best) {
      best = mean;
      r.best_params = params;
    }
    ++point;
  }
  return r;
}

namespace {

nlohmann::json wald_to_json(const WaldReport& w) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : w.rows) {
    rows.push_back({{"feature", r.feature},
                    {"coef", r.coefficient},
                    {"hr", r.hazard_ratio},
                    {"std_err", r.std_error},
                    {"p", r.p_value}});
  }
  return {{"label", w.label}, {"rows", rows}};
}

WaldReport wald_from_json(const nlohmann::json& j) {
  WaldReport w;
  w.label = j.at("label").get<std::string>();
  for (const auto& r : j.at("rows")) {
    w.rows.push_back({r.at("feature").get<std::string>(), r.at("coef").get<double>(), r.at("hr").get<double>(),
                      r.at("std_err").get<double>(), r.at("p").get<double>()});
  }
  return w;
}

}  // namespace

FitOutput run_fit(const ExperimentConfig& config, const PreparedData& data) {
  validate_params(config.model.kind, config.model.params);
  FitOutput out;
  out.config = config;
  out.vif_removed = config.model.kind == ModelKind::Cox ? data.vif_removed : std::vector<std::string>{};

  Design first = build_design(data, 0, config.model.kind, config.model.mode);
  const CvResult cv = cross_validate(config, first);
  out.selected_params = cv.best_params;

  nlohmann::json per = nlohmann::json::array();
  for (std::size_t m = 0; m < data.completed.size(); ++m) {
    Design d = m == 0 ? std::move(first) : build_design(data, m, config.model.kind, config.model.mode);
    nlohmann::json entry;
    FittedModel model =
        fit_model(config.model.kind, out.selected_params, d.train, d.validation, sub_seed(config.seed, kSeedModel + m),
                  &entry);
    entry["imputation"] = m;
    if (config.model.kind == ModelKind::Cox) {
      std::vector<std::size_t> selected;
      for (Eigen::Index k = 0; k < model.cox.beta.size(); ++k) {
        if (std::abs(model.cox.beta(k)) > 1e-8) selected.push_back(static_cast<std::size_t>(k));
      }
      try {
        WaldReport w = wald_stats(d.train, selected, cox_options(out.selected_params));
        w.label = "imputation " + std::to_string(m);
        out.wald.push_back(std::move(w));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularInformation) throw;
        entry["wald_error"] = e.what();
      }
    }
    per.push_back(std::move(entry));
    out.encoders.push_back(std::move(d.encoder));
    out.models.push_back(std::move(model));
  }
  if (!out.wald.empty() && out.wald.size() == data.completed.size()) {
    try {
      out.wald_pooled = pool_wald(out.wald);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SchemaMismatch) throw;  // imputations selected different features
    }
  }
  out.log = {{"kind", to_string(config.model.kind)},
             {"mode", to_string(config.model.mode)},
             {"selected_params", out.selected_params},
             {"cv", cv.table},
             {"dropped_missing", data.dropped_missing},
             {"vif_removed", out.vif_removed},
             {"imputations", per}};
  return out;
}

FitOutput run_fit(const ExperimentConfig& config) { return run_fit(config, prepare(config)); }

nlohmann::json artifact_to_json(const FitOutput& fit) {
  nlohmann::json j;
  j["format"] = "tvsurv-model";
  j["version"] = 1;
  j["config"] = fit.config.to_json();
  j["selected_params"] = fit.selected_params;
  j["vif_removed"] = fit.vif_removed;
  j["log"] = fit.log;
  auto& imps = j["imputations"] = nlohmann::json::array();
  for (std::size_t m = 0; m < fit.models.size(); ++m) {
    imps.push_back({{"encoder", fit.encoders[m].to_json()}, {"model", fit.models[m].to_json()}});
  }
  auto& wald = j["wald"] = nlohmann::json::array();
  for (const auto& w : fit.wald) wald.push_back(wald_to_json(w));
  if (fit.wald_pooled) j["wald_pooled"] = wald_to_json(*fit.wald_pooled);
  return j;
}

FitOutput artifact_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "tvsurv-model") {
    throw Error(ErrorCode::Parse, "not a model artifact");
  }
  if (j.at("version").get<int>() != 1) throw Error(ErrorCode::Parse, "unsupported artifact version");
  FitOutput f;
  f.config = ExperimentConfig::from_json(j.at("config"));
  f.selected_params = j.at("selected_params");
  f.vif_removed = j.at("vif_removed").get<std::vector<std::string>>();
  f.log = j.at("log");
  for (const auto& imp : j.at("imputations")) {
    f.encoders.push_back(Encoder::from_json(imp.at("encoder")));
    f.models.push_back(FittedModel::from_json(imp.at("model")));
  }
  for (const auto& w : j.at("wald")) f.wald.push_back(wald_from_json(w));
  if (j.contains("wald_pooled")) f.wald_pooled = wald_from_json(j.at("wald_pooled"));
  return f;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_predictions(const Predictions& validation, const Predictions& test, const EvalConfig& config,
                                CalibrationSeries* calibration) {
  const double h = config.horizon_days;
  EvalReport r;
  const Concordance c = harrell_c(test.risk, test.time, test.event);
  r.c_index() = c.defined ? c.value : kNaN;
  const Discrimination roc = auroc_1y(test.risk, test.time, test.event, h);
  const Discrimination pr = auprc_1y(test.risk, test.time, test.event, h);
  r.auroc_1y() = roc.defined ? roc.value : kNaN;
  r.auprc_1y() = pr.defined ? pr.value : kNaN;

  Recalibration recal;
  const Labels vl = labels_at(validation.risk, validation.time, validation.event, h);
  const auto positives = static_cast<std::size_t>(std::count(vl.positive.begin(), vl.positive.end(), 1));
  if (positives > 0 && positives < vl.positive.size()) recal = recalibrate(vl.scores, vl.positive);
  const std::vector<double> prob = recal.apply(test.risk);

  const SurvivalCurve g = fit_censoring_km(test.time, test.event);
  std::vector<double> surv(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) surv[i] = 1.0 - prob[i];
  r.brier_1y() = brier_at(surv, test.time, test.event, g, h).value;
  r.ibs_1y() = ibs_1y(test.curves, test.time, test.event, g, h).value;

  const Classification cls = classification_1y(prob, test.time, test.event, config.threshold, h);
  r.accuracy() = cls.accuracy;
  r.precision() = cls.precision;
  r.recall() = cls.recall;
  r.f1() = cls.f1;

  if (calibration) {
    const Labels tl = labels_at(prob, test.time, test.event, h);
    calibration->points = calibration_curve(tl.scores, tl.positive, config.bins);
  }
  return r;
}

EvalOutput run_evaluate(const FitOutput& fit, const PreparedData& data) {
  const ExperimentConfig& config = fit.config;
  if (fit.models.size() != data.completed.size()) {
    throw Error(ErrorCode::SchemaMismatch, "artifact has " + std::to_string(fit.models.size()) +
                                               " imputations, data has " + std::to_string(data.completed.size()));
  }
  EvalOutput out;
  std::vector<EvalReport> per;
  for (std::size_t m = 0; m < fit.models.size(); ++m) {
    const Design d = build_design(data, m, config.model.kind, config.model.mode, &fit.encoders[m]);
    std::vector<std::pair<Anchor, std::string>> variants;
    if (config.model.mode == Mode::Static) {
      variants.emplace_back(Anchor::Listing, "static");
    } else {
      variants.emplace_back(Anchor::Path, "dynamic");
      if (config.evaluation.listing_variant) variants.emplace_back(Anchor::Listing, "dynamic@listing");
    }
    for (const auto& [anchor, label] : variants) {
      const Predictions val = predict_table(fit.models[m], d.validation, anchor, config.evaluation.horizon_days);
      const Predictions test = predict_table(fit.models[m], d.test, anchor, config.evaluation.horizon_days);
      CalibrationSeries cal;
      EvalReport r = evaluate_predictions(val, test, config.evaluation, &cal);
      r.model = cal.model = std::string(to_string(config.model.kind));
      r.mode = cal.mode = label;
      r.imputation = cal.imputation = std::to_string(m);
      per.push_back(r);
      out.calibration.push_back(std::move(cal));
    }
  }
  out.reports = per;
  const auto pooled = pool_reports(per);
  out.reports.insert(out.reports.end(), pooled.begin(), pooled.end());
  return out;
}

namespace {

Predictions oracle_predictions(const PreparedData& data, const std::vector<std::size_t>& patients, double horizon,
                               bool observed_only) {
  const SimTruth& truth = *data.truth;
  Predictions p;
  const double limit = std::min(horizon, truth.horizon_days);
  for (auto i : patients) {
    const auto& o = data.cohort.patients[i].outcome;
    // Either the full latent path, or only the updates recorded before the
    // outcome, carried forward (what a path-anchored model sees).
    const SimPatientTruth path = observed_only ? truncated_path(truth.patients[i], static_cast<double>(o.time_days))
                                               : truth.patients[i];
    SurvivalCurve c;
    for (double t = 1.0; t <= limit; t += 1.0) {
      c.times.push_back(t);
      c.values.push_back(true_survival(truth, path, t));
    }
    p.risk.push_back(1.0 - c.at(horizon));
    p.curves.push_back(std::move(c));
    p.time.push_back(static_cast<double>(o.time_days));
    p.event.push_back(o.is_event() ? 1 : 0);
  }
  return p;
}

}  // namespace

EvalOutput evaluate_oracle(const ExperimentConfig& config, const PreparedData& data) {
  if (!data.truth) throw Error(ErrorCode::InvalidArgument, "oracle predictions need simulated data");
  EvalOutput out;
  for (bool observed : {false, true}) {
    const double h = config.evaluation.horizon_days;
    const Predictions val = oracle_predictions(data, data.split.validation, h, observed);
    const Predictions test = oracle_predictions(data, data.split.test, h, observed);
    CalibrationSeries cal;
    EvalReport r = evaluate_predictions(val, test, config.evaluation, &cal);
    r.model = cal.model = "oracle";
    r.mode = cal.mode = observed ? "observed-path" : "latent";
    r.imputation = cal.imputation = "0";
    out.reports.push_back(r);
    out.calibration.push_back(std::move(cal));
  }
  return out;
}

std::vector<ProfileRow> run_profile(const FitOutput& fit, const PreparedData& data, const std::string& patient_id) {
  const std::size_t idx = data.cohort.find(patient_id);
  if (idx == Cohort::npos) throw Error(ErrorCode::NotFound, "unknown patient '" + patient_id + "'");
  if (fit.models.empty()) throw Error(ErrorCode::InvalidArgument, "artifact holds no model");
  const Mode mode = fit.config.model.mode;
  const EpisodeTable table = encode_patients(data.completed.at(0), {idx}, fit.encoders[0], mode);
  const CovariatePath path = patient_path(table, 0);

  // Anchors: every observation time before the outcome.
  std::vector<double> anchors;
  for (const auto& obs : data.completed[0].patients[idx].observations) {
    if (obs.time_days == 0 || obs.time_days < data.completed[0].patients[idx].outcome.time_days) {
      anchors.push_back(static_cast<double>(obs.time_days));
    }
  }
  std::vector<ProfileRow> rows;
  for (double a : anchors) {
    const SurvivalCurve c = fit.models[0].predict(path.truncated_at(a), a + kOneYear);
    const double base = c.at(a);
    for (int u = 0; u <= 365; ++u) {
      const double s = base > 0.0 ? c.at(a + u) / base : 0.0;
      rows.push_back({a, static_cast<double>(u), std::clamp(s, 0.0, 1.0)});
    }
  }
  return rows;
}

void write_profile_csv(std::ostream& out, const std::vector<ProfileRow>& rows) {
  out << "anchor_day,t_day,survival\n";
  for (const auto& r : rows) {
    out << csv::format_double(r.anchor_day) << ',' << csv::format_double(r.t_day) << ','
        << csv::format_double(r.survival) << '\n';
  }
}

}  // namespace tvsurv
