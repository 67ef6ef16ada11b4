#include "tvsurv/discrete_nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "tvsurv/csv.hpp"
#include "tvsurv/error.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

namespace {

constexpr double kFloor = 1e-12;

}  // namespace

void TimeGrid::validate() const {
  if (bins < 2) throw Error(ErrorCode::InvalidArgument, "time grid needs at least 2 bins");
  if (!(horizon_days > 0.0) || !std::isfinite(horizon_days)) {
    throw Error(ErrorCode::InvalidArgument, "time grid horizon must be positive");
  }
}

double TimeGrid::edge(std::size_t k) const {
  if (k >= bins) return horizon_days;
  return static_cast<double>(k) * horizon_days / static_cast<double>(bins);
}

BinAssignment discretize(double time_days, const TimeGrid& grid) {
  if (!(time_days >= 0.0)) throw Error(ErrorCode::BadTime, "negative or NaN time " + std::to_string(time_days));
  BinAssignment a;
  if (time_days > grid.horizon_days) {
    a.bin = grid.bins;
    a.clamped = true;
    return a;
  }
  const double scaled = time_days * static_cast<double>(grid.bins) / grid.horizon_days;
  std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(scaled)), 1, grid.bins);
  // Rounding in `scaled` can land one bin off the edges used elsewhere.
  if (k > 1 && time_days <= grid.edge(k - 1)) --k;
  if (k < grid.bins && time_days > grid.edge(k)) ++k;
  a.bin = k;
  return a;
}

double survival_from_pmf(std::span<const double> pmf, std::size_t t) {
  if (t > pmf.size()) {
    throw Error(ErrorCode::InvalidArgument, "bin index " + std::to_string(t) + " beyond " + std::to_string(pmf.size()));
  }
  double s = 0.0;
  for (std::size_t r = t; r < pmf.size(); ++r) s += pmf[r];
  return s;
}

Eigen::VectorXd history_input(const Eigen::VectorXd& covariates, double elapsed_days, std::size_t prior_updates,
                              const TimeGrid& grid) {
  if (!(elapsed_days >= 0.0)) throw Error(ErrorCode::BadTime, "negative elapsed time");
  Eigen::VectorXd v(covariates.size() + 2);
  v.head(covariates.size()) = covariates;
  v(covariates.size()) = elapsed_days / grid.horizon_days;
  v(covariates.size() + 1) = std::log1p(static_cast<double>(prior_updates));
  return v;
}

void LossSpec::validate() const {
  if (!(alpha_rank >= 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha_rank must be >= 0");
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be > 0");
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
}

SurvivalSamples SurvivalSamples::select(std::span<const std::size_t> columns) const {
  SurvivalSamples s;
  s.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    s.inputs.col(static_cast<Eigen::Index>(k)) = inputs.col(static_cast<Eigen::Index>(columns[k]));
    s.time.push_back(time[columns[k]]);
    s.event.push_back(event[columns[k]]);
  }
  return s;
}

SurvivalSamples samples_from_episodes(const EpisodeTable& episodes, const TimeGrid& grid) {
  SurvivalSamples s;
  const auto p = static_cast<Eigen::Index>(episodes.features());
  s.inputs.resize(p + 2, static_cast<Eigen::Index>(episodes.rows()));
  Eigen::Index col = 0;
  for (std::size_t pi = 0; pi < episodes.patients(); ++pi) {
    const PatientOutcome o = patient_outcome(episodes, pi);
    for (std::size_t i = episodes.patient_offsets[pi]; i < episodes.patient_offsets[pi + 1]; ++i) {
      const Eigen::VectorXd x = episodes.x.row(static_cast<Eigen::Index>(i)).transpose();
      s.inputs.col(col++) = history_input(x, episodes.start[i], i - episodes.patient_offsets[pi], grid);
      s.time.push_back(o.time);
      s.event.push_back(o.event ? 1 : 0);
    }
  }
  return s;
}

DiscreteSurvModel::DiscreteSurvModel(std::size_t inputs, std::vector<std::size_t> hidden, TimeGrid grid,
                                     std::uint64_t seed)
    : grid_(grid) {
  grid_.validate();
  if (inputs == 0) throw Error(ErrorCode::InvalidArgument, "model needs at least one input");
  Rng rng(seed);
  std::vector<std::size_t> sizes{inputs};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(grid_.bins);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const auto out = static_cast<Eigen::Index>(sizes[l]);
    const auto in = static_cast<Eigen::Index>(sizes[l - 1]);
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    Eigen::MatrixXd w(out, in);
    for (Eigen::Index c = 0; c < in; ++c) {
      for (Eigen::Index r = 0; r < out; ++r) w(r, c) = scale * rng.normal();
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Eigen::VectorXd::Zero(out));
  }
}

std::vector<std::size_t> DiscreteSurvModel::layer_sizes() const {
  std::vector<std::size_t> s;
  if (weights_.empty()) return s;
  s.push_back(static_cast<std::size_t>(weights_.front().cols()));
  for (const auto& w : weights_) s.push_back(static_cast<std::size_t>(w.rows()));
  return s;
}

namespace {

void softmax_columns(Eigen::MatrixXd& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    auto col = z.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

}  // namespace

Eigen::MatrixXd DiscreteSurvModel::pmf(const Eigen::MatrixXd& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != this->inputs()) {
    throw Error(ErrorCode::SchemaMismatch, "input width " + std::to_string(inputs.rows()) + ", model expects " +
                                               std::to_string(this->inputs()));
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    if (l + 1 < weights_.size()) {
      a = z.cwiseMax(0.0);
    } else {
      a = std::move(z);
    }
  }
  softmax_columns(a);
  return a;
}

std::size_t DiscreteSurvModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  }
  return n;
}

Eigen::VectorXd DiscreteSurvModel::parameters() const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    theta.segment(o, weights_[l].size()) = Eigen::Map<const Eigen::VectorXd>(weights_[l].data(), weights_[l].size());
    o += weights_[l].size();
    theta.segment(o, biases_[l].size()) = biases_[l];
    o += biases_[l].size();
  }
  return theta;
}

void DiscreteSurvModel::set_parameters(const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) {
    throw Error(ErrorCode::SchemaMismatch, "parameter vector length mismatch");
  }
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::Map<Eigen::VectorXd>(weights_[l].data(), weights_[l].size()) = theta.segment(o, weights_[l].size());
    o += weights_[l].size();
    biases_[l] = theta.segment(o, biases_[l].size());
    o += biases_[l].size();
  }
}

DiscreteSurvModel::LossValue pmf_loss(const Eigen::MatrixXd& pmf, std::span<const double> time,
                                      std::span<const std::uint8_t> event, const TimeGrid& grid,
                                      const LossSpec& spec, Eigen::MatrixXd* d_pmf) {
  const auto K = pmf.rows();
  const auto B = pmf.cols();
  if (B == 0) throw Error(ErrorCode::InvalidArgument, "empty batch");
  if (static_cast<std::size_t>(K) != grid.bins || time.size() != static_cast<std::size_t>(B) ||
      event.size() != time.size()) {
    throw Error(ErrorCode::InvalidArgument, "loss inputs disagree in shape");
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  if (d_pmf) d_pmf->setZero(K, B);

  // F(:, i) holds the cumulative incidence at every bin.
  Eigen::MatrixXd cif(K, B);
  std::vector<Eigen::Index> bin(static_cast<std::size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) {
    double run = 0.0;
    for (Eigen::Index r = 0; r < K; ++r) cif(r, i) = run += pmf(r, i);
    bin[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(discretize(time[static_cast<std::size_t>(i)], grid).bin);
  }

  DiscreteSurvModel::LossValue v;
  for (Eigen::Index i = 0; i < B; ++i) {
    const Eigen::Index k = bin[static_cast<std::size_t>(i)];
    if (event[static_cast<std::size_t>(i)]) {
      const double p = pmf(k - 1, i);
      v.likelihood -= std::log(std::max(p, kFloor)) * inv_b;
      if (d_pmf && p > kFloor) (*d_pmf)(k - 1, i) -= inv_b / p;
    } else {
      double s = 0.0;
      for (Eigen::Index r = k; r < K; ++r) s += pmf(r, i);
      v.likelihood -= std::log(std::max(s, kFloor)) * inv_b;
      if (d_pmf && s > kFloor) {
        for (Eigen::Index r = k; r < K; ++r) (*d_pmf)(r, i) -= inv_b / s;
      }
    }
  }

  if (spec.alpha_rank > 0.0) {
    // u(k, m): derivative of the ranking sum w.r.t. F_m at bin k.
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(K, B);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < B; ++i) {
      if (!event[static_cast<std::size_t>(i)]) continue;
      const double ti = time[static_cast<std::size_t>(i)];
      const Eigen::Index k = bin[static_cast<std::size_t>(i)] - 1;
      const double fi = cif(k, i);
      for (Eigen::Index j = 0; j < B; ++j) {
        if (!(ti < time[static_cast<std::size_t>(j)])) continue;
        const double e = std::exp(-(fi - cif(k, j)) / spec.sigma);
        sum += e;
        ++v.pairs;
        u(k, i) -= e / spec.sigma;
        u(k, j) += e / spec.sigma;
      }
    }
    if (v.pairs > 0) {
      const double scale = spec.alpha_rank / static_cast<double>(v.pairs);
      v.ranking = scale * sum;
      if (d_pmf) {
        // dF(k)/dp_r = 1 for r <= k: suffix sums over k.
        for (Eigen::Index m = 0; m < B; ++m) {
          double run = 0.0;
          for (Eigen::Index r = K; r-- > 0;) {
            run += u(r, m);
            (*d_pmf)(r, m) += scale * run;
          }
        }
      }
    }
  }
  v.total = v.likelihood + v.ranking;
  return v;
}

DiscreteSurvModel::LossValue DiscreteSurvModel::loss(const SurvivalSamples& batch, const LossSpec& spec,
                                                     Eigen::VectorXd* gradient) const {
  if (static_cast<std::size_t>(batch.inputs.rows()) != inputs()) {
    throw Error(ErrorCode::SchemaMismatch, "batch width does not match the model");
  }
  const std::size_t L = weights_.size();
  std::vector<Eigen::MatrixXd> act(L + 1);  // act[0] = inputs, act[l] = post-activation of layer l
  std::vector<Eigen::MatrixXd> pre(L);
  act[0] = batch.inputs;
  for (std::size_t l = 0; l < L; ++l) {
    pre[l] = weights_[l] * act[l];
    pre[l].colwise() += biases_[l];
    if (l + 1 < L) {
      act[l + 1] = pre[l].cwiseMax(0.0);
    } else {
      act[l + 1] = pre[l];
      softmax_columns(act[l + 1]);
    }
  }
  const Eigen::MatrixXd& p = act[L];
  Eigen::MatrixXd g;
  LossValue v = pmf_loss(p, batch.time, batch.event, grid_, spec, gradient ? &g : nullptr);
  if (!gradient) return v;

  // Softmax Jacobian: dz = p * (g - <g, p>).
  const Eigen::RowVectorXd gp = (g.array() * p.array()).colwise().sum();
  Eigen::MatrixXd dz = p.array() * (g.rowwise() - gp).array();

  gradient->resize(static_cast<Eigen::Index>(parameter_count()));
  std::vector<Eigen::Index> offset(L);
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offset[l] = o;
    o += weights_[l].size() + biases_[l].size();
  }
  for (std::size_t l = L; l-- > 0;) {
    const Eigen::MatrixXd dw = dz * act[l].transpose();
    gradient->segment(offset[l], dw.size()) = Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
    gradient->segment(offset[l] + dw.size(), biases_[l].size()) = dz.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd da = weights_[l].transpose() * dz;
    dz = (pre[l - 1].array() > 0.0).select(da, 0.0);
  }
  return v;
}

nlohmann::json DiscreteSurvModel::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["grid"] = {{"bins", grid_.bins}, {"horizon_days", grid_.horizon_days}};
  j["feature_names"] = feature_names;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    layers.push_back({{"rows", weights_[l].rows()},
                      {"cols", weights_[l].cols()},
                      {"weights", std::vector<double>(weights_[l].data(), weights_[l].data() + weights_[l].size())},
                      {"bias", std::vector<double>(biases_[l].data(), biases_[l].data() + biases_[l].size())}});
  }
  return j;
}

DiscreteSurvModel DiscreteSurvModel::from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw Error(ErrorCode::Parse, "unsupported model version");
  DiscreteSurvModel m;
  m.grid_.bins = j.at("grid").at("bins").get<std::size_t>();
  m.grid_.horizon_days = j.at("grid").at("horizon_days").get<double>();
  m.grid_.validate();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& lj : j.at("layers")) {
    const auto rows = lj.at("rows").get<Eigen::Index>();
    const auto cols = lj.at("cols").get<Eigen::Index>();
    const auto w = lj.at("weights").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw Error(ErrorCode::Parse, "layer shape does not match its data");
    }
    m.weights_.push_back(Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols));
    m.biases_.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), rows));
  }
  if (m.weights_.empty() || static_cast<std::size_t>(m.weights_.back().rows()) != m.grid_.bins) {
    throw Error(ErrorCode::Parse, "output layer width differs from the bin count");
  }
  return m;
}

namespace {

double dataset_loss(const DiscreteSurvModel& model, const SurvivalSamples& data, const LossSpec& spec) {
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> cols;
  for (std::size_t start = 0; start < data.size(); start += spec.batch_size) {
    const std::size_t end = std::min(data.size(), start + spec.batch_size);
    cols.resize(end - start);
    std::iota(cols.begin(), cols.end(), start);
    total += model.loss(data.select(cols), spec).total * static_cast<double>(end - start);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

TrainResult train(const SurvivalSamples& training, const SurvivalSamples& validation, const TimeGrid& grid,
                  const LossSpec& spec, const TrainOptions& options) {
  spec.validate();
  grid.validate();
  if (training.size() == 0) throw Error(ErrorCode::InvalidArgument, "no training samples");

  TrainResult result;
  result.model = DiscreteSurvModel(static_cast<std::size_t>(training.inputs.rows()), options.hidden, grid,
                                   sub_seed(spec.seed, 0));
  DiscreteSurvModel& model = result.model;
  Eigen::VectorXd theta = model.parameters();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::size_t step = 0;

  const SurvivalSamples& monitor = validation.size() > 0 ? validation : training;
  Eigen::VectorXd best = theta;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(training.size());
  std::vector<std::size_t> cols;
  Eigen::VectorXd grad;

  for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(sub_seed(spec.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
      const std::size_t end = std::min(order.size(), start + spec.batch_size);
      cols.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto v = model.loss(training.select(cols), spec, &grad);
      if (!std::isfinite(v.total) || !grad.allFinite()) {
        throw Error(ErrorCode::Diverged, "non-finite loss at epoch " + std::to_string(epoch));
      }
      ++step;
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
      m2 = kBeta2 * m2 + (1.0 - kBeta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      theta.array() -= spec.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + kEps);
      model.set_parameters(theta);
    }
    TrainingLogRow row;
    row.epoch = epoch;
    row.train_loss = dataset_loss(model, training, spec);
    row.validation_loss = validation.size() > 0 ? dataset_loss(model, validation, spec) : row.train_loss;
    if (!std::isfinite(row.train_loss) || !std::isfinite(row.validation_loss)) {
      throw Error(ErrorCode::Diverged, "non-finite loss at epoch " + std::to_string(epoch));
    }
    result.log.push_back(row);
    const double monitored = &monitor == &validation ? row.validation_loss : row.train_loss;
    if (monitored < best_loss) {
      best_loss = monitored;
      best = theta;
      result.best_epoch = epoch;
    } else if (epoch - result.best_epoch >= spec.patience) {
      break;
    }
  }
  model.set_parameters(best);
  return result;
}

void write_training_log_csv(std::ostream& out, std::span<const TrainingLogRow> log) {
  out << "epoch,train_loss,validation_loss\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << csv::format_double(r.train_loss) << ',' << csv::format_double(r.validation_loss) << '\n';
  }
}

SurvivalCurve predict_survival(const DiscreteSurvModel& model, const Eigen::VectorXd& input) {
  const Eigen::MatrixXd p = model.pmf(input);
  const auto K = model.grid().bins;
  SurvivalCurve c;
  double tail = p.sum();
  for (std::size_t k = 1; k <= K; ++k) {
    tail -= p(static_cast<Eigen::Index>(k - 1), 0);
    c.times.push_back(model.grid().edge(k));
    c.values.push_back(k == K ? 0.0 : std::max(tail, 0.0));
  }
  return c;
}

SurvivalCurve predict_survival(const DiscreteSurvModel& model, const CovariatePath& path) {
  if (path.values.empty()) throw Error(ErrorCode::InvalidArgument, "empty covariate path");
  const TimeGrid& grid = model.grid();
  const std::size_t K = grid.bins;
  // Anchor used for bin k: latest change time <= e_{k-1}.
  std::vector<std::size_t> anchor(K);
  std::size_t last_used = 0;
  for (std::size_t k = 1; k <= K; ++k) {
    const double e = grid.edge(k - 1);
    const auto it = std::upper_bound(path.change_times.begin(), path.change_times.end(), e);
    anchor[k - 1] = it == path.change_times.begin() ? 0 : static_cast<std::size_t>(it - path.change_times.begin()) - 1;
    last_used = std::max(last_used, anchor[k - 1]);
  }
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(model.inputs()), static_cast<Eigen::Index>(last_used + 1));
  for (std::size_t a = 0; a <= last_used; ++a) {
    inputs.col(static_cast<Eigen::Index>(a)) = history_input(path.values[a], std::max(path.change_times[a], 0.0), a, grid);
  }
  if (last_used == 0) return predict_survival(model, Eigen::VectorXd(inputs.col(0)));
  const Eigen::MatrixXd p = model.pmf(inputs);

  SurvivalCurve c;
  double s = 1.0;
  for (std::size_t k = 1; k <= K; ++k) {
    const auto col = static_cast<Eigen::Index>(anchor[k - 1]);
    double tail = 0.0;
    for (std::size_t r = k; r <= K; ++r) tail += p(static_cast<Eigen::Index>(r - 1), col);
    const double h = tail > 0.0 ? std::clamp(p(static_cast<Eigen::Index>(k - 1), col) / tail, 0.0, 1.0) : 1.0;
    s *= 1.0 - h;
    c.times.push_back(grid.edge(k));
    c.values.push_back(k == K ? 0.0 : s);
  }
  return c;
}

}  // namespace tvsurv
