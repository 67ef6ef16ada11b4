// tvsurv command-line tool: simulate, fit, evaluate, profile, report.
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 fit divergence,
// 4 schema mismatch between model and data, 5 unknown patient.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tvsurv/cohort.hpp"
#include "tvsurv/cox.hpp"
#include "tvsurv/error.hpp"
#include "tvsurv/km.hpp"
#include "tvsurv/pipeline.hpp"
#include "tvsurv/simgen.hpp"

namespace fs = std::filesystem;
using namespace tvsurv;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kDiverged = 3, kSchema = 4, kUnknownPatient = 5 };

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config:
    case ErrorCode::BadSpec:
      return kConfig;
    case ErrorCode::Diverged:
    case ErrorCode::SingularInformation:
      return kDiverged;
    case ErrorCode::SchemaMismatch:
      return kSchema;
    case ErrorCode::NotFound:
      return kUnknownPatient;
    default:
      return kFailure;
  }
}

/// Files staged under temporary names and renamed into place on commit.
/// Anything not committed is removed when the transaction goes away.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;
  ~Outputs() {
    std::error_code ec;
    for (const auto& [tmp, final_path] : staged_) fs::remove(tmp, ec);
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    const fs::path final_path = dir_ / name;
    const fs::path tmp = dir_ / ("." + name + ".tmp" + std::to_string(::getpid()));
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + tmp.string() + "'");
      staged_.emplace_back(tmp, final_path);
      body(out);
      out.flush();
      if (!out) throw Error(ErrorCode::InvalidArgument, "write failed for '" + tmp.string() + "'");
    }
  }

  void write_json(const std::string& name, const nlohmann::json& j) {
    write(name, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
  }

  void commit() {
    for (const auto& [tmp, final_path] : staged_) fs::rename(tmp, final_path);
    staged_.clear();
  }

 private:
  fs::path dir_;
  std::vector<std::pair<fs::path, fs::path>> staged_;
};

nlohmann::json read_json_file(const std::string& path, ErrorCode on_error) {
  std::ifstream in(path);
  if (!in) throw Error(on_error, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(on_error, "'" + path + "': " + e.what());
  }
}

struct Globals {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  bool seed_given = false;
};

ExperimentConfig load_config(const Globals& g) {
  if (g.config.empty()) throw Error(ErrorCode::Config, "--config is required");
  const nlohmann::json j = read_json_file(g.config, ErrorCode::Config);
  ExperimentConfig c = ExperimentConfig::from_json(j, fs::path(g.config).parent_path().string());
  if (g.seed_given) c.seed = g.seed;
  return c;
}

/// The artifact's model block combined with the data, preprocessing and
/// evaluation blocks of --config when one is given.
FitOutput load_artifact(const Globals& g, const std::string& model_path) {
  FitOutput fit = artifact_from_json(read_json_file(model_path, ErrorCode::Parse));
  if (!g.config.empty()) {
    ExperimentConfig c = load_config(g);
    c.model = fit.config.model;
    fit.config = c;
  } else if (g.seed_given) {
    fit.config.seed = g.seed;
  }
  return fit;
}

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

int cmd_simulate(const Globals& g) {
  ExperimentConfig c = load_config(g);
  if (!c.data.simulate) throw Error(ErrorCode::Config, "data.simulate: required by the simulate command");
  const PreparedData data = prepare(c);
  Outputs out(ensure_dir(g.out));
  out.write("cohort.csv", [&](std::ostream& os) { write_long_csv(os, data.cohort); });
  out.write_json("truth.json", truth_to_json(*data.truth));
  out.commit();
  std::cout << "simulated " << data.cohort.patients.size() << " patients, " << data.cohort.observation_count()
            << " observations\n";
  return kOk;
}

int cmd_fit(const Globals& g) {
  const ExperimentConfig c = load_config(g);
  const FitOutput fit = run_fit(c);
  Outputs out(ensure_dir(g.out));
  out.write_json("model.json", artifact_to_json(fit));
  out.write_json("fit_log.json", fit.log);
  out.commit();
  std::cout << "fitted " << fit.models.size() << " " << to_string(c.model.kind) << " model(s), mode "
            << to_string(c.model.mode) << "\n";
  return kOk;
}

int cmd_evaluate(const Globals& g, const std::string& model_path, bool oracle) {
  const FitOutput fit = load_artifact(g, model_path);
  const PreparedData data = prepare(fit.config);
  EvalOutput eval = run_evaluate(fit, data);
  if (oracle) {
    EvalOutput o = evaluate_oracle(fit.config, data);
    eval.reports.insert(eval.reports.end(), o.reports.begin(), o.reports.end());
    eval.calibration.insert(eval.calibration.end(), o.calibration.begin(), o.calibration.end());
  }
  Outputs out(ensure_dir(g.out));
  out.write("eval.csv", [&](std::ostream& os) { write_eval_csv(os, eval.reports); });
  out.write("calibration.csv", [&](std::ostream& os) { write_calibration_csv(os, eval.calibration); });
  out.commit();
  for (const auto& r : eval.reports) {
    if (r.imputation == "pooled" || r.model == "oracle") {
      std::cout << r.model << " " << r.mode << ": C-index " << r.c_index() << ", AUROC(1Y) " << r.auroc_1y() << "\n";
    }
  }
  return kOk;
}

int cmd_profile(const Globals& g, const std::string& model_path, const std::string& patient) {
  const FitOutput fit = load_artifact(g, model_path);
  const PreparedData data = prepare(fit.config);
  const auto rows = run_profile(fit, data, patient);
  Outputs out(ensure_dir(g.out));
  out.write("profile_" + patient + ".csv", [&](std::ostream& os) { write_profile_csv(os, rows); });
  out.commit();
  return kOk;
}

int cmd_report(const Globals& g, const std::string& model_path) {
  const FitOutput fit = load_artifact(g, model_path);
  const PreparedData data = prepare(fit.config);
  Outputs out(ensure_dir(g.out));

  std::vector<double> entry, exit;
  std::vector<std::uint8_t> event;
  for (const auto& p : data.cohort.patients) {
    entry.push_back(0.0);
    exit.push_back(static_cast<double>(p.outcome.time_days));
    event.push_back(p.outcome.is_event() ? 1 : 0);
  }
  const SurvivalCurve km = fit_km(entry, exit, event);
  out.write("km.csv", [&](std::ostream& os) { write_curve_csv(os, km); });

  for (std::size_t m = 0; m < fit.wald.size(); ++m) {
    out.write("wald_" + std::to_string(m) + ".csv", [&](std::ostream& os) { write_wald_csv(os, fit.wald[m]); });
  }
  if (fit.wald_pooled) {
    out.write("wald_pooled.csv", [&](std::ostream& os) { write_wald_csv(os, *fit.wald_pooled); });
  }
  if (!fit.models.empty() && fit.models[0].kind == ModelKind::Cox) {
    const SurvivalCurve base = fit.models[0].cox.baseline.to_survival();
    out.write("baseline_survival.csv", [&](std::ostream& os) { write_curve_csv(os, base); });
  }
  const auto& imps = fit.log.value("imputations", nlohmann::json::array());
  if (!imps.empty() && imps[0].contains("loss_trace")) {
    out.write("training_log.csv", [&](std::ostream& os) {
      std::vector<TrainingLogRow> rows;
      for (const auto& r : imps[0].at("loss_trace")) {
        rows.push_back({r.at(0).get<std::size_t>(), r.at(1).get<double>(), r.at(2).get<double>()});
      }
      write_training_log_csv(os, rows);
    });
  }
  out.commit();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Survival modelling with time-varying covariates"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--out", g.out, "Output directory");
  auto* seed_opt = app.add_option("--seed", g.seed, "Override the config seed");

  std::string model_path, patient;
  bool oracle = false;
  auto* sim = app.add_subcommand("simulate", "Write a synthetic cohort and its truth sidecar");
  auto* fit = app.add_subcommand("fit", "Preprocess, optionally grid-search, and fit");
  auto* eval = app.add_subcommand("evaluate", "Score a fitted model on the test split");
  eval->add_option("--model", model_path, "Model artifact")->required();
  eval->add_flag("--oracle", oracle, "Also score true-hazard predictions (simulated data)");
  auto* prof = app.add_subcommand("profile", "Re-anchored survival at each update of one patient");
  prof->add_option("--model", model_path, "Model artifact")->required();
  prof->add_option("--patient", patient, "Patient id")->required();
  auto* rep = app.add_subcommand("report", "Wald tables and plot-ready curves");
  rep->add_option("--model", model_path, "Model artifact")->required();
  // Global flags are also accepted after the subcommand name.
  for (auto* sub : {sim, fit, eval, prof, rep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*sim) return cmd_simulate(g);
    if (*fit) return cmd_fit(g);
    if (*eval) return cmd_evaluate(g, model_path, oracle);
    if (*prof) return cmd_profile(g, model_path, patient);
    if (*rep) return cmd_report(g, model_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
