#include <doctest.h>

#include <cmath>
#include <sstream>

#include "tvsurv/error.hpp"
#include "tvsurv/pipeline.hpp"

using namespace tvsurv;

namespace {

SimSpec drifting(std::size_t n, std::uint64_t seed) {
  SimSpec s;
  s.n_patients = n;
  s.numeric = 4;
  s.binary = 2;
  s.beta = {0.9, -0.6, 0.3, 0.0, 0.5, 0.0};
  s.baseline_hazard = 1e-3;
  s.mean_update_gap_days = 60;
  s.transplant_hazard = 1e-3;
  s.loss_hazard = 2e-4;
  s.seed = seed;
  return s;
}

ExperimentConfig config_for(const SimSpec& sim, ModelKind kind, Mode mode) {
  ExperimentConfig c;
  c.seed = 17;
  c.data.simulate = sim;
  c.preprocess.imputations = 1;
  c.model.kind = kind;
  c.model.mode = mode;
  c.evaluation.listing_variant = false;
  return c;
}

ErrorCode config_error(const nlohmann::json& j) {
  try {
    ExperimentConfig::from_json(j);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

std::string eval_csv(const EvalOutput& ev) {
  std::ostringstream out;
  write_eval_csv(out, ev.reports);
  return out.str();
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config validation") {
    nlohmann::json j = config_for(drifting(100, 1), ModelKind::Cox, Mode::Static).to_json();
    CHECK_NOTHROW(ExperimentConfig::from_json(j));
    CHECK(ExperimentConfig::from_json(j).to_json() == j);

    auto typo = j;
    typo["modle"] = {};
    CHECK(config_error(typo) == ErrorCode::Config);
    auto nested = j;
    nested["model"]["params"]["lamda"] = 0.1;
    CHECK(config_error(nested) == ErrorCode::Config);
    auto grid = j;
    grid["model"]["grid"]["n_trees"] = {10, 20};
    CHECK(config_error(grid) == ErrorCode::Config);

    auto both = j;
    both["data"]["path"] = "cohort.csv";
    CHECK(config_error(both) == ErrorCode::Config);
    auto neither = j;
    neither["data"].erase("simulate");
    CHECK(config_error(neither) == ErrorCode::Config);
    auto mode = j;
    mode["model"]["mode"] = "semi";
    CHECK(config_error(mode) == ErrorCode::Config);

    auto rel = j;
    rel["data"].erase("simulate");
    rel["data"]["path"] = "c.csv";
    CHECK(ExperimentConfig::from_json(rel, "/base").data.path == "/base/c.csv");
  }

  TEST_CASE("a one-point grid reproduces the direct fit") {
    ExperimentConfig direct = config_for(drifting(400, 2), ModelKind::Cox, Mode::Dynamic);
    direct.model.params = {{"lambda", 0.01}, {"l1_ratio", 0.5}};
    ExperimentConfig gridded = direct;
    gridded.model.params = {{"l1_ratio", 0.5}};
    gridded.model.grid = {{"lambda", {0.01}}};
    const PreparedData data = prepare(direct);
    const FitOutput a = run_fit(direct, data);
    const FitOutput b = run_fit(gridded, data);
    REQUIRE(a.models.size() == 1);
    REQUIRE(b.models.size() == 1);
    CHECK(a.models[0].cox.beta == b.models[0].cox.beta);
    CHECK(b.selected_params.at("lambda").get<double>() == 0.01);
  }

  TEST_CASE("dynamic mode trains on more rows than static") {
    const SimSpec sim = drifting(300, 3);
    const FitOutput dyn = run_fit(config_for(sim, ModelKind::Cox, Mode::Dynamic));
    const FitOutput sta = run_fit(config_for(sim, ModelKind::Cox, Mode::Static));
    const auto& d = dyn.log.at("imputations")[0];
    const auto& s = sta.log.at("imputations")[0];
    CHECK(s.at("rows").get<std::size_t>() == s.at("patients").get<std::size_t>());
    CHECK(d.at("rows").get<std::size_t>() > d.at("patients").get<std::size_t>());
    CHECK(d.at("patients") == s.at("patients"));
  }

  TEST_CASE("static Cox on the default simulation converges") {
    SimSpec sim = SimSpec::unos_like();
    sim.n_patients = 800;
    sim.seed = 4;
    const FitOutput fit = run_fit(config_for(sim, ModelKind::Cox, Mode::Static));
    CHECK(fit.log.at("imputations")[0].at("converged").get<bool>());
    CHECK(fit.log.at("kind") == "cox");
  }

  TEST_CASE("latent oracle outranks listing-anchored models") {
    // Path-anchored scoring sees the covariate in force at the outcome, so
    // only listing-anchored predictions are held to the oracle.
    const SimSpec sim = drifting(2000, 5);
    const PreparedData data = prepare(config_for(sim, ModelKind::Cox, Mode::Dynamic));
    const EvalOutput oracle = evaluate_oracle(config_for(sim, ModelKind::Cox, Mode::Dynamic), data);
    REQUIRE(oracle.reports.size() == 2);
    CHECK(oracle.reports[0].mode == "latent");
    CHECK(oracle.reports[1].mode == "observed-path");
    const EvalReport& best = oracle.reports[0];

    std::vector<EvalReport> fitted;
    fitted.push_back(run_evaluate(run_fit(config_for(sim, ModelKind::Cox, Mode::Static), data), data).reports.front());
    ExperimentConfig dyn = config_for(sim, ModelKind::Cox, Mode::Dynamic);
    dyn.evaluation.listing_variant = true;
    for (const auto& r : run_evaluate(run_fit(dyn, data), data).reports) {
      if (r.mode == "dynamic@listing" && r.imputation == "0") fitted.push_back(r);
    }
    REQUIRE(fitted.size() == 2);
    for (const auto& r : fitted) {
      CHECK(best.c_index() > r.c_index());
      CHECK(best.auroc_1y() > r.auroc_1y());
    }
  }

  TEST_CASE("evaluation is pure and reports nine metrics") {
    const ExperimentConfig c = config_for(drifting(400, 6), ModelKind::Cox, Mode::Dynamic);
    const PreparedData data = prepare(c);
    const FitOutput fit = run_fit(c, data);
    const EvalOutput a = run_evaluate(fit, data);
    const EvalOutput b = run_evaluate(fit, data);
    CHECK(eval_csv(a) == eval_csv(b));
    const std::string header = eval_csv(a).substr(0, eval_csv(a).find('\n'));
    CHECK(header ==
          "model,mode,imputation,Accuracy (1Y),Precision (1Y),Recall (1Y),F1 Score (1Y),Brier Score (1Y),"
          "IBS (in 1 Year),AUROC (1Y),AUPRC (1Y),C-Index");

    // The artifact survives serialization with identical predictions.
    const FitOutput back = artifact_from_json(nlohmann::json::parse(artifact_to_json(fit).dump()));
    CHECK(eval_csv(run_evaluate(back, data)) == eval_csv(a));
  }

  TEST_CASE("risk profiles") {
    ExperimentConfig c = config_for(drifting(200, 7), ModelKind::Cox, Mode::Dynamic);
    const PreparedData data = prepare(c);
    const FitOutput fit = run_fit(c, data);

    std::size_t multi = Cohort::npos, single = Cohort::npos;
    for (std::size_t i = 0; i < data.cohort.patients.size(); ++i) {
      const auto& p = data.cohort.patients[i];
      if (p.observations.size() >= 3 && multi == Cohort::npos) multi = i;
      if (p.observations.size() == 1 && single == Cohort::npos) single = i;
    }
    REQUIRE(multi != Cohort::npos);
    REQUIRE(single != Cohort::npos);

    const auto& mp = data.cohort.patients[multi];
    const auto rows = run_profile(fit, data, mp.patient_id);
    std::vector<double> anchors;
    for (const auto& r : rows) {
      if (anchors.empty() || anchors.back() != r.anchor_day) anchors.push_back(r.anchor_day);
      CHECK(r.survival >= 0.0);
      CHECK(r.survival <= 1.0);
    }
    REQUIRE(anchors.size() == mp.observations.size());
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      CHECK(anchors[k] == static_cast<double>(mp.observations[k].time_days));
      if (k) CHECK(anchors[k] > anchors[k - 1]);
    }

    const auto one = run_profile(fit, data, data.cohort.patients[single].patient_id);
    REQUIRE_FALSE(one.empty());
    for (const auto& r : one) CHECK(r.anchor_day == 0.0);
    CHECK(one.front().survival == 1.0);

    try {
      run_profile(fit, data, "no-such-patient");
      FAIL("expected NotFound");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NotFound);
    }

    std::ostringstream out;
    write_profile_csv(out, one);
    CHECK(out.str().rfind("anchor_day,t_day,survival\n", 0) == 0);
  }

  TEST_CASE("a risk-doubling jump lowers the re-anchored true survival") {
    SimTruth truth;
    truth.baseline_hazard = 8e-4;
    truth.horizon_days = 1825;
    SimPatientTruth p;
    p.patient_id = "j";
    p.change_days = {0.0, 200.0};
    p.linear_predictor = {0.1, 0.1 + std::log(2.0)};
    truth.patients.push_back(p);
    auto one_year_from = [&](double anchor) {
      const SimPatientTruth seen = truncated_path(p, anchor + 1e-9);
      return true_survival(truth, seen, anchor + 365.0) / true_survival(truth, seen, anchor);
    };
    const double before = one_year_from(100.0);
    const double after = one_year_from(250.0);
    CHECK(after < before);
    CHECK(std::log(after) == doctest::Approx(2.0 * std::log(before)).epsilon(1e-12));
  }
}
