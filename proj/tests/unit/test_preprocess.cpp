#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "tvsurv/cox.hpp"
#include "tvsurv/error.hpp"
#include "tvsurv/pipeline.hpp"
#include "tvsurv/preprocess.hpp"
#include "tvsurv/rng.hpp"
#include "tvsurv/simgen.hpp"

using namespace tvsurv;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

CovariateMatrix numeric_matrix(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
  CovariateMatrix m;
  for (std::size_t j = 0; j < names.size(); ++j) {
    CovariateMatrix::Column c;
    c.name = names[j];
    c.kind = ColumnKind::Numeric;
    c.numeric = cols[j];
    m.columns.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < cols.front().size(); ++i) m.keys.push_back({"p" + std::to_string(i), 0});
  return m;
}

void add_categorical(CovariateMatrix& m, const std::string& name, std::vector<std::string> labels) {
  CovariateMatrix::Column c;
  c.name = name;
  c.kind = ColumnKind::Categorical;
  c.labels = std::move(labels);
  m.columns.push_back(std::move(c));
}

std::vector<double> with_missing(std::size_t n, std::size_t missing, double value = 1.0) {
  std::vector<double> v(n, value);
  for (std::size_t i = 0; i < missing; ++i) v[i] = kNaN;
  return v;
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

bool same_cells(const CovariateMatrix::Column& a, const CovariateMatrix::Column& b) {
  if (a.kind == ColumnKind::Categorical) return a.labels == b.labels;
  for (std::size_t i = 0; i < a.numeric.size(); ++i) {
    const bool na = std::isnan(a.numeric[i]), nb = std::isnan(b.numeric[i]);
    if (na != nb || (!na && a.numeric[i] != b.numeric[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("missingness threshold drops at or above the cutoff") {
    const auto m = numeric_matrix({"keep", "at", "over"}, {with_missing(20, 5), with_missing(20, 6), with_missing(20, 7)});
    const auto r = drop_high_missing(m, 0.30);
    CHECK(r.dropped == std::vector<std::string>{"at", "over"});
    REQUIRE(r.matrix.cols() == 1);
    CHECK(r.matrix.columns[0].name == "keep");

    const auto again = drop_high_missing(r.matrix, 0.30);
    CHECK(again.dropped.empty());
    CHECK(again.matrix.cols() == 1);

    const auto full = numeric_matrix({"a", "b"}, {with_missing(10, 0), with_missing(10, 0)});
    CHECK(drop_high_missing(full).matrix.cols() == 2);

    const auto empty = numeric_matrix({"a"}, {with_missing(10, 4)});
    CHECK_THROWS_AS(drop_high_missing(empty, 0.3), Error);
  }

  TEST_CASE("complete matrix imputes to identical copies") {
    const auto m = numeric_matrix({"a", "b"}, {{1, 2, 3, 4}, {5, 6, 7, 8}});
    const auto set = impute(m, {.count = 5, .sweeps = 3, .seed = 1});
    REQUIRE(set.completed.size() == 5);
    for (const auto& c : set.completed) {
      CHECK(same_cells(c.columns[0], m.columns[0]));
      CHECK(same_cells(c.columns[1], m.columns[1]));
    }
  }

  TEST_CASE("degenerate observed range clamps the draw") {
    std::vector<double> seven(30, 7.0);
    seven[4] = kNaN;
    std::vector<double> other(30);
    for (std::size_t i = 0; i < other.size(); ++i) other[i] = static_cast<double>(i);
    const auto m = numeric_matrix({"seven", "other"}, {seven, other});
    const auto set = impute(m, {.count = 3, .sweeps = 5, .seed = 2});
    for (const auto& c : set.completed) CHECK(c.columns[0].numeric[4] == 7.0);
  }

  TEST_CASE("column without observations cannot be imputed") {
    const auto m = numeric_matrix({"a", "b"}, {with_missing(5, 5), with_missing(5, 0)});
    try {
      impute(m, {.count = 1, .sweeps = 1, .seed = 0});
      FAIL("expected CannotImpute");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::CannotImpute);
    }
  }

  TEST_CASE("imputed slope stays near the complete-data slope") {
    Rng rng(17);
    const std::size_t n = 2000;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = 0.6 * x[i] + 0.8 * rng.normal();
    }
    const double complete = slope(x, y);
    // Standard error of the complete-data slope estimate.
    double rss = 0, sxx = 0, mx = 0;
    for (double v : x) mx += v / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - complete * x[i];
      rss += r * r;
      sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);

    std::vector<double> masked = y;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.bernoulli(0.2)) masked[i] = kNaN;
    }
    const auto m = numeric_matrix({"x", "y"}, {x, masked});
    const auto set = impute(m, {.count = 5, .sweeps = 10, .seed = 4});
    for (const auto& c : set.completed) {
      CHECK(std::abs(slope(c.columns[0].numeric, c.columns[1].numeric) - complete) <= 2.0 * se);
    }
  }

  TEST_CASE("imputation keeps observed cells, stays in range and is reproducible") {
    Rng rng(5);
    const std::size_t n = 300;
    std::vector<double> a(n), b(n), c(n);
    std::vector<std::string> g(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.normal();
      b[i] = a[i] + rng.normal();
      c[i] = rng.uniform() < 0.15 ? kNaN : rng.normal() * 3;
      if (rng.uniform() < 0.15) b[i] = kNaN;
      g[i] = rng.uniform() < 0.1 ? "" : (rng.uniform() < 0.5 ? "u" : "v");
    }
    auto m = numeric_matrix({"a", "b", "c"}, {a, b, c});
    add_categorical(m, "g", g);
    const ImputeOptions opts{.count = 4, .sweeps = 4, .seed = 9, .threads = 1};
    const auto one = impute(m, opts);
    ImputeOptions threaded = opts;
    threaded.threads = 3;
    const auto three = impute(m, threaded);

    for (std::size_t k = 0; k < one.completed.size(); ++k) {
      const auto& done = one.completed[k];
      for (std::size_t j = 0; j < m.cols(); ++j) {
        const auto& src = m.columns[j];
        const auto& dst = done.columns[j];
        CHECK(dst.missing_count() == 0);
        CHECK(same_cells(dst, three.completed[k].columns[j]));
        if (src.kind == ColumnKind::Numeric) {
          double lo = INFINITY, hi = -INFINITY;
          for (double v : src.numeric) {
            if (!std::isnan(v)) {
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
          }
          for (std::size_t i = 0; i < n; ++i) {
            if (!std::isnan(src.numeric[i])) CHECK(dst.numeric[i] == src.numeric[i]);
            CHECK(dst.numeric[i] >= lo);
            CHECK(dst.numeric[i] <= hi);
          }
        } else {
          for (std::size_t i = 0; i < n; ++i) {
            if (!src.labels[i].empty()) CHECK(dst.labels[i] == src.labels[i]);
            CHECK((dst.labels[i] == "u" || dst.labels[i] == "v"));
          }
        }
      }
    }
  }

  TEST_CASE("orthogonal columns have unit VIF") {
    const std::vector<double> c1{1, -1, 1, -1, 1, -1, 1, -1};
    const std::vector<double> c2{1, 1, -1, -1, 1, 1, -1, -1};
    const std::vector<double> c3{1, 1, 1, 1, -1, -1, -1, -1};
    const auto r = vif_filter(numeric_matrix({"a", "b", "c"}, {c1, c2, c3}));
    CHECK(r.removed.empty());
    CHECK(r.iterations == 0);
    for (double v : r.final_vif) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("a duplicated column loses exactly one copy") {
    Rng rng(2);
    std::vector<double> a(100), b(100);
    for (std::size_t i = 0; i < 100; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    const auto r = vif_filter(numeric_matrix({"a", "a2", "b"}, {a, a, b}));
    REQUIRE(r.removed.size() == 1);
    CHECK((r.removed[0] == "a" || r.removed[0] == "a2"));
    CHECK(r.retained.size() == 2);
  }

  TEST_CASE("near-collinear VIF matches a two-regressor least-squares oracle") {
    Rng rng(8);
    const std::size_t n = 500;
    std::vector<double> x1(n), x2(n), x3(n);
    for (std::size_t i = 0; i < n; ++i) {
      x1[i] = rng.normal();
      x2[i] = rng.normal();
      x3[i] = x1[i] + x2[i] + 0.05 * rng.normal();
    }
    // R^2 of x3 on (x1, x2) from the 2x2 normal equations in centered form.
    auto centered = [&](const std::vector<double>& v) {
      double m = 0;
      for (double e : v) m += e / static_cast<double>(n);
      std::vector<double> out(n);
      for (std::size_t i = 0; i < n; ++i) out[i] = v[i] - m;
      return out;
    };
    const auto a = centered(x1), b = centered(x2), y = centered(x3);
    double saa = 0, sab = 0, sbb = 0, say = 0, sby = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      saa += a[i] * a[i];
      sab += a[i] * b[i];
      sbb += b[i] * b[i];
      say += a[i] * y[i];
      sby += b[i] * y[i];
      syy += y[i] * y[i];
    }
    const double det = saa * sbb - sab * sab;
    const double ca = (sbb * say - sab * sby) / det;
    const double cb = (saa * sby - sab * say) / det;
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - ca * a[i] - cb * b[i];
      rss += r * r;
    }
    const double oracle = 1.0 / (rss / syy);

    Eigen::MatrixXd x(n, 3);
    for (std::size_t i = 0; i < n; ++i) x.row(static_cast<Eigen::Index>(i)) << x1[i], x2[i], x3[i];
    const auto vif = variance_inflation(x);
    CHECK(vif[2] == doctest::Approx(oracle).epsilon(1e-9));

    const auto r = vif_filter(numeric_matrix({"x1", "x2", "x3"}, {x1, x2, x3}));
    CHECK(r.removed.size() == 1);
    CHECK(r.iterations <= 3);
    for (double v : r.final_vif) CHECK(v <= 10.0);
  }

  TEST_CASE("encoder standardizes training columns and one-hot encodes labels") {
    Rng rng(4);
    std::vector<double> x(50);
    for (double& v : x) v = 3.0 + 2.0 * rng.normal();
    auto m = numeric_matrix({"x"}, {x});
    std::vector<std::string> g(50);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::string(1, static_cast<char>('A' + i % 3));
    add_categorical(m, "g", g);
    const Encoder e = Encoder::fit(m);
    CHECK(e.feature_names() == std::vector<std::string>{"x", "g=A", "g=B", "g=C"});
    const auto out = e.apply(m);
    double mean = 0, ss = 0;
    for (const auto& r : out.rows) mean += r[0] / 50.0;
    for (const auto& r : out.rows) ss += (r[0] - mean) * (r[0] - mean);
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(std::abs(std::sqrt(ss / 49.0) - 1.0) <= 1e-12);
    CHECK(out.rows[1][1] == 0.0);
    CHECK(out.rows[1][2] == 1.0);
    CHECK(out.rows[1][3] == 0.0);
    for (const auto& r : out.rows) CHECK(r[1] + r[2] + r[3] <= 1.0);
  }

  TEST_CASE("encoder applies training statistics to new data") {
    // Sample mean 10, sample sd 2.
    const Encoder e = Encoder::fit(numeric_matrix({"x"}, {{8.0, 10.0, 12.0}}));
    CHECK(e.numeric()[0].sd == doctest::Approx(2.0));
    const auto out = e.apply(numeric_matrix({"x"}, {{14.0}}));
    CHECK(out.rows[0][0] == doctest::Approx(2.0).epsilon(1e-15));
  }

  TEST_CASE("unseen categories, constant columns and missing inputs") {
    auto m = numeric_matrix({"x", "flat"}, {{1.0, 2.0, 3.0}, {5.0, 5.0, 5.0}});
    add_categorical(m, "g", {"A", "B", "A"});
    const Encoder e = Encoder::fit(m);
    CHECK(e.feature_names() == std::vector<std::string>{"x", "g=A", "g=B"});

    auto test = numeric_matrix({"x", "flat"}, {{1.0}, {5.0}});
    add_categorical(test, "g", {"Z"});
    const auto out = e.apply(test);
    CHECK(out.rows[0][1] == 0.0);
    CHECK(out.rows[0][2] == 0.0);

    try {
      e.apply(numeric_matrix({"x"}, {{1.0}}));
      FAIL("expected SchemaMismatch");
    } catch (const Error& err) {
      CHECK(err.code() == ErrorCode::SchemaMismatch);
    }

    const Encoder dropped = Encoder::fit(m, {.drop_reference_level = true, .exclude = {"x"}});
    CHECK(dropped.feature_names() == std::vector<std::string>{"g=B"});
  }

  TEST_CASE("encoder JSON round-trip") {
    auto m = numeric_matrix({"x"}, {{1.0, 4.0, 9.0}});
    add_categorical(m, "g", {"A", "B", "C"});
    const Encoder e = Encoder::fit(m, {.drop_reference_level = true, .exclude = {}});
    const Encoder back = Encoder::from_json(nlohmann::json::parse(e.to_json().dump()));
    CHECK(back.feature_names() == e.feature_names());
    CHECK(back.apply(m).rows == e.apply(m).rows);
  }

  TEST_CASE("patient split sizes, determinism and disjointness") {
    const auto s10 = split_sizes(10, {0.8, 0.1, 0.1});
    CHECK(s10 == std::array<std::size_t, 3>{8, 1, 1});

    const auto a = split_patients(23807, {0.8, 0.1, 0.1}, 42);
    CHECK(std::abs(static_cast<long>(a.train.size()) - 19046) <= 1);
    CHECK(std::abs(static_cast<long>(a.validation.size()) - 2381) <= 1);
    CHECK(std::abs(static_cast<long>(a.test.size()) - 2381) <= 1);
    std::set<std::size_t> all;
    for (const auto* part : {&a.train, &a.validation, &a.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == 23807);
    CHECK(*all.rbegin() == 23806);

    const auto b = split_patients(23807, {0.8, 0.1, 0.1}, 42);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);

    try {
      split_patients(2, {0.8, 0.1, 0.1}, 1);
      FAIL("expected TooFewPatients");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TooFewPatients);
    }
  }

  TEST_CASE("cohort matrix round-trip") {
    SimSpec spec;
    spec.n_patients = 30;
    spec.numeric = 2;
    spec.binary = 1;
    spec.categorical_levels = {3};
    spec.seed = 1;
    const Cohort c = generate(spec).cohort;
    const auto m = CovariateMatrix::from_cohort(c);
    CHECK(m.rows() == c.observation_count());
    CHECK(m.columns[3].kind == ColumnKind::Categorical);
    const Cohort back = m.to_cohort(c);
    CHECK(back.covariates == c.covariates);
    for (std::size_t i = 0; i < c.patients.size(); ++i) {
      for (std::size_t k = 0; k < c.patients[i].observations.size(); ++k) {
        CHECK(back.patients[i].observations[k].values == c.patients[i].observations[k].values);
      }
    }
  }

  TEST_CASE("elastic-net selection") {
    SimSpec spec;
    spec.n_patients = 5000;
    spec.numeric = 10;
    spec.binary = 0;
    spec.beta = {0, 0.6, 0, -0.6};
    spec.baseline_hazard = 1e-3;
    spec.transplant_hazard = 1e-3;
    spec.loss_hazard = 0;
    spec.seed = 31;
    const auto sim = generate(spec);
    ExperimentConfig config;
    config.data.simulate = spec;
    config.preprocess.imputations = 1;
    config.model.kind = ModelKind::Cox;
    config.model.mode = Mode::Static;
    config.seed = 7;
    const PreparedData data = prepare(config);
    const Design d = build_design(data, 0, ModelKind::Cox, Mode::Static);

    CHECK(elasticnet_select(d.train, {0.0, 1.0}).size() == d.train.features());
    const double top = lambda_max(d.train, 1.0);
    CHECK(elasticnet_select(d.train, {top * 1.01, 1.0}).empty());

    config.model.grid = {{"lambda", {top * 0.5, top * 0.1, top * 0.02, top * 0.004}}, {"l1_ratio", {1.0}}};
    const CvResult cv = cross_validate(config, d);
    const PenaltySpec chosen = cox_penalty(cv.best_params);
    const auto keep = elasticnet_select(d.train, chosen);
    std::set<std::string> names;
    for (auto j : keep) names.insert(d.train.feature_names[j]);
    const auto schema = spec.covariate_names();
    CHECK(names.count(schema[1]) == 1);
    CHECK(names.count(schema[3]) == 1);
  }
}
