#include "tvsurv/rsf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "tvsurv/error.hpp"
#include "tvsurv/km.hpp"
#include "tvsurv/rng.hpp"

namespace tvsurv {

std::size_t ForestSpec::resolved_mtry(std::size_t p) const {
  if (mtry != 0) return mtry;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p)))));
}

void ForestSpec::validate(std::size_t p) const {
  if (n_trees == 0) throw Error(ErrorCode::BadSpec, "n_trees must be at least 1");
  if (p == 0) throw Error(ErrorCode::BadSpec, "forest needs at least one feature");
  if (mtry > p) {
    throw Error(ErrorCode::BadSpec, "mtry " + std::to_string(mtry) + " exceeds feature count " + std::to_string(p));
  }
  if (max_candidates == 0) throw Error(ErrorCode::BadSpec, "max_candidates must be at least 1");
}

const SurvivalTree::Leaf& SurvivalTree::leaf_for(const double* x) const {
  std::size_t k = 0;
  while (nodes[k].feature >= 0) {
    const auto& n = nodes[k];
    k = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left : n.right);
  }
  return leaves[static_cast<std::size_t>(nodes[k].leaf)];
}

std::size_t SurvivalTree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].feature < 0) continue;
    d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
    d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
    best = std::max(best, d[k] + 1);
  }
  return best;
}

namespace {

// Per-node risk bookkeeping on the node's own event grid. Row r is at risk on
// grid indices [lo[r], hi[r]] and, if it is an event row, dies at hi[r].
struct NodeGrid {
  std::vector<double> times;
  std::vector<std::int32_t> lo, hi;
  std::vector<double> y, d;  // totals
  double event_weight = 0.0;
};

NodeGrid node_grid(std::span<const double> entry, std::span<const double> exit,
                   std::span<const std::uint8_t> event, std::span<const double> weight) {
  NodeGrid g;
  const std::size_t n = exit.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (event[i] && weight[i] > 0) g.times.push_back(exit[i]);
  }
  std::sort(g.times.begin(), g.times.end());
  g.times.erase(std::unique(g.times.begin(), g.times.end()), g.times.end());
  const std::size_t G = g.times.size();
  g.lo.resize(n);
  g.hi.resize(n);
  std::vector<double> dy(G + 1, 0.0);
  g.d.assign(G, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g.lo[i] = static_cast<std::int32_t>(std::upper_bound(g.times.begin(), g.times.end(), entry[i]) - g.times.begin());
    g.hi[i] = static_cast<std::int32_t>(std::upper_bound(g.times.begin(), g.times.end(), exit[i]) - g.times.begin()) - 1;
    if (g.lo[i] <= g.hi[i]) {
      dy[static_cast<std::size_t>(g.lo[i])] += weight[i];
      dy[static_cast<std::size_t>(g.hi[i]) + 1] -= weight[i];
    }
    if (event[i] && weight[i] > 0) {
      g.d[static_cast<std::size_t>(g.hi[i])] += weight[i];
      g.event_weight += weight[i];
    }
  }
  g.y.resize(G);
  double run = 0.0;
  for (std::size_t j = 0; j < G; ++j) g.y[j] = run += dy[j];
  return g;
}

double log_rank_from(const NodeGrid& g, std::span<const double> yl_diff, std::span<const double> dl) {
  double num = 0.0, var = 0.0, yl = 0.0;
  for (std::size_t j = 0; j < g.times.size(); ++j) {
    yl += yl_diff[j];
    const double y = g.y[j];
    const double d = g.d[j];
    if (!(y > 0.0)) continue;
    const double frac = yl / y;
    num += dl[j] - frac * d;
    if (y > 1.0) var += frac * (1.0 - frac) * (y - d) / (y - 1.0) * d;
  }
  return var > 1e-12 ? num * num / var : 0.0;
}

std::vector<double> candidate_thresholds(std::vector<double> values, std::size_t max_candidates) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> out;
  const std::size_t u = values.size();
  if (u < 2) return out;
  if (u - 1 <= max_candidates) {
    for (std::size_t k = 0; k + 1 < u; ++k) out.push_back(0.5 * (values[k] + values[k + 1]));
    return out;
  }
  std::size_t last = u;
  for (std::size_t q = 0; q < max_candidates; ++q) {
    const std::size_t k = (q + 1) * (u - 1) / (max_candidates + 1);
    if (k == last) continue;
    last = k;
    out.push_back(0.5 * (values[k] + values[k + 1]));
  }
  return out;
}

struct TreeBuilder {
  const EpisodeTable& ep;
  const ForestSpec& spec;
  const std::vector<double>& forest_grid;
  std::size_t mtry;

  SurvivalTree::Leaf make_leaf(std::span<const std::size_t> rows, std::span<const double> w) const {
    std::vector<double> entry(rows.size()), exit(rows.size());
    std::vector<std::uint8_t> event(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      entry[k] = ep.start[rows[k]];
      exit[k] = ep.stop[rows[k]];
      event[k] = ep.event[rows[k]];
    }
    const HazardCurve h = fit_nelson_aalen_weighted(entry, exit, event, w);
    SurvivalTree::Leaf leaf;
    for (std::size_t j = 0; j < h.times.size(); ++j) {
      const auto it = std::lower_bound(forest_grid.begin(), forest_grid.end(), h.times[j]);
      leaf.grid_index.push_back(static_cast<std::uint32_t>(it - forest_grid.begin()));
      leaf.increments.push_back(h.increments[j]);
    }
    return leaf;
  }

  SurvivalTree grow(std::uint64_t seed, std::vector<std::uint32_t> in_bag) const {
    Rng rng(seed);
    SurvivalTree tree;
    std::vector<std::size_t> rows;
    std::vector<double> weights;
    for (std::size_t p = 0; p < ep.patients(); ++p) {
      if (in_bag[p] == 0) continue;
      for (std::size_t i = ep.patient_offsets[p]; i < ep.patient_offsets[p + 1]; ++i) {
        rows.push_back(i);
        weights.push_back(static_cast<double>(in_bag[p]));
      }
    }
    tree.in_bag = std::move(in_bag);

    struct Pending {
      std::size_t node;
      std::vector<std::size_t> rows;
      std::vector<double> weights;
      std::size_t depth;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, std::move(rows), std::move(weights), 0});
    std::vector<std::size_t> all_features(ep.features());
    std::iota(all_features.begin(), all_features.end(), 0);

    while (!stack.empty()) {
      Pending cur = std::move(stack.back());
      stack.pop_back();
      SplitChoice choice;
      if (cur.depth < spec.max_depth) {
        // Partial Fisher-Yates draws mtry distinct features.
        std::vector<std::size_t> feats = all_features;
        for (std::size_t k = 0; k < mtry; ++k) {
          const std::size_t r = k + static_cast<std::size_t>(rng.below(feats.size() - k));
          std::swap(feats[k], feats[r]);
        }
        feats.resize(mtry);
        std::sort(feats.begin(), feats.end());
        choice = best_split(ep, cur.rows, cur.weights, feats, static_cast<double>(spec.min_leaf_events),
                            spec.max_candidates);
      }
      if (choice.feature < 0 || !(choice.statistic > 0.0)) {
        tree.nodes[cur.node].leaf = static_cast<std::int32_t>(tree.leaves.size());
        tree.leaves.push_back(make_leaf(cur.rows, cur.weights));
        continue;
      }
      Pending left{tree.nodes.size(), {}, {}, cur.depth + 1};
      Pending right{tree.nodes.size() + 1, {}, {}, cur.depth + 1};
      for (std::size_t k = 0; k < cur.rows.size(); ++k) {
        const double v = ep.x(static_cast<Eigen::Index>(cur.rows[k]), choice.feature);
        Pending& side = v <= choice.threshold ? left : right;
        side.rows.push_back(cur.rows[k]);
        side.weights.push_back(cur.weights[k]);
      }
      auto& node = tree.nodes[cur.node];
      node.feature = choice.feature;
      node.threshold = choice.threshold;
      node.left = static_cast<std::int32_t>(left.node);
      node.right = static_cast<std::int32_t>(right.node);
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stack.push_back(std::move(right));
      stack.push_back(std::move(left));
    }
    return tree;
  }
};

void accumulate_path(const Forest& forest, const SurvivalTree& tree, const CovariatePath& path,
                     std::vector<double>& acc) {
  const std::size_t segments = path.values.size();
  for (std::size_t s = 0; s < segments; ++s) {
    // Segment s governs grid times in (change_times[s], change_times[s+1]].
    const double lo = s == 0 ? -std::numeric_limits<double>::infinity() : path.change_times[s];
    const double hi = s + 1 < segments ? path.change_times[s + 1] : std::numeric_limits<double>::infinity();
    const auto& leaf = tree.leaf_for(path.values[s].data());
    const auto first = std::upper_bound(forest.grid.begin(), forest.grid.end(), lo) - forest.grid.begin();
    const auto last = std::upper_bound(forest.grid.begin(), forest.grid.end(), hi) - forest.grid.begin();
    auto it = std::lower_bound(leaf.grid_index.begin(), leaf.grid_index.end(), static_cast<std::uint32_t>(first));
    for (; it != leaf.grid_index.end() && static_cast<std::ptrdiff_t>(*it) < last; ++it) {
      acc[*it] += leaf.increments[static_cast<std::size_t>(it - leaf.grid_index.begin())];
    }
  }
}

HazardCurve finish(const Forest& forest, const std::vector<double>& acc, double trees) {
  HazardCurve h;
  h.times = forest.grid;
  h.increments.resize(acc.size());
  h.cumulative.resize(acc.size());
  double cum = 0.0;
  for (std::size_t j = 0; j < acc.size(); ++j) {
    h.increments[j] = acc[j] / trees;
    cum += h.increments[j];
    h.cumulative[j] = cum;
  }
  return h;
}

void check_path(const Forest& forest, const CovariatePath& path) {
  if (path.values.empty()) throw Error(ErrorCode::InvalidArgument, "empty covariate path");
  for (const auto& v : path.values) {
    if (static_cast<std::size_t>(v.size()) != forest.features()) {
      throw Error(ErrorCode::SchemaMismatch, "covariate vector has " + std::to_string(v.size()) +
                                                 " entries, forest expects " + std::to_string(forest.features()));
    }
  }
}

}  // namespace

double log_rank_statistic(std::span<const double> entry, std::span<const double> exit,
                          std::span<const std::uint8_t> event, std::span<const double> weight,
                          std::span<const std::uint8_t> left) {
  const std::size_t n = exit.size();
  if (entry.size() != n || event.size() != n || weight.size() != n || left.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "log-rank inputs differ in length");
  }
  const NodeGrid g = node_grid(entry, exit, event, weight);
  const std::size_t G = g.times.size();
  std::vector<double> yl_diff(G + 1, 0.0), dl(G, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!left[i]) continue;
    if (g.lo[i] <= g.hi[i]) {
      yl_diff[static_cast<std::size_t>(g.lo[i])] += weight[i];
      yl_diff[static_cast<std::size_t>(g.hi[i]) + 1] -= weight[i];
    }
    if (event[i] && weight[i] > 0) dl[static_cast<std::size_t>(g.hi[i])] += weight[i];
  }
  return log_rank_from(g, yl_diff, dl);
}

SplitChoice best_split(const EpisodeTable& episodes, std::span<const std::size_t> rows,
                       std::span<const double> weight, std::span<const std::size_t> features,
                       double min_leaf_events, std::size_t max_candidates) {
  const std::size_t n = rows.size();
  std::vector<double> entry(n), exit(n);
  std::vector<std::uint8_t> event(n);
  for (std::size_t k = 0; k < n; ++k) {
    entry[k] = episodes.start[rows[k]];
    exit[k] = episodes.stop[rows[k]];
    event[k] = episodes.event[rows[k]];
  }
  const NodeGrid g = node_grid(entry, exit, event, weight);
  const double min_events = std::max(min_leaf_events, 1.0);
  SplitChoice best;
  if (g.event_weight < 2.0 * min_events) return best;

  const std::size_t G = g.times.size();
  std::vector<std::size_t> order(n);
  std::vector<double> values(n);
  std::vector<double> yl_diff(G + 1), dl(G);
  for (auto f : features) {
    const auto col = static_cast<Eigen::Index>(f);
    for (std::size_t k = 0; k < n; ++k) values[k] = episodes.x(static_cast<Eigen::Index>(rows[k]), col);
    const std::vector<double> thresholds = candidate_thresholds(values, max_candidates);
    if (thresholds.empty()) continue;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::fill(yl_diff.begin(), yl_diff.end(), 0.0);
    std::fill(dl.begin(), dl.end(), 0.0);
    double left_events = 0.0;
    std::size_t next = 0;
    for (double thr : thresholds) {
      while (next < n && values[order[next]] <= thr) {
        const std::size_t i = order[next++];
        if (g.lo[i] <= g.hi[i]) {
          yl_diff[static_cast<std::size_t>(g.lo[i])] += weight[i];
          yl_diff[static_cast<std::size_t>(g.hi[i]) + 1] -= weight[i];
        }
        if (event[i] && weight[i] > 0) {
          dl[static_cast<std::size_t>(g.hi[i])] += weight[i];
          left_events += weight[i];
        }
      }
      if (left_events < min_events || g.event_weight - left_events < min_events) continue;
      const double stat = log_rank_from(g, yl_diff, dl);
      if (stat > best.statistic) {
        best.feature = static_cast<int>(f);
        best.threshold = thr;
        best.statistic = stat;
      }
    }
  }
  return best;
}

Forest fit_rsf(const EpisodeTable& episodes, const ForestSpec& spec) {
  const std::size_t p = episodes.features();
  spec.validate(p);
  if (episodes.event_count() == 0) throw Error(ErrorCode::NoEvents, "no event rows to grow a forest");

  Forest forest;
  forest.spec = spec;
  forest.feature_names = episodes.feature_names;
  forest.patient_ids = episodes.patient_ids;
  for (std::size_t i = 0; i < episodes.rows(); ++i) {
    if (episodes.event[i]) forest.grid.push_back(episodes.stop[i]);
  }
  std::sort(forest.grid.begin(), forest.grid.end());
  forest.grid.erase(std::unique(forest.grid.begin(), forest.grid.end()), forest.grid.end());

  const TreeBuilder builder{episodes, spec, forest.grid, spec.resolved_mtry(p)};
  const std::size_t n_patients = episodes.patients();
  forest.trees.resize(spec.n_trees);
  auto grow_one = [&](std::size_t t) {
    const std::uint64_t seed = sub_seed(spec.seed, t);
    std::vector<std::uint32_t> bag(n_patients, 1);
    if (spec.bootstrap) {
      Rng rng(sub_seed(seed, 0xB007));
      std::fill(bag.begin(), bag.end(), 0);
      for (std::size_t k = 0; k < n_patients; ++k) ++bag[rng.below(n_patients)];
    }
    forest.trees[t] = builder.grow(seed, std::move(bag));
  };

  const std::size_t threads = std::clamp<std::size_t>(spec.threads, 1, spec.n_trees);
  if (threads == 1) {
    for (std::size_t t = 0; t < spec.n_trees; ++t) grow_one(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < spec.n_trees; t += threads) grow_one(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  return forest;
}

HazardCurve predict_chf(const Forest& forest, const CovariatePath& path, std::span<const std::size_t> trees) {
  check_path(forest, path);
  std::vector<double> acc(forest.grid.size(), 0.0);
  for (auto t : trees) accumulate_path(forest, forest.trees[t], path, acc);
  return finish(forest, acc, static_cast<double>(std::max<std::size_t>(trees.size(), 1)));
}

HazardCurve predict_chf(const Forest& forest, const CovariatePath& path) {
  std::vector<std::size_t> all(forest.trees.size());
  std::iota(all.begin(), all.end(), 0);
  return predict_chf(forest, path, all);
}

HazardCurve predict_chf(const Forest& forest, const Eigen::VectorXd& x) {
  return predict_chf(forest, CovariatePath::constant(x));
}

SurvivalCurve predict_survival(const Forest& forest, const Eigen::VectorXd& x) {
  return predict_chf(forest, x).to_survival();
}

SurvivalCurve predict_survival(const Forest& forest, const CovariatePath& path) {
  return predict_chf(forest, path).to_survival();
}

double ensemble_mortality(const HazardCurve& chf) {
  double m = 0.0;
  for (double c : chf.cumulative) m += c;
  return m;
}

OobConcordance oob_concordance(const Forest& forest, const EpisodeTable& episodes) {
  std::unordered_map<std::string, std::size_t> bag_index;
  for (std::size_t p = 0; p < forest.patient_ids.size(); ++p) bag_index.emplace(forest.patient_ids[p], p);

  OobConcordance out;
  std::vector<double> risk, time;
  std::vector<std::uint8_t> event;
  std::vector<std::size_t> trees;
  for (std::size_t p = 0; p < episodes.patients(); ++p) {
    trees.clear();
    const auto it = bag_index.find(episodes.patient_ids[p]);
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      if (it == bag_index.end() || forest.trees[t].in_bag[it->second] == 0) trees.push_back(t);
    }
    if (trees.empty()) {
      ++out.excluded;
      continue;
    }
    const HazardCurve h = predict_chf(forest, patient_path(episodes, p), trees);
    const PatientOutcome o = patient_outcome(episodes, p);
    risk.push_back(ensemble_mortality(h));
    time.push_back(o.time);
    event.push_back(o.event ? 1 : 0);
  }
  out.concordance = harrell_c(risk, time, event);
  return out;
}

nlohmann::json Forest::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["grid"] = grid;
  j["feature_names"] = feature_names;
  j["patient_ids"] = patient_ids;
  j["spec"] = {{"n_trees", spec.n_trees},
               {"mtry", spec.mtry},
               {"min_leaf_events", spec.min_leaf_events},
               {"max_depth", spec.max_depth},
               {"max_candidates", spec.max_candidates},
               {"bootstrap", spec.bootstrap},
               {"seed", spec.seed}};
  auto& jt = j["trees"] = nlohmann::json::array();
  for (const auto& t : trees) {
    nlohmann::json tj;
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<std::int32_t> left, right, leaf;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      leaf.push_back(n.leaf);
    }
    tj["feature"] = feature;
    tj["threshold"] = threshold;
    tj["left"] = left;
    tj["right"] = right;
    tj["leaf"] = leaf;
    auto& leaves = tj["leaves"] = nlohmann::json::array();
    for (const auto& l : t.leaves) leaves.push_back({{"grid_index", l.grid_index}, {"increments", l.increments}});
    tj["in_bag"] = t.in_bag;
    jt.push_back(std::move(tj));
  }
  return j;
}

Forest Forest::from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw Error(ErrorCode::Parse, "unsupported forest version");
  Forest f;
  f.grid = j.at("grid").get<std::vector<double>>();
  f.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  f.patient_ids = j.at("patient_ids").get<std::vector<std::string>>();
  const auto& s = j.at("spec");
  f.spec.n_trees = s.at("n_trees").get<std::size_t>();
  f.spec.mtry = s.at("mtry").get<std::size_t>();
  f.spec.min_leaf_events = s.at("min_leaf_events").get<std::size_t>();
  f.spec.max_depth = s.at("max_depth").get<std::size_t>();
  f.spec.max_candidates = s.at("max_candidates").get<std::size_t>();
  f.spec.bootstrap = s.at("bootstrap").get<bool>();
  f.spec.seed = s.at("seed").get<std::uint64_t>();
  for (const auto& tj : j.at("trees")) {
    SurvivalTree t;
    const auto feature = tj.at("feature").get<std::vector<int>>();
    const auto threshold = tj.at("threshold").get<std::vector<double>>();
    const auto left = tj.at("left").get<std::vector<std::int32_t>>();
    const auto right = tj.at("right").get<std::vector<std::int32_t>>();
    const auto leaf = tj.at("leaf").get<std::vector<std::int32_t>>();
    t.nodes.resize(feature.size());
    for (std::size_t k = 0; k < feature.size(); ++k) {
      t.nodes[k] = {feature[k], threshold[k], left[k], right[k], leaf[k]};
    }
    for (const auto& lj : tj.at("leaves")) {
      t.leaves.push_back({lj.at("grid_index").get<std::vector<std::uint32_t>>(),
                          lj.at("increments").get<std::vector<double>>()});
    }
    t.in_bag = tj.at("in_bag").get<std::vector<std::uint32_t>>();
    f.trees.push_back(std::move(t));
  }
  return f;
}

}  // namespace tvsurv
