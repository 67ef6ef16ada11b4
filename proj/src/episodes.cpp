#include "tvsurv/episodes.hpp"

#include <algorithm>
#include <unordered_map>

#include "tvsurv/error.hpp"

namespace tvsurv {

std::size_t EpisodeTable::event_count() const {
  std::size_t n = 0;
  for (auto e : event) n += e ? 1 : 0;
  return n;
}

EpisodeTable EpisodeTable::from_rows(std::span<const CountingProcessRow> rows,
                                     std::vector<std::string> feature_names) {
  EpisodeTable t;
  t.feature_names = std::move(feature_names);
  const std::size_t p = t.feature_names.size();
  const std::size_t n = rows.size();

  // Group rows by patient (first-appearance order), then by start time.
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = index.try_emplace(rows[i].patient_id, t.patient_ids.size());
    if (inserted) {
      t.patient_ids.push_back(rows[i].patient_id);
      members.emplace_back();
    }
    members[it->second].push_back(i);
  }

  t.start.reserve(n);
  t.stop.reserve(n);
  t.event.reserve(n);
  t.patient.reserve(n);
  t.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  t.patient_offsets.push_back(0);
  Eigen::Index r = 0;
  for (std::size_t pi = 0; pi < members.size(); ++pi) {
    auto& m = members[pi];
    std::stable_sort(m.begin(), m.end(),
                     [&](auto a, auto b) { return rows[a].start_days < rows[b].start_days; });
    for (auto i : m) {
      const auto& row = rows[i];
      if (row.covariates.size() != p) {
        throw Error(ErrorCode::SchemaMismatch, "episode width " + std::to_string(row.covariates.size()) +
                                                   " != feature count " + std::to_string(p));
      }
      if (!(row.start_days < row.stop_days)) {
        throw Error(ErrorCode::InvalidArgument, "episode with start >= stop for '" + row.patient_id + "'");
      }
      t.start.push_back(static_cast<double>(row.start_days));
      t.stop.push_back(static_cast<double>(row.stop_days));
      t.event.push_back(row.event ? 1 : 0);
      t.patient.push_back(pi);
      for (std::size_t j = 0; j < p; ++j) t.x(r, static_cast<Eigen::Index>(j)) = row.covariates[j];
      ++r;
    }
    t.patient_offsets.push_back(static_cast<std::size_t>(r));
  }
  return t;
}

EpisodeTable EpisodeTable::subset_patients(std::span<const std::size_t> patient_indices) const {
  EpisodeTable t;
  t.feature_names = feature_names;
  std::size_t n = 0;
  for (auto pi : patient_indices) n += patient_offsets[pi + 1] - patient_offsets[pi];
  t.x.resize(static_cast<Eigen::Index>(n), x.cols());
  t.patient_offsets.push_back(0);
  Eigen::Index r = 0;
  for (auto pi : patient_indices) {
    const std::size_t np = t.patient_ids.size();
    t.patient_ids.push_back(patient_ids[pi]);
    for (std::size_t i = patient_offsets[pi]; i < patient_offsets[pi + 1]; ++i) {
      t.start.push_back(start[i]);
      t.stop.push_back(stop[i]);
      t.event.push_back(event[i]);
      t.patient.push_back(np);
      t.x.row(r++) = x.row(static_cast<Eigen::Index>(i));
    }
    t.patient_offsets.push_back(static_cast<std::size_t>(r));
  }
  return t;
}

EpisodeTable EpisodeTable::select_features(std::span<const std::size_t> columns) const {
  EpisodeTable t = *this;
  t.feature_names.clear();
  t.x.resize(x.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] >= features()) throw Error(ErrorCode::SchemaMismatch, "feature index out of range");
    t.x.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(columns[j]));
    t.feature_names.push_back(feature_names[columns[j]]);
  }
  return t;
}

CovariatePath CovariatePath::constant(Eigen::VectorXd x) {
  CovariatePath p;
  p.change_times.push_back(0.0);
  p.values.push_back(std::move(x));
  return p;
}

std::size_t CovariatePath::segment_at(double t) const {
  // Last change strictly before t.
  const auto it = std::lower_bound(change_times.begin(), change_times.end(), t);
  const auto k = static_cast<std::size_t>(it - change_times.begin());
  return k == 0 ? 0 : k - 1;
}

CovariatePath CovariatePath::truncated_at(double anchor) const {
  CovariatePath p;
  for (std::size_t k = 0; k < change_times.size() && change_times[k] <= anchor; ++k) {
    p.change_times.push_back(change_times[k]);
    p.values.push_back(values[k]);
  }
  if (p.change_times.empty()) {
    p.change_times.push_back(0.0);
    p.values.push_back(values.front());
  }
  return p;
}

CovariatePath patient_path(const EpisodeTable& table, std::size_t patient) {
  CovariatePath p;
  for (std::size_t i = table.patient_offsets[patient]; i < table.patient_offsets[patient + 1]; ++i) {
    p.change_times.push_back(table.start[i]);
    p.values.emplace_back(table.x.row(static_cast<Eigen::Index>(i)).transpose());
  }
  return p;
}

PatientOutcome patient_outcome(const EpisodeTable& table, std::size_t patient) {
  const std::size_t last = table.patient_offsets[patient + 1] - 1;
  return {table.stop[last], table.event[last] != 0};
}

}  // namespace tvsurv
