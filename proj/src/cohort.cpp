#include "tvsurv/cohort.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "tvsurv/csv.hpp"
#include "tvsurv/error.hpp"

namespace tvsurv {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MergeConflict: return "MergeConflict";
    case ErrorCode::DuplicateObservation: return "DuplicateObservation";
    case ErrorCode::MissingBaseline: return "MissingBaseline";
    case ErrorCode::BadOutcome: return "BadOutcome";
    case ErrorCode::DegenerateInterval: return "DegenerateInterval";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::CannotImpute: return "CannotImpute";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::TooFewPatients: return "TooFewPatients";
    case ErrorCode::EmptyCohort: return "EmptyCohort";
    case ErrorCode::NoEvents: return "NoEvents";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::BadTime: return "BadTime";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

std::string_view to_string(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::DeathOnWaitlist: return "DeathOnWaitlist";
    case OutcomeKind::TransplantCensor: return "TransplantCensor";
    case OutcomeKind::LostToFollowUpCensor: return "LostToFollowUpCensor";
    case OutcomeKind::AdministrativeCensor: return "AdministrativeCensor";
  }
  return "Unknown";
}

OutcomeKind parse_outcome_kind(std::string_view code) {
  for (auto kind : {OutcomeKind::DeathOnWaitlist, OutcomeKind::TransplantCensor,
                    OutcomeKind::LostToFollowUpCensor, OutcomeKind::AdministrativeCensor}) {
    if (code == to_string(kind)) return kind;
  }
  throw Error(ErrorCode::BadOutcome, "unknown outcome code '" + std::string(code) + "'");
}

std::size_t Cohort::observation_count() const {
  std::size_t n = 0;
  for (const auto& p : patients) n += p.observations.size();
  return n;
}

std::size_t Cohort::find(std::string_view patient_id) const {
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (patients[i].patient_id == patient_id) return i;
  }
  return npos;
}

void validate_schema(std::span<const std::string> covariates) {
  std::set<std::string_view> seen;
  for (const auto& name : covariates) {
    if (name.empty()) throw Error(ErrorCode::InvalidArgument, "empty covariate name");
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate covariate name '" + name + "'");
    }
  }
}

void validate_history(const PatientHistory& h, std::size_t n_covariates) {
  const std::string who = "patient '" + h.patient_id + "'";
  if (h.observations.empty()) throw Error(ErrorCode::MissingBaseline, who + " has no observations");
  if (h.observations.front().time_days != 0) {
    throw Error(ErrorCode::MissingBaseline, who + " has no time-zero observation");
  }
  for (std::size_t i = 0; i < h.observations.size(); ++i) {
    const auto& obs = h.observations[i];
    if (obs.values.size() != n_covariates) {
      throw Error(ErrorCode::SchemaMismatch, who + " observation width differs from schema");
    }
    if (i > 0 && obs.time_days <= h.observations[i - 1].time_days) {
      throw Error(ErrorCode::DuplicateObservation,
                  who + " observation times not strictly increasing at day " +
                      std::to_string(obs.time_days));
    }
  }
  if (h.outcome.time_days < h.observations.back().time_days) {
    throw Error(ErrorCode::BadOutcome, who + " outcome precedes last observation");
  }
}

void validate(const Cohort& cohort) {
  validate_schema(cohort.covariates);
  std::set<std::string_view> ids;
  for (const auto& p : cohort.patients) {
    if (!ids.insert(p.patient_id).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate patient id '" + p.patient_id + "'");
    }
    validate_history(p, cohort.covariates.size());
  }
}

std::vector<CountingProcessRow> to_counting_process(const PatientHistory& history,
                                                    const RowEncoder& encoder) {
  const auto& obs = history.observations;
  if (obs.empty()) throw Error(ErrorCode::MissingBaseline, "empty history");
  const std::int64_t end = history.outcome.time_days;
  if (end < obs.back().time_days) {
    throw Error(ErrorCode::BadOutcome, "outcome precedes last observation for '" +
                                           history.patient_id + "'");
  }
  // Observations on the outcome day open no interval.
  std::size_t n_open = obs.size();
  while (n_open > 0 && obs[n_open - 1].time_days >= end) --n_open;
  if (n_open == 0) {
    throw Error(ErrorCode::DegenerateInterval,
                "outcome at time zero for '" + history.patient_id + "'");
  }

  std::vector<CountingProcessRow> rows;
  rows.reserve(n_open);
  for (std::size_t i = 0; i < n_open; ++i) {
    CountingProcessRow row;
    row.patient_id = history.patient_id;
    row.start_days = obs[i].time_days;
    row.stop_days = (i + 1 < n_open) ? obs[i + 1].time_days : end;
    row.event = (i + 1 == n_open) && history.outcome.is_event();
    row.covariates = encoder(obs[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

PatientHistory baseline_snapshot(const PatientHistory& history) {
  PatientHistory out;
  out.patient_id = history.patient_id;
  out.outcome = history.outcome;
  if (!history.observations.empty()) out.observations.push_back(history.observations.front());
  return out;
}

Cohort baseline_snapshot(const Cohort& cohort) {
  Cohort out;
  out.covariates = cohort.covariates;
  out.patients.reserve(cohort.patients.size());
  for (const auto& p : cohort.patients) out.patients.push_back(baseline_snapshot(p));
  return out;
}

namespace {

bool cells_equal(const Cell& a, const Cell& b) { return a == b; }

std::string cell_text(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return csv::format_double(*d);
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  return "";
}

}  // namespace

PatientHistory consolidate(std::span<const WaitlistRecord> records, ListingReason reason,
                           std::span<const std::string> covariates) {
  if (records.empty()) throw Error(ErrorCode::InvalidArgument, "no waitlist records");

  if (reason == ListingReason::Other) {
    const auto latest = std::max_element(
        records.begin(), records.end(),
        [](const auto& a, const auto& b) { return a.listing_date < b.listing_date; });
    return latest->history;
  }

  PatientHistory merged;
  merged.patient_id = records.front().history.patient_id;
  std::map<std::int64_t, Observation> by_time;
  const WaitlistRecord* latest_outcome = nullptr;
  for (const auto& rec : records) {
    const auto& h = rec.history;
    if (h.observations.empty()) throw Error(ErrorCode::InvalidArgument, "record without observations");
    if (!latest_outcome || h.outcome.time_days > latest_outcome->history.outcome.time_days ||
        (h.outcome.time_days == latest_outcome->history.outcome.time_days &&
         rec.listing_date > latest_outcome->listing_date)) {
      latest_outcome = &rec;
    }
    for (const auto& obs : h.observations) {
      auto [it, inserted] = by_time.try_emplace(obs.time_days, obs);
      if (inserted) continue;
      auto& existing = it->second.values;
      for (std::size_t j = 0; j < existing.size() && j < obs.values.size(); ++j) {
        if (is_missing(obs.values[j])) continue;
        if (is_missing(existing[j])) {
          existing[j] = obs.values[j];
        } else if (!cells_equal(existing[j], obs.values[j])) {
          const std::string name = j < covariates.size() ? covariates[j] : std::to_string(j);
          throw Error(ErrorCode::MergeConflict,
                      "patient '" + merged.patient_id + "' day " + std::to_string(obs.time_days) +
                          " covariate '" + name + "': " + cell_text(existing[j]) + " vs " +
                          cell_text(obs.values[j]));
        }
      }
    }
  }
  for (auto& [t, obs] : by_time) merged.observations.push_back(std::move(obs));
  merged.outcome = latest_outcome->history.outcome;
  return merged;
}

namespace {

struct RawRow {
  std::size_t line = 0;
  std::string patient_id;
  std::int64_t time_days = 0;
  OutcomeKind kind{};
  std::int64_t outcome_time = 0;
  std::vector<std::string> cells;
};

std::int64_t parse_day(const std::string& text, std::size_t line, std::string_view what) {
  double v = 0;
  if (!csv::parse_double(text, v) || v < 0 || v != static_cast<double>(static_cast<std::int64_t>(v))) {
    throw Error(ErrorCode::Parse, "line " + std::to_string(line) + ": bad " + std::string(what) +
                                      " '" + text + "'");
  }
  return static_cast<std::int64_t>(v);
}

}  // namespace

Cohort ingest_long_csv(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw Error(ErrorCode::Parse, "empty input");
  const auto header = csv::split_record(line);
  static const char* kFixed[] = {"patient_id", "time_days", "outcome_kind", "outcome_time"};
  if (header.size() < 4) throw Error(ErrorCode::Parse, "header needs at least 4 columns");
  for (int i = 0; i < 4; ++i) {
    if (header[i] != kFixed[i]) {
      throw Error(ErrorCode::Parse, std::string("header column ") + std::to_string(i + 1) +
                                        " must be '" + kFixed[i] + "'");
    }
  }

  Cohort cohort;
  cohort.covariates.assign(header.begin() + 4, header.end());
  validate_schema(cohort.covariates);
  const std::size_t p = cohort.covariates.size();

  std::vector<RawRow> rows;
  std::size_t line_no = 1;
  while (csv::read_line(in, line)) {
    ++line_no;
    auto fields = csv::split_record(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(header.size()) + " fields, got " +
                                        std::to_string(fields.size()));
    }
    RawRow row;
    row.line = line_no;
    row.patient_id = fields[0];
    if (row.patient_id.empty()) throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": empty patient_id");
    row.time_days = parse_day(fields[1], line_no, "time_days");
    try {
      row.kind = parse_outcome_kind(fields[2]);
    } catch (const Error&) {
      throw Error(ErrorCode::BadOutcome,
                  "line " + std::to_string(line_no) + ": unknown outcome code '" + fields[2] + "'");
    }
    row.outcome_time = parse_day(fields[3], line_no, "outcome_time");
    row.cells.assign(std::make_move_iterator(fields.begin() + 4), std::make_move_iterator(fields.end()));
    rows.push_back(std::move(row));
  }

  // Column kinds are decided over the whole file so the result cannot
  // depend on row order.
  std::vector<bool> numeric(p, true);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < p; ++j) {
      double v;
      if (numeric[j] && !r.cells[j].empty() && !csv::parse_double(r.cells[j], v)) numeric[j] = false;
    }
  }

  std::sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) {
    if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
    return a.time_days < b.time_days;
  });

  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].patient_id == rows[i].patient_id) ++j;
    PatientHistory h;
    h.patient_id = rows[i].patient_id;
    h.outcome = {rows[i].kind, rows[i].outcome_time};
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = rows[k];
      if (r.kind != h.outcome.kind || r.outcome_time != h.outcome.time_days) {
        throw Error(ErrorCode::BadOutcome, "line " + std::to_string(r.line) +
                                               ": outcome differs from other rows of patient '" +
                                               h.patient_id + "'");
      }
      if (k > i && r.time_days == rows[k - 1].time_days) {
        throw Error(ErrorCode::DuplicateObservation, "patient '" + h.patient_id + "' day " +
                                                         std::to_string(r.time_days) +
                                                         " appears twice");
      }
      Observation obs;
      obs.time_days = r.time_days;
      obs.values.reserve(p);
      for (std::size_t c = 0; c < p; ++c) {
        const auto& text = r.cells[c];
        if (text.empty()) {
          obs.values.emplace_back(std::monostate{});
        } else if (numeric[c]) {
          double v = 0;
          csv::parse_double(text, v);
          obs.values.emplace_back(v);
        } else {
          obs.values.emplace_back(text);
        }
      }
      h.observations.push_back(std::move(obs));
    }
    if (h.observations.front().time_days != 0) {
      throw Error(ErrorCode::MissingBaseline, "patient '" + h.patient_id + "' has no day-0 row");
    }
    if (h.outcome.time_days < h.observations.back().time_days) {
      throw Error(ErrorCode::BadOutcome,
                  "patient '" + h.patient_id + "' outcome precedes last observation");
    }
    cohort.patients.push_back(std::move(h));
    i = j;
  }
  return cohort;
}

Cohort ingest_long_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open '" + path + "'");
  return ingest_long_csv(in);
}

void write_long_csv(std::ostream& out, const Cohort& cohort) {
  out << "patient_id,time_days,outcome_kind,outcome_time";
  for (const auto& name : cohort.covariates) out << ',' << csv::escape(name);
  out << '\n';
  for (const auto& p : cohort.patients) {
    for (const auto& obs : p.observations) {
      out << csv::escape(p.patient_id) << ',' << obs.time_days << ',' << to_string(p.outcome.kind)
          << ',' << p.outcome.time_days;
      for (const auto& cell : obs.values) out << ',' << csv::escape(cell_text(cell));
      out << '\n';
    }
  }
}

GapSummary update_gap_summary(const Cohort& cohort) {
  std::vector<double> gaps;
  for (const auto& p : cohort.patients) {
    for (std::size_t i = 1; i < p.observations.size(); ++i) {
      gaps.push_back(static_cast<double>(p.observations[i].time_days - p.observations[i - 1].time_days));
    }
  }
  GapSummary s;
  s.count = gaps.size();
  if (gaps.empty()) return s;
  double sum = 0;
  for (double g : gaps) sum += g;
  s.mean_days = sum / static_cast<double>(gaps.size());
  std::sort(gaps.begin(), gaps.end());
  const std::size_t n = gaps.size();
  s.median_days = (n % 2 == 1) ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
  return s;
}

}  // namespace tvsurv
