#pragma once

// Longitudinal waitlist data model and its counting-process representation.
//
// A cohort holds a covariate schema plus one PatientHistory per patient.
// Observation values are stored positionally against the schema, so every
// observation of every patient carries the same covariate name set.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tvsurv {

/// A covariate cell: missing, numeric, or a category label.
using Cell = std::variant<std::monostate, double, std::string>;

inline bool is_missing(const Cell& c) { return std::holds_alternative<std::monostate>(c); }

struct Observation {
  std::int64_t time_days = 0;
  std::vector<Cell> values;
};

enum class OutcomeKind {
  DeathOnWaitlist,
  TransplantCensor,
  LostToFollowUpCensor,
  AdministrativeCensor,
};

std::string_view to_string(OutcomeKind kind);
OutcomeKind parse_outcome_kind(std::string_view code);

struct Outcome {
  OutcomeKind kind = OutcomeKind::AdministrativeCensor;
  std::int64_t time_days = 0;

  bool is_event() const { return kind == OutcomeKind::DeathOnWaitlist; }
};

struct PatientHistory {
  std::string patient_id;
  std::vector<Observation> observations;
  Outcome outcome;
};

struct Cohort {
  std::vector<std::string> covariates;
  std::vector<PatientHistory> patients;

  std::size_t observation_count() const;
  /// Index of the patient with this id, or npos.
  std::size_t find(std::string_view patient_id) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// Throws InvalidArgument when the schema has empty or duplicate names.
void validate_schema(std::span<const std::string> covariates);
/// Checks every PatientHistory invariant against a schema width.
void validate_history(const PatientHistory& history, std::size_t n_covariates);
void validate(const Cohort& cohort);

/// One (start, stop] episode with frozen, encoded covariates.
struct CountingProcessRow {
  std::string patient_id;
  std::int64_t start_days = 0;
  std::int64_t stop_days = 0;
  bool event = false;
  std::vector<double> covariates;
};

/// Maps a raw observation to its fixed-order numeric encoding.
using RowEncoder = std::function<std::vector<double>(const Observation&)>;

/// Splits a history into episodes. Covariates are carried forward from the
/// observation opening each interval. An observation recorded on the
/// outcome day would open a zero-length interval; it is folded into the
/// preceding row instead.
std::vector<CountingProcessRow> to_counting_process(const PatientHistory& history,
                                                    const RowEncoder& encoder);

/// Keeps only the listing-time observation.
PatientHistory baseline_snapshot(const PatientHistory& history);
Cohort baseline_snapshot(const Cohort& cohort);

enum class ListingReason { Transfer, Other };

struct WaitlistRecord {
  /// Listing date as an ordinal (e.g. days since an epoch); only its order matters.
  std::int64_t listing_date = 0;
  PatientHistory history;
};

/// Collapses one patient's waitlist records into a single history.
///
/// Transfers merge all observations on their time axis and keep the latest
/// outcome; a missing cell never conflicts with an observed one. Any other
/// reason keeps the most recently listed record untouched.
PatientHistory consolidate(std::span<const WaitlistRecord> records, ListingReason reason,
                           std::span<const std::string> covariates);

/// Reads the long CSV format:
///   patient_id,time_days,outcome_kind,outcome_time,<covariates...>
/// A column whose non-empty cells all parse as numbers is numeric; every
/// other column is categorical. Patients are returned sorted by id.
Cohort ingest_long_csv(std::istream& in);
Cohort ingest_long_csv_file(const std::string& path);

void write_long_csv(std::ostream& out, const Cohort& cohort);

struct GapSummary {
  std::size_t count = 0;
  double mean_days = 0.0;
  double median_days = 0.0;
};

/// Inter-observation gaps pooled over all patients.
GapSummary update_gap_summary(const Cohort& cohort);

}  // namespace tvsurv
