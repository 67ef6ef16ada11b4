#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tvsurv {

enum class ErrorCode {
  InvalidArgument,
  MergeConflict,
  DuplicateObservation,
  MissingBaseline,
  BadOutcome,
  DegenerateInterval,
  EmptyMatrix,
  CannotImpute,
  SchemaMismatch,
  TooFewPatients,
  EmptyCohort,
  NoEvents,
  Diverged,
  SingularInformation,
  BadSpec,
  BadTime,
  NotFound,
  Parse,
  Config,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map them to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tvsurv
