#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "orpit/errors.hpp"
#include "orpit/separator.hpp"
#include "orpit/signal.hpp"
#include "orpit/stop_classifier.hpp"

namespace orpit {

// Stopping rules for the peel-one-source recursion.
struct FixedIterations {
  int j = 1;
};
struct OracleCount {
  int n = 1;  // true source count; n-1 peels leave the last source as residual
};
struct ClassifierStop {
  StopClassifierParams params;  // stop head (classes == 1)
  double threshold = 0.5;       // continue while predicted probability >= threshold
};
struct MaxCap {
  int limit = 8;  // always runs to the limit and reports the run as truncated
};

struct Stopper {
  std::variant<FixedIterations, OracleCount, ClassifierStop, MaxCap> rule;
  int safety_cap = 8;  // absolute step bound, applied on top of every rule
};

// Throws InvalidArgument unless counts and the cap are >= 1, the threshold is
// strictly inside (0,1), and classifier params carry a stop head.
void validate_stopper(const Stopper& stopper);

enum class StopDecision { Continue, Stop };

struct RecursionStep {
  Waveform one;   // source peeled at this step
  Waveform rest;  // residual fed to the next step
  StopDecision decision = StopDecision::Continue;  // the engine's move after this step
  std::optional<double> classifier_prob;           // set by the classifier rule only
};

struct RecursionTrace {
  Waveform input;
  std::vector<RecursionStep> steps;
  std::optional<int> estimated_count;  // set by the classifier rule
  bool residual_is_stem = false;  // oracle rule: the final residual is the last source
  bool terminal = false;          // false only on hand-built or error-partial traces
  bool truncated = false;         // a cap or limit ended the run early
  bool low_confidence = false;    // silent-input short-circuit
};

// Thrown when a recursion step produces non-finite samples; carries the steps
// that completed before the failure.
struct RecursionNumericError : NumericError {
  RecursionNumericError(const std::string& msg, RecursionTrace partial)
      : NumericError(msg), trace(std::move(partial)) {}
  RecursionTrace trace;
};

// Peels one source per step with separate_long until the rule says stop:
// FixedIterations runs exactly j steps; OracleCount(n) runs n-1 and marks the
// residual as the final source; ClassifierStop continues while the residual
// is predicted source-bearing and records the count where it stops; MaxCap
// runs to its limit. The classifier rule short-circuits near-silent input
// (RMS < 1e-5) to a zero-step count-1 trace flagged low_confidence.
RecursionTrace separate_recursive(const SeparatorParams& params, const Waveform& x,
                                  const Stopper& stopper);

// The peeled sources in order, plus the final residual when the rule marked
// it as the last source. Non-terminal traces are InvalidArgument.
std::vector<Waveform> stems_from_trace(const RecursionTrace& trace);

struct CountEstimate {
  int count = 0;
  bool truncated = false;       // safety cap reached before the classifier said stop
  bool low_confidence = false;  // silent-input short-circuit
};

// Source counting by recursion: separate until the classifier rejects the
// residual. A truncated run reports the cap as its count.
CountEstimate estimate_count(const SeparatorParams& params, const Waveform& x,
                             const StopClassifierParams& classifier, double threshold = 0.5,
                             int safety_cap = 8);

// JSON summary of a trace: per-step decision and probability, the flags, and
// the stem paths supplied by the caller (must match stems_from_trace's count
// for terminal traces; pass {} to omit).
std::string trace_to_json(const RecursionTrace& trace, const std::vector<std::string>& stem_paths);

}  // namespace orpit
