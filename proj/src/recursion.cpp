#include "orpit/recursion.hpp"

#include <cmath>

#include "json.hpp"

namespace orpit {

namespace {

bool finite_waveform(const Waveform& w) {
  for (float v : w.samples)
    if (!std::isfinite(v)) return false;
  return true;
}

// One peel with the non-finite guard shared by every rule.
void run_step(const SeparatorParams& params, const Waveform& r_prev, RecursionTrace& trace) {
  auto [one, rest] = separate_long(params, r_prev);
  if (!finite_waveform(one) || !finite_waveform(rest))
    throw RecursionNumericError("separate_recursive: non-finite samples at step " +
                                    std::to_string(trace.steps.size() + 1),
                                trace);
  trace.steps.push_back({std::move(one), std::move(rest), StopDecision::Continue, std::nullopt});
}

}  // namespace

void validate_stopper(const Stopper& s) {
  if (s.safety_cap < 1) throw InvalidArgument("stopper: safety cap must be >= 1");
  if (const auto* f = std::get_if<FixedIterations>(&s.rule)) {
    if (f->j < 1) throw InvalidArgument("stopper: fixed iteration count must be >= 1");
  } else if (const auto* o = std::get_if<OracleCount>(&s.rule)) {
    if (o->n < 1) throw InvalidArgument("stopper: oracle count must be >= 1");
  } else if (const auto* c = std::get_if<ClassifierStop>(&s.rule)) {
    if (!(c->threshold > 0.0) || !(c->threshold < 1.0))
      throw InvalidArgument("stopper: classifier threshold must be inside (0,1)");
    if (c->params.config.classes != 1)
      throw InvalidArgument("stopper: classifier params must carry a stop head");
  } else if (const auto* m = std::get_if<MaxCap>(&s.rule)) {
    if (m->limit < 1) throw InvalidArgument("stopper: max-cap limit must be >= 1");
  }
}

RecursionTrace separate_recursive(const SeparatorParams& params, const Waveform& x,
                                  const Stopper& stopper) {
  validate_stopper(stopper);
  validate_waveform(x, "separate_recursive input");

  RecursionTrace trace;
  trace.input = x;
  const int cap = stopper.safety_cap;

  if (const auto* f = std::get_if<FixedIterations>(&stopper.rule)) {
    const int target = std::min(f->j, cap);
    trace.truncated = f->j > cap;
    for (int j = 0; j < target; ++j)
      run_step(params, trace.steps.empty() ? x : trace.steps.back().rest, trace);
  } else if (const auto* o = std::get_if<OracleCount>(&stopper.rule)) {
    const int target = std::min(o->n - 1, cap);
    trace.truncated = o->n - 1 > cap;
    for (int j = 0; j < target; ++j)
      run_step(params, trace.steps.empty() ? x : trace.steps.back().rest, trace);
    trace.residual_is_stem = true;
  } else if (const auto* c = std::get_if<ClassifierStop>(&stopper.rule)) {
    if (rms(x) < 1e-5) {  // too quiet for the classifier's verdict to mean much
      trace.estimated_count = 1;
      trace.residual_is_stem = true;
      trace.low_confidence = true;
      trace.terminal = true;
      return trace;
    }
    for (int j = 1; j <= cap; ++j) {
      run_step(params, trace.steps.empty() ? x : trace.steps.back().rest, trace);
      const double prob = predict_is_source(c->params, trace.steps.back().rest);
      trace.steps.back().classifier_prob = prob;
      if (prob < c->threshold) {
        trace.estimated_count = j;
        break;
      }
    }
    if (!trace.estimated_count) {
      trace.estimated_count = cap;
      trace.truncated = true;
    }
  } else if (const auto* m = std::get_if<MaxCap>(&stopper.rule)) {
    const int target = std::min(m->limit, cap);
    for (int j = 0; j < target; ++j)
      run_step(params, trace.steps.empty() ? x : trace.steps.back().rest, trace);
    trace.truncated = true;  // the rule never stops on its own account
  }

  if (!trace.steps.empty()) trace.steps.back().decision = StopDecision::Stop;
  trace.terminal = true;
  return trace;
}

std::vector<Waveform> stems_from_trace(const RecursionTrace& trace) {
  if (!trace.terminal) throw InvalidArgument("stems_from_trace: trace is not terminal");
  std::vector<Waveform> stems;
  for (const auto& s : trace.steps) stems.push_back(s.one);
  if (trace.residual_is_stem)
    stems.push_back(trace.steps.empty() ? trace.input : trace.steps.back().rest);
  return stems;
}

CountEstimate estimate_count(const SeparatorParams& params, const Waveform& x,
                             const StopClassifierParams& classifier, double threshold,
                             int safety_cap) {
  Stopper stopper;
  stopper.rule = ClassifierStop{classifier, threshold};
  stopper.safety_cap = safety_cap;
  const RecursionTrace trace = separate_recursive(params, x, stopper);
  return {trace.estimated_count.value(), trace.truncated, trace.low_confidence};
}

std::string trace_to_json(const RecursionTrace& trace,
                          const std::vector<std::string>& stem_paths) {
  nlohmann::json j;
  j["input_samples"] = trace.input.samples.size();
  j["sample_rate"] = trace.input.sample_rate;
  j["steps"] = nlohmann::json::array();
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const RecursionStep& s = trace.steps[i];
    nlohmann::json step;
    step["index"] = i + 1;
    step["decision"] = s.decision == StopDecision::Stop ? "stop" : "continue";
    if (s.classifier_prob)
      step["classifier_prob"] = *s.classifier_prob;
    else
      step["classifier_prob"] = nullptr;
    j["steps"].push_back(std::move(step));
  }
  if (trace.estimated_count)
    j["estimated_count"] = *trace.estimated_count;
  else
    j["estimated_count"] = nullptr;
  j["terminal"] = trace.terminal;
  j["truncated"] = trace.truncated;
  j["low_confidence"] = trace.low_confidence;
  j["stems"] = stem_paths;
  return j.dump(2);
}

}  // namespace orpit
