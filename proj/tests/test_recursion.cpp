#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "json.hpp"
#include "orpit/errors.hpp"
#include "orpit/recursion.hpp"
#include "orpit/rng.hpp"
#include "orpit/separator.hpp"
#include "orpit/stop_classifier.hpp"
#include "support.hpp"

using namespace orpit;

namespace {

SeparatorConfig tiny_separator_config() {
  SeparatorConfig c;
  c.n_basis = 8;
  c.enc_kernel = 8;
  c.enc_stride = 4;
  c.mask_layers = 1;
  c.mask_channels = 8;
  c.dilations = {1};
  c.segment_len = 2000;
  return c;
}

Waveform random_wave(Rng& rng, int len) {
  Waveform w;
  w.sample_rate = 8000;
  w.samples.resize(len);
  for (auto& v : w.samples) v = static_cast<float>(rng.uniform(-0.7, 0.7));
  return w;
}

// A stop head whose logit is exactly the dense bias: conv weights are zero,
// so every input maps to sigmoid(bias).
StopClassifierParams rigged_classifier(float logit_bias) {
  StopClassifierConfig c;
  c.window_len = 256;
  c.hop = 128;
  c.n_mels = 8;
  c.channels1 = 2;
  c.channels2 = 2;
  c.classes = 1;
  auto p = init_classifier(c, 1);
  for (auto& [name, t] : named_tensors(p))
    for (auto& v : t->data) v = 0.f;
  p.dense_b.data[0] = logit_bias;
  return p;
}

}  // namespace

TEST_CASE("stopper validation") {
  Stopper s;
  s.rule = FixedIterations{0};
  CHECK_THROWS_AS(validate_stopper(s), InvalidArgument);
  s.rule = OracleCount{0};
  CHECK_THROWS_AS(validate_stopper(s), InvalidArgument);
  s.rule = MaxCap{0};
  CHECK_THROWS_AS(validate_stopper(s), InvalidArgument);
  s.rule = FixedIterations{1};
  s.safety_cap = 0;
  CHECK_THROWS_AS(validate_stopper(s), InvalidArgument);
  s.safety_cap = 8;
  CHECK_NOTHROW(validate_stopper(s));

  s.rule = ClassifierStop{rigged_classifier(0.f), 0.0};
  CHECK_THROWS_AS(validate_stopper(s), InvalidArgument);
  s.rule = ClassifierStop{rigged_classifier(0.f), 1.0};
  CHECK_THROWS_AS(validate_stopper(s), InvalidArgument);
  s.rule = ClassifierStop{rigged_classifier(0.f), 0.5};
  CHECK_NOTHROW(validate_stopper(s));

  auto multi = rigged_classifier(0.f);
  multi.config.classes = 2;
  s.rule = ClassifierStop{multi, 0.5};
  CHECK_THROWS_AS(validate_stopper(s), InvalidArgument);
}

TEST_CASE("fixed iterations run exactly J steps on any input") {
  auto params = init_params(tiny_separator_config(), 3);
  Rng rng(10);

  for (int j : {1, 3}) {
    auto x = random_wave(rng, 2000);
    auto trace = separate_recursive(params, x, {FixedIterations{j}, 8});
    REQUIRE(trace.steps.size() == std::size_t(j));
    CHECK(trace.terminal);
    CHECK_FALSE(trace.truncated);
    CHECK_FALSE(trace.residual_is_stem);
    for (const auto& s : trace.steps) {
      CHECK(s.one.samples.size() == x.samples.size());
      CHECK(s.rest.samples.size() == x.samples.size());
      CHECK(s.one.sample_rate == x.sample_rate);
      CHECK_FALSE(s.classifier_prob.has_value());
    }
    for (std::size_t i = 0; i + 1 < trace.steps.size(); ++i)
      CHECK(trace.steps[i].decision == StopDecision::Continue);
    CHECK(trace.steps.back().decision == StopDecision::Stop);
    CHECK(stems_from_trace(trace).size() == std::size_t(j));
  }

  // Silence is not special for the fixed rule.
  Waveform silence;
  silence.sample_rate = 8000;
  silence.samples.assign(2000, 0.f);
  auto trace = separate_recursive(params, silence, {FixedIterations{2}, 8});
  CHECK(trace.steps.size() == 2);
  CHECK_FALSE(trace.low_confidence);

  // The safety cap overrides J and flags the cut.
  auto capped = separate_recursive(params, random_wave(rng, 2000), {FixedIterations{5}, 2});
  CHECK(capped.steps.size() == 2);
  CHECK(capped.truncated);
}

TEST_CASE("oracle count peels n-1 sources and keeps the residual as the last") {
  auto params = init_params(tiny_separator_config(), 3);
  Rng rng(11);
  auto x = random_wave(rng, 2000);

  auto trace = separate_recursive(params, x, {OracleCount{3}, 8});
  REQUIRE(trace.steps.size() == 2);
  CHECK(trace.residual_is_stem);
  auto stems = stems_from_trace(trace);
  REQUIRE(stems.size() == 3);
  CHECK(stems[0].samples == trace.steps[0].one.samples);
  CHECK(stems[1].samples == trace.steps[1].one.samples);
  CHECK(stems[2].samples == trace.steps[1].rest.samples);

  auto two = separate_recursive(params, x, {OracleCount{2}, 8});
  CHECK(stems_from_trace(two).size() == 2);

  // One source means zero peels: the stem is the input itself.
  auto one = separate_recursive(params, x, {OracleCount{1}, 8});
  CHECK(one.steps.empty());
  CHECK(one.terminal);
  auto single = stems_from_trace(one);
  REQUIRE(single.size() == 1);
  CHECK(single[0].samples == x.samples);
}

TEST_CASE("classifier rule stops where the probability drops and counts the steps") {
  auto params = init_params(tiny_separator_config(), 3);
  Rng rng(12);
  auto x = random_wave(rng, 2000);

  Stopper reject;
  reject.rule = ClassifierStop{rigged_classifier(-4.f), 0.5};
  auto trace = separate_recursive(params, x, reject);
  REQUIRE(trace.steps.size() == 1);
  REQUIRE(trace.estimated_count.has_value());
  CHECK(*trace.estimated_count == 1);
  CHECK_FALSE(trace.truncated);
  REQUIRE(trace.steps[0].classifier_prob.has_value());
  CHECK(*trace.steps[0].classifier_prob < 0.5);
  CHECK(trace.steps[0].decision == StopDecision::Stop);
  CHECK(stems_from_trace(trace).size() == std::size_t(*trace.estimated_count));

  Stopper accept;
  accept.rule = ClassifierStop{rigged_classifier(4.f), 0.5};
  accept.safety_cap = 3;
  auto runaway = separate_recursive(params, x, accept);
  CHECK(runaway.steps.size() == 3);
  CHECK(runaway.truncated);
  CHECK(*runaway.estimated_count == 3);
  for (const auto& s : runaway.steps) {
    REQUIRE(s.classifier_prob.has_value());
    CHECK(*s.classifier_prob > 0.5);
  }

  auto est = estimate_count(params, x, rigged_classifier(-4.f));
  CHECK(est.count == 1);
  CHECK_FALSE(est.truncated);
  CHECK_FALSE(est.low_confidence);

  auto runaway_est = estimate_count(params, x, rigged_classifier(4.f), 0.5, 3);
  CHECK(runaway_est.count == 3);
  CHECK(runaway_est.truncated);
}

TEST_CASE("silent input short-circuits the classifier rule to count 1") {
  auto params = init_params(tiny_separator_config(), 3);
  Waveform silence;
  silence.sample_rate = 8000;
  silence.samples.assign(2000, 0.f);

  // Even an always-continue classifier never runs on silence.
  auto est = estimate_count(params, silence, rigged_classifier(4.f));
  CHECK(est.count == 1);
  CHECK(est.low_confidence);
  CHECK_FALSE(est.truncated);

  Stopper s;
  s.rule = ClassifierStop{rigged_classifier(4.f), 0.5};
  auto trace = separate_recursive(params, silence, s);
  CHECK(trace.steps.empty());
  CHECK(trace.terminal);
  CHECK(trace.low_confidence);
  auto stems = stems_from_trace(trace);
  REQUIRE(stems.size() == 1);
  CHECK(stems[0].samples == silence.samples);
}

TEST_CASE("max-cap rule always flags truncation") {
  auto params = init_params(tiny_separator_config(), 3);
  Rng rng(13);
  auto x = random_wave(rng, 2000);

  auto trace = separate_recursive(params, x, {MaxCap{2}, 8});
  CHECK(trace.steps.size() == 2);
  CHECK(trace.truncated);
  CHECK(trace.terminal);
  CHECK(stems_from_trace(trace).size() == 2);

  auto capped = separate_recursive(params, x, {MaxCap{9}, 4});
  CHECK(capped.steps.size() == 4);
}

TEST_CASE("non-terminal traces cannot yield stems") {
  RecursionTrace trace;
  trace.input.samples.assign(100, 0.1f);
  CHECK_THROWS_AS(stems_from_trace(trace), InvalidArgument);
}

TEST_CASE("a non-finite step raises a numeric error carrying the partial trace") {
  auto params = init_params(tiny_separator_config(), 3);
  params.dec_w.data[0] = std::numeric_limits<float>::quiet_NaN();
  Rng rng(14);
  auto x = random_wave(rng, 2000);

  bool caught = false;
  try {
    separate_recursive(params, x, {FixedIterations{2}, 8});
  } catch (const RecursionNumericError& e) {
    caught = true;
    CHECK(e.trace.steps.empty());  // the very first step failed
    CHECK_FALSE(e.trace.terminal);
  }
  CHECK(caught);
  CHECK_THROWS_AS(separate_recursive(params, x, {FixedIterations{1}, 8}), NumericError);
}

TEST_CASE("trace serializes to a parseable JSON summary") {
  auto params = init_params(tiny_separator_config(), 3);
  Rng rng(15);
  auto x = random_wave(rng, 2000);

  Stopper s;
  s.rule = ClassifierStop{rigged_classifier(-4.f), 0.5};
  auto trace = separate_recursive(params, x, s);
  const auto text = trace_to_json(trace, {"stem_01.wav"});

  auto j = nlohmann::json::parse(text);
  CHECK(j["estimated_count"] == 1);
  CHECK(j["terminal"] == true);
  CHECK(j["truncated"] == false);
  CHECK(j["low_confidence"] == false);
  REQUIRE(j["steps"].size() == 1);
  CHECK(j["steps"][0]["index"] == 1);
  CHECK(j["steps"][0]["decision"] == "stop");
  CHECK(j["steps"][0]["classifier_prob"].is_number());
  REQUIRE(j["stems"].size() == 1);
  CHECK(j["stems"][0] == "stem_01.wav");

  auto fixed = separate_recursive(params, x, {FixedIterations{1}, 8});
  auto jf = nlohmann::json::parse(trace_to_json(fixed, {}));
  CHECK(jf["estimated_count"].is_null());
  CHECK(jf["steps"][0]["classifier_prob"].is_null());
}
