#include "orpit/signal.hpp"

#include <algorithm>
#include <cmath>

#include "orpit/errors.hpp"
#include "orpit/rng.hpp"
#include "orpit/wav_io.hpp"

namespace orpit {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void validate_waveform(const Waveform& w, const std::string& what) {
  if (w.samples.empty()) throw InvalidArgument(what + ": empty waveform");
  if (w.sample_rate <= 0) throw InvalidArgument(what + ": sample rate must be positive");
  for (float v : w.samples)
    if (!std::isfinite(v)) throw InvalidArgument(what + ": non-finite sample");
}

double rms(const Waveform& w) {
  if (w.samples.empty()) return 0.0;
  return std::sqrt(energy(w) / static_cast<double>(w.samples.size()));
}

double energy(const Waveform& w) {
  double acc = 0.0;
  for (float v : w.samples) acc += static_cast<double>(v) * static_cast<double>(v);
  return acc;
}

double peak(const Waveform& w) {
  double p = 0.0;
  for (float v : w.samples) p = std::max(p, std::fabs(static_cast<double>(v)));
  return p;
}

namespace {

std::vector<double> am_envelope(Rng& rng, int n, int sample_rate, double rate, double depth) {
  const double phase = rng.uniform(0.0, kTwoPi);
  std::vector<double> env(n);
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / sample_rate;
    env[i] = 1.0 - depth * 0.5 * (1.0 + std::sin(kTwoPi * rate * t + phase));
  }
  return env;
}

std::vector<double> synth_harmonic(Rng& rng, int n, int sample_rate, const SourceSpec& spec) {
  const double nyquist = sample_rate / 2.0;
  const double f0 = rng.uniform(spec.f0_lo, spec.f0_hi);
  const int n_harm = static_cast<int>(std::floor(0.999 * nyquist / f0));
  if (n_harm < 1) throw InvalidArgument("synth_source: f0 leaves no harmonics below Nyquist");
  std::vector<double> phases(n_harm);
  for (auto& p : phases) p = rng.uniform(0.0, kTwoPi);
  std::vector<double> x(n, 0.0);
  for (int h = 1; h <= n_harm; ++h) {
    const double amp = 1.0 / h;
    const double w = kTwoPi * f0 * h / sample_rate;
    const double ph = phases[h - 1];
    for (int i = 0; i < n; ++i) x[i] += amp * std::sin(w * i + ph);
  }
  return x;
}

std::vector<double> synth_noise(Rng& rng, int n, int sample_rate, const SourceSpec& spec) {
  const double fc = rng.uniform(spec.f0_lo, spec.f0_hi);
  std::vector<double> white(n);
  for (auto& v : white) v = rng.uniform(-1.0, 1.0);
  // RBJ constant-peak-gain bandpass biquad, Q = 1
  const double w0 = kTwoPi * fc / sample_rate;
  const double alpha = std::sin(w0) / 2.0;
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
  std::vector<double> y(n, 0.0);
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (int i = 0; i < n; ++i) {
    const double xi = white[i];
    const double yi = b0 * xi + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = xi;
    y2 = y1;
    y1 = yi;
    y[i] = yi;
  }
  return y;
}

std::vector<double> synth_chirp(Rng& rng, int n, int sample_rate, const SourceSpec& spec) {
  const double phase0 = rng.uniform(0.0, kTwoPi);
  const double dur = static_cast<double>(n) / sample_rate;
  const double k = (spec.f0_hi - spec.f0_lo) / dur;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    x[i] = std::sin(kTwoPi * (spec.f0_lo * t + 0.5 * k * t * t) + phase0);
  }
  return x;
}

}  // namespace

Waveform synth_source(const SourceSpec& spec, double duration_s, int sample_rate) {
  if (duration_s <= 0) throw InvalidArgument("synth_source: duration must be positive");
  if (sample_rate <= 0) throw InvalidArgument("synth_source: sample rate must be positive");
  const double nyquist = sample_rate / 2.0;
  if (spec.f0_lo <= 0 || spec.f0_hi >= nyquist || spec.f0_lo > spec.f0_hi)
    throw InvalidArgument("synth_source: f0 range must lie inside (0, Nyquist)");
  if (spec.am_depth < 0 || spec.am_depth > 1)
    throw InvalidArgument("synth_source: AM depth must lie in [0,1]");
  const int n = static_cast<int>(std::lround(duration_s * sample_rate));
  if (n < 1) throw InvalidArgument("synth_source: duration too short for one sample");

  Rng rng(spec.seed);
  std::vector<double> x;
  switch (spec.kind) {
    case SourceKind::HarmonicComplex: x = synth_harmonic(rng, n, sample_rate, spec); break;
    case SourceKind::FilteredNoise: x = synth_noise(rng, n, sample_rate, spec); break;
    case SourceKind::Chirp: x = synth_chirp(rng, n, sample_rate, spec); break;
  }
  const auto env = am_envelope(rng, n, sample_rate, spec.am_rate, spec.am_depth);
  double pk = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] *= env[i];
    pk = std::max(pk, std::fabs(x[i]));
  }
  if (pk <= 0) throw NumericError("synth_source: produced a silent waveform");
  const double scale = 0.7 / pk;
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(n);
  for (int i = 0; i < n; ++i) out.samples[i] = static_cast<float>(x[i] * scale);
  return out;
}

MixtureSample mix_at_snr(const std::vector<Waveform>& sources,
                         const std::vector<double>& gains_db) {
  if (sources.size() < 1) throw InvalidArgument("mix_at_snr: need at least one source");
  if (gains_db.size() != sources.size())
    throw InvalidArgument("mix_at_snr: one gain per source required");
  if (gains_db[0] != 0.0)
    throw InvalidArgument("mix_at_snr: gains_db[0] must be 0 (source 1 is the reference)");
  const std::size_t len = sources[0].samples.size();
  const int sr = sources[0].sample_rate;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    validate_waveform(sources[k], "mix_at_snr: source " + std::to_string(k + 1));
    if (sources[k].samples.size() != len || sources[k].sample_rate != sr)
      throw InvalidArgument("mix_at_snr: sources must share length and sample rate");
  }
  const double e1 = energy(sources[0]);
  if (e1 <= 0) throw InvalidArgument("mix_at_snr: source 1 has zero energy");

  MixtureSample out;
  out.gains_db = gains_db;
  out.sources.reserve(sources.size());
  out.mixture.sample_rate = sr;
  out.mixture.samples.assign(len, 0.f);
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const double ek = energy(sources[k]);
    if (ek <= 0)
      throw InvalidArgument("mix_at_snr: source " + std::to_string(k + 1) + " has zero energy");
    const double a = std::sqrt(e1 / ek) * std::pow(10.0, -gains_db[k] / 20.0);
    Waveform scaled;
    scaled.sample_rate = sr;
    scaled.samples.resize(len);
    for (std::size_t i = 0; i < len; ++i)
      scaled.samples[i] = static_cast<float>(a * sources[k].samples[i]);
    for (std::size_t i = 0; i < len; ++i) out.mixture.samples[i] += scaled.samples[i];
    out.sources.push_back(std::move(scaled));
  }
  return out;
}

MixtureSample dominant_mixture(const Waveform& target, const std::vector<Waveform>& interferers) {
  validate_waveform(target, "dominant_mixture: target");
  if (interferers.empty()) {
    MixtureSample out;
    out.mixture = target;
    out.sources = {target};
    out.gains_db = {0.0};
    return out;
  }
  std::vector<Waveform> sources;
  sources.reserve(interferers.size() + 1);
  sources.push_back(target);
  for (const auto& w : interferers) sources.push_back(w);
  std::vector<double> gains(sources.size(), 0.0);
  for (std::size_t k = 1; k < sources.size(); ++k)
    gains[k] = 18.0 + 0.5 * (static_cast<double>(k) - 1.0);
  return mix_at_snr(sources, gains);
}

void snap_to_wav_grid(MixtureSample& sample) {
  if (sample.sources.empty()) throw InvalidArgument("snap_to_wav_grid: no sources");
  double pk = peak(sample.mixture);
  for (const auto& s : sample.sources) pk = std::max(pk, peak(s));
  if (pk > 0.9) {
    const float c = static_cast<float>(0.9 / pk);
    for (auto& s : sample.sources)
      for (auto& v : s.samples) v *= c;
    for (auto& v : sample.mixture.samples) v *= c;
  }
  const std::size_t len = sample.mixture.samples.size();
  std::vector<std::int32_t> acc(len, 0);
  for (auto& s : sample.sources) {
    for (std::size_t i = 0; i < len; ++i) {
      const int q = quantize_sample(s.samples[i]);
      acc[i] += q;
      s.samples[i] = static_cast<float>(q) / 32768.f;
    }
  }
  for (std::size_t i = 0; i < len; ++i) {
    if (acc[i] < -32768 || acc[i] > 32767)
      throw NumericError("snap_to_wav_grid: quantized mixture overflows 16 bits");
    sample.mixture.samples[i] = static_cast<float>(acc[i]) / 32768.f;
  }
}

}  // namespace orpit
