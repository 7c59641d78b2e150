#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace orpit {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 8000;
};

// Throws InvalidArgument unless samples are non-empty, finite, and the rate is
// positive. `what` names the offending argument in the message.
void validate_waveform(const Waveform& w, const std::string& what);

double rms(const Waveform& w);
double energy(const Waveform& w);  // sum of squares
double peak(const Waveform& w);    // max |sample|

enum class SourceKind { HarmonicComplex, FilteredNoise, Chirp };

struct SourceSpec {
  SourceKind kind = SourceKind::HarmonicComplex;
  double f0_lo = 85.0;   // Hz
  double f0_hi = 400.0;  // Hz
  double am_rate = 4.0;  // Hz
  double am_depth = 0.5; // in [0,1]
  std::uint64_t seed = 0;
};

struct MixtureSample {
  Waveform mixture;
  std::vector<Waveform> sources;  // post-gain; mixture is their sample-wise sum
  std::vector<double> gains_db;   // level of source 1 over source k; gains_db[0] = 0
};

// Deterministic synthetic source. Peak amplitude is normalized to 0.7.
// Harmonic complexes draw f0 from [f0_lo, f0_hi], sum every harmonic below
// Nyquist with 1/h amplitude rolloff, and apply the AM envelope.
Waveform synth_source(const SourceSpec& spec, double duration_s, int sample_rate);

// Scales source k by a_k = (norm(s_1)/norm(s_k)) * 10^(-g_k/20) so that the
// re-measured level of source 1 over source k is exactly g_k dB, then sums.
// gains_db[0] must be 0 (source 1 is the reference).
MixtureSample mix_at_snr(const std::vector<Waveform>& sources, const std::vector<double>& gains_db);

// Dominant-source schedule: interferer k (1-based) sits 18 + 0.5*(k-1) dB
// below the target.
MixtureSample dominant_mixture(const Waveform& target, const std::vector<Waveform>& interferers);

// Snaps every source to the 16-bit WAV grid and rebuilds the mixture as the
// exact sum of the quantized sources, rescaling first if headroom is needed.
// After this, writing and re-reading the sample preserves mixture == sum of
// sources bit-exactly.
void snap_to_wav_grid(MixtureSample& sample);

}  // namespace orpit
