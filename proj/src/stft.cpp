#include "orpit/stft.hpp"

#include <algorithm>
#include <cmath>

#include "orpit/errors.hpp"

namespace orpit {

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT; inverse applies conjugation and 1/n.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / len * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

void dft_naive(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<std::complex<double>> out(n);
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (int t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * kPi * k * t / n;
      acc += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = inverse ? acc / static_cast<double>(n) : acc;
  }
  a = std::move(out);
}

void transform(std::vector<std::complex<double>>& a, bool inverse) {
  if (is_pow2(static_cast<int>(a.size())))
    fft_pow2(a, inverse);
  else
    dft_naive(a, inverse);
}

std::vector<double> hann_periodic(int len) {
  std::vector<double> w(len);
  for (int n = 0; n < len; ++n) w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / len);
  return w;
}

void check_stft_args(int window_len, int hop) {
  if (window_len < 2 || window_len % 2 != 0)
    throw InvalidArgument("stft: window length must be even and >= 2");
  if (hop != window_len / 2)
    throw InvalidArgument("stft: hop must be window_len/2 (50% overlap)");
}

}  // namespace

Spectrogram stft(const Waveform& x, int window_len, int hop) {
  validate_waveform(x, "stft");
  check_stft_args(window_len, hop);
  const int T = static_cast<int>(x.samples.size());
  if (T < window_len) throw InvalidArgument("stft: input shorter than one window");
  const int n_frames = (T - window_len) / hop + 1;
  const int n_bins = window_len / 2 + 1;
  const auto window = hann_periodic(window_len);

  Spectrogram spec;
  spec.n_bins = n_bins;
  spec.n_frames = n_frames;
  spec.window_len = window_len;
  spec.hop = hop;
  spec.sample_rate = x.sample_rate;
  spec.data.resize(static_cast<std::size_t>(n_frames) * n_bins);

  std::vector<std::complex<double>> frame(window_len);
  for (int f = 0; f < n_frames; ++f) {
    const int off = f * hop;
    for (int n = 0; n < window_len; ++n)
      frame[n] = std::complex<double>(window[n] * x.samples[off + n], 0.0);
    transform(frame, false);
    for (int b = 0; b < n_bins; ++b) spec.at(f, b) = frame[b];
  }
  return spec;
}

Waveform istft(const Spectrogram& spec) {
  if (spec.n_frames < 1 || spec.window_len < 2 || spec.hop != spec.window_len / 2 ||
      spec.n_bins != spec.window_len / 2 + 1)
    throw InvalidArgument("istft: malformed spectrogram");
  const int L = spec.window_len;
  const int out_len = (spec.n_frames - 1) * spec.hop + L;
  const auto window = hann_periodic(L);

  std::vector<double> acc(out_len, 0.0);
  std::vector<double> wsum(out_len, 0.0);
  std::vector<std::complex<double>> frame(L);
  for (int f = 0; f < spec.n_frames; ++f) {
    for (int b = 0; b < spec.n_bins; ++b) frame[b] = spec.at(f, b);
    for (int b = spec.n_bins; b < L; ++b) frame[b] = std::conj(spec.at(f, L - b));
    transform(frame, true);
    const int off = f * spec.hop;
    for (int n = 0; n < L; ++n) {
      acc[off + n] += window[n] * frame[n].real();
      wsum[off + n] += window[n] * window[n];
    }
  }
  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(out_len);
  for (int i = 0; i < out_len; ++i)
    out.samples[i] = wsum[i] > 1e-12 ? static_cast<float>(acc[i] / wsum[i]) : 0.f;
  return out;
}

std::vector<std::vector<double>> mel_filterbank(int n_mels, int n_bins, int window_len,
                                                int sample_rate) {
  if (n_mels < 1) throw InvalidArgument("mel_filterbank: n_mels must be >= 1");
  if (n_mels + 2 > n_bins)
    throw InvalidArgument("mel_filterbank: n_mels exceeds the available FFT bins");
  const double nyquist = sample_rate / 2.0;
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };

  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> corners(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) corners[i] = mel_to_hz(mel_max * i / (n_mels + 1));

  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = corners[m], mid = corners[m + 1], hi = corners[m + 2];
    double row_sum = 0.0;
    for (int b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / window_len;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f == mid)
        w = 1.0;
      else if (f > mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb[m][b] = w;
      row_sum += w;
    }
    if (row_sum <= 0.0) {
      // Triangle narrower than one bin: take the nearest bin to the peak.
      const int b = std::clamp(
          static_cast<int>(std::lround(mid * window_len / sample_rate)), 0, n_bins - 1);
      fb[m][b] = 1.0;
    }
  }
  return fb;
}

TensorData<float> mel_features(const Waveform& x, int window_len, int hop, int n_mels) {
  const Spectrogram spec = stft(x, window_len, hop);
  const auto fb = mel_filterbank(n_mels, spec.n_bins, window_len, x.sample_rate);
  TensorData<float> out;
  out.shape = {n_mels, spec.n_frames};
  out.data.resize(static_cast<std::size_t>(n_mels) * spec.n_frames);
  std::vector<double> mag(spec.n_bins);
  for (int f = 0; f < spec.n_frames; ++f) {
    for (int b = 0; b < spec.n_bins; ++b) mag[b] = std::abs(spec.at(f, b));
    for (int m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      for (int b = 0; b < spec.n_bins; ++b) acc += fb[m][b] * mag[b];
      out.data[static_cast<std::size_t>(m) * spec.n_frames + f] =
          static_cast<float>(std::log10(acc + 1e-8));
    }
  }
  return out;
}

}  // namespace orpit
