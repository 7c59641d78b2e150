#pragma once

#include <complex>
#include <vector>

#include "orpit/signal.hpp"
#include "orpit/tensor.hpp"

namespace orpit {

struct Spectrogram {
  int n_bins = 0;    // window_len/2 + 1 (one-sided)
  int n_frames = 0;
  int window_len = 0;
  int hop = 0;
  int sample_rate = 0;
  std::vector<std::complex<double>> data;  // frame-major: [frame][bin]

  std::complex<double>& at(int frame, int bin) {
    return data[static_cast<std::size_t>(frame) * n_bins + bin];
  }
  const std::complex<double>& at(int frame, int bin) const {
    return data[static_cast<std::size_t>(frame) * n_bins + bin];
  }
};

// Periodic Hann analysis window, hop fixed at window_len/2 (COLA). Frames are
// taken inside the signal only; trailing samples that do not fill a frame are
// dropped.
Spectrogram stft(const Waveform& x, int window_len, int hop);

// Weighted overlap-add with the same Hann window, normalized by the summed
// squared window. Output length is (n_frames-1)*hop + window_len.
Waveform istft(const Spectrogram& spec);

// Triangular mel filterbank weights, rows [n_mels][n_bins]. Corner points are
// n_mels+2 values equally spaced on the HTK mel scale from 0 to Nyquist. A row
// whose triangle is narrower than one bin gets weight 1 at the nearest bin.
std::vector<std::vector<double>> mel_filterbank(int n_mels, int n_bins, int window_len,
                                                int sample_rate);

// log10(mel energy + 1e-8) of the magnitude STFT; shape {n_mels, n_frames}.
TensorData<float> mel_features(const Waveform& x, int window_len, int hop, int n_mels);

}  // namespace orpit
