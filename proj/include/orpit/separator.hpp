#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "orpit/signal.hpp"
#include "orpit/tensor.hpp"

namespace orpit {

// Width of the depthwise kernels in the mask network.
inline constexpr int kDwKernel = 5;

struct SeparatorConfig {
  int n_basis = 64;
  int enc_kernel = 16;
  int enc_stride = 8;
  int mask_layers = 4;
  int mask_channels = 64;
  std::vector<int> dilations = {1, 2, 4, 8};
  int segment_len = 8000;
  std::uint64_t seed = 0;
};

// Throws InvalidArgument unless counts are >= 1, enc_stride <= enc_kernel,
// segment_len is a multiple of enc_stride, and dilations matches mask_layers.
void validate_config(const SeparatorConfig& config);

struct SeparatorParams {
  SeparatorConfig config;

  TensorData<float> enc_w;  // [n_basis, 1, enc_kernel]
  struct MaskLayer {
    TensorData<float> pw_w;  // [mask_channels, C_in, 1]
    TensorData<float> pw_b;  // [mask_channels]
    TensorData<float> dw_w;  // [mask_channels, kDwKernel]
    TensorData<float> dw_b;  // [mask_channels]
  };
  std::vector<MaskLayer> layers;
  TensorData<float> head_one_w;   // [n_basis, mask_channels, 1]
  TensorData<float> head_rest_w;  // [n_basis, mask_channels, 1]
  TensorData<float> dec_w;        // [n_basis, 1, enc_kernel]
};

// Stable iteration order shared by the optimizer, the graph binding, and the
// checkpoint layout.
std::vector<std::pair<std::string, TensorData<float>*>> named_tensors(SeparatorParams& params);
std::vector<std::pair<std::string, const TensorData<float>*>> named_tensors(
    const SeparatorParams& params);

// Fan-in-scaled uniform weights, zero biases. Deterministic in seed; the seed
// is also recorded in params.config.seed.
SeparatorParams init_params(const SeparatorConfig& config, std::uint64_t seed);

// Parameter tensors registered on a tape, in named_tensors order.
template <typename S>
std::vector<Tensor<S>> bind_params(Tape<S>& tape, const SeparatorParams& params,
                                   bool requires_grad);

// Copies of activations from the most recent forward call. relu_preacts
// holds every relu's input (encoder, then pointwise/depthwise per layer, then
// the two heads); distance from zero is the margin against the relu kink,
// which finite-difference tests must stay inside.
template <typename S>
struct ForwardDebug {
  std::vector<S> mask_one;
  std::vector<S> mask_rest;
  std::vector<std::vector<S>> relu_preacts;
};

// Runs the separator on a [1 x T] mixture using tensors from bind_params.
// Returns the (one, rest) output channels, both [1 x T].
template <typename S>
std::pair<Tensor<S>, Tensor<S>> forward(Tape<S>& tape, const SeparatorConfig& config,
                                        const std::vector<Tensor<S>>& bound, Tensor<S> mixture,
                                        ForwardDebug<S>* debug = nullptr);

// Inference entry point: float graph, no gradients.
std::pair<Waveform, Waveform> separate_once(const SeparatorParams& params, const Waveform& x);

// Weighted overlap-add of equal-length segments at the given start offsets.
// Interior weights are triangular cross-fades; the first segment's head and
// the last segment's tail get full weight; the accumulated weight normalizes
// every sample, so the effective weights sum to 1 everywhere.
std::vector<float> ola_combine(const std::vector<std::vector<float>>& segments,
                               const std::vector<int>& starts, int total_len, int segment_len);

// Splits long inputs into segment_len windows at 50% overlap, separates each,
// and cross-fades. Inputs no longer than segment_len bypass segmentation.
std::pair<Waveform, Waveform> separate_long(const SeparatorParams& params, const Waveform& x);

// Checkpoint format, versioned by its magic "ORP1": config header, named f32
// tensors, trailing CRC32. Any structural damage loads as FormatError.
void save_checkpoint(const SeparatorParams& params, const std::filesystem::path& path);
SeparatorParams load_checkpoint(const std::filesystem::path& path);

}  // namespace orpit
