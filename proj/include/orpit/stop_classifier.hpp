#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "orpit/dataset.hpp"
#include "orpit/separator.hpp"
#include "orpit/signal.hpp"
#include "orpit/tensor.hpp"

namespace orpit {

struct StopClassifierConfig {
  int window_len = 1024;
  int hop = 512;
  int n_mels = 64;
  int channels1 = 16;
  int channels2 = 24;
  int conv_kernel = 3;
  int classes = 1;  // 1 = stop head (single sigmoid); K > 1 = K-way count head
  int epochs = 20;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Throws InvalidArgument unless counts are >= 1, window_len is even, hop is
// window_len/2, epochs >= 0, and lr > 0.
void validate_classifier_config(const StopClassifierConfig& config);

struct StopClassifierParams {
  StopClassifierConfig config;

  TensorData<float> conv1_w;  // [channels1, n_mels, conv_kernel]
  TensorData<float> conv1_b;  // [channels1]
  TensorData<float> conv2_w;  // [channels2, channels1, conv_kernel]
  TensorData<float> conv2_b;  // [channels2]
  TensorData<float> dense_w;  // [classes, channels2, 1]
  TensorData<float> dense_b;  // [classes]

  double val_accuracy = 0.0;
};

// Stable iteration order shared by the optimizer, the graph binding, and the
// checkpoint layout.
std::vector<std::pair<std::string, TensorData<float>*>> named_tensors(
    StopClassifierParams& params);
std::vector<std::pair<std::string, const TensorData<float>*>> named_tensors(
    const StopClassifierParams& params);

// Fan-in-scaled uniform weights, zero biases. Deterministic in seed; the seed
// is also recorded in params.config.seed.
StopClassifierParams init_classifier(const StopClassifierConfig& config, std::uint64_t seed);

// Log-mel features shifted and scaled so silence sits near -1 and loud frames
// near +1; shape {n_mels, n_frames}. Inputs shorter than one analysis window
// are InvalidArgument.
TensorData<float> featurize(const StopClassifierConfig& config, const Waveform& x);

// Fewest feature frames the conv/pool stack accepts.
int min_feature_frames(const StopClassifierConfig& config);

// Parameter tensors registered on a tape, in named_tensors order.
template <typename S>
std::vector<Tensor<S>> bind_classifier(Tape<S>& tape, const StopClassifierParams& params,
                                       bool requires_grad);

// Two conv+relu+pool blocks, a global average pool, and a dense head; returns
// logits of shape [classes x 1]. relu_preacts, when given, receives each
// relu's input so tests can measure the margin against the kink.
template <typename S>
Tensor<S> classifier_forward(Tape<S>& tape, const StopClassifierConfig& config,
                             const std::vector<Tensor<S>>& bound, const TensorData<S>& features,
                             std::vector<std::vector<S>>* relu_preacts = nullptr);

// Sigmoid cross-entropy against an integer label. classes == 1 reads the
// label as 0/1; otherwise the label picks the hot row of a one-vs-all target.
template <typename S>
Tensor<S> bce_loss(Tape<S>& tape, Tensor<S> logits, int label, int classes);

struct LabeledFeatures {
  TensorData<float> features;
  int label = 0;  // stop head: 1 source-bearing / 0 exhausted; count head: n - 1
};

// Positives: every raw mixture plus each residual that still holds a source.
// Negatives: the residual left after peeling all n sources, plus one low-level
// noise clip per record (every third clip exactly zero). Deterministic in
// seed.
std::vector<LabeledFeatures> build_stop_training_set(const SeparatorParams& separator,
                                                     const DatasetManifest& manifest,
                                                     const StopClassifierConfig& config,
                                                     std::uint64_t seed);

struct ClassifierTrainLog {
  std::vector<double> epoch_loss;          // mean training cross-entropy
  std::vector<double> epoch_val_accuracy;  // measured after the epoch's updates
};

// Adam on per-example gradients averaged over each batch; a fifth of the data
// (at least one example) is held out and the best-validation parameters are
// returned with their accuracy recorded. Deterministic in (dataset, config,
// seed). Every class must appear in the dataset.
StopClassifierParams train_classifier(const std::vector<LabeledFeatures>& dataset,
                                      const StopClassifierConfig& config, std::uint64_t seed,
                                      ClassifierTrainLog* log = nullptr);

// Probability that the clip still carries a source; stop-head params only.
double predict_is_source(const StopClassifierParams& params, const Waveform& x);

// Count-head prediction for a clip already featurized with params.config.
// Returns the 0-based class index (ties to the lowest index); the stop head
// returns 0/1 by thresholding the logit at zero.
int predict_class(const StopClassifierParams& params, const TensorData<float>& features);

// Direct source counting from the raw mixture: trains a k_max-way head on
// labels n-1. The manifest must contain every count in 1..k_max.
StopClassifierParams train_count_baseline(const DatasetManifest& manifest, int k_max,
                                          const StopClassifierConfig& config, std::uint64_t seed,
                                          ClassifierTrainLog* log = nullptr);

struct CountEvalResult {
  std::vector<std::vector<int>> confusion;  // [true n - 1][predicted n - 1]
  std::vector<double> per_class_accuracy;   // 0 for classes absent from the set
  double overall_accuracy = 0.0;
};

CountEvalResult evaluate_count_baseline(const StopClassifierParams& params,
                                        const DatasetManifest& manifest);

// Same ORP1 container as separator checkpoints, tagged type=classifier.
void save_classifier(const StopClassifierParams& params, const std::filesystem::path& path);
StopClassifierParams load_classifier(const std::filesystem::path& path);

}  // namespace orpit
