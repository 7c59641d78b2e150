#include "orpit/stop_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "orpit/adam.hpp"
#include "orpit/errors.hpp"
#include "orpit/orp1.hpp"
#include "orpit/rng.hpp"
#include "orpit/stft.hpp"

namespace orpit {

namespace {

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
};

std::vector<TensorSpec> classifier_layout(const StopClassifierConfig& c) {
  return {
      {"conv1.w", {c.channels1, c.n_mels, c.conv_kernel}},
      {"conv1.b", {c.channels1}},
      {"conv2.w", {c.channels2, c.channels1, c.conv_kernel}},
      {"conv2.b", {c.channels2}},
      {"dense.w", {c.classes, c.channels2, 1}},
      {"dense.b", {c.classes}},
  };
}

template <typename P>
std::vector<std::pair<std::string, P>> named_tensors_impl(std::vector<P> tensors) {
  const char* names[] = {"conv1.w", "conv1.b", "conv2.w", "conv2.b", "dense.w", "dense.b"};
  std::vector<std::pair<std::string, P>> out;
  for (std::size_t i = 0; i < tensors.size(); ++i) out.emplace_back(names[i], tensors[i]);
  return out;
}

void fisher_yates(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.uniform_int(static_cast<int>(i))]);
}

std::vector<float> forward_logits(const StopClassifierParams& params,
                                  const TensorData<float>& features) {
  Tape<float> tape;
  auto bound = bind_classifier(tape, params, false);
  auto logits = classifier_forward(tape, params.config, bound, features);
  return logits.value();
}

double accuracy_on(const StopClassifierParams& params, const std::vector<LabeledFeatures>& set,
                   const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  int correct = 0;
  for (int i : idx)
    if (predict_class(params, set[i].features) == set[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

void validate_classifier_config(const StopClassifierConfig& c) {
  if (c.n_mels < 1 || c.channels1 < 1 || c.channels2 < 1 || c.conv_kernel < 1 || c.classes < 1 ||
      c.batch < 1)
    throw InvalidArgument("classifier config: counts must be >= 1");
  if (c.window_len < 2 || c.window_len % 2 != 0)
    throw InvalidArgument("classifier config: window_len must be even and >= 2");
  if (c.hop != c.window_len / 2)
    throw InvalidArgument("classifier config: hop must be window_len/2");
  if (c.epochs < 0) throw InvalidArgument("classifier config: epochs must be >= 0");
  if (!(c.lr > 0)) throw InvalidArgument("classifier config: lr must be positive");
}

std::vector<std::pair<std::string, TensorData<float>*>> named_tensors(StopClassifierParams& p) {
  return named_tensors_impl<TensorData<float>*>(
      {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.dense_w, &p.dense_b});
}

std::vector<std::pair<std::string, const TensorData<float>*>> named_tensors(
    const StopClassifierParams& p) {
  return named_tensors_impl<const TensorData<float>*>(
      {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.dense_w, &p.dense_b});
}

StopClassifierParams init_classifier(const StopClassifierConfig& config, std::uint64_t seed) {
  validate_classifier_config(config);
  StopClassifierParams p;
  p.config = config;
  p.config.seed = seed;

  Rng rng(seed);
  auto named = named_tensors(p);
  const auto layout = classifier_layout(config);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    TensorData<float>& t = *named[i].second;
    t.shape = layout[i].shape;
    t.data.assign(t.numel(), 0.f);
    if (layout[i].name.ends_with(".b")) continue;  // biases stay zero
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-limit, limit));
  }
  return p;
}

TensorData<float> featurize(const StopClassifierConfig& config, const Waveform& x) {
  validate_classifier_config(config);
  TensorData<float> f = mel_features(x, config.window_len, config.hop, config.n_mels);
  // Log-mel sits in roughly [-8, 2]; silence lands at the -8 floor.
  for (auto& v : f.data) v = (v + 4.f) / 4.f;
  return f;
}

int min_feature_frames(const StopClassifierConfig& config) {
  // Walk the stack backwards from a single frame entering the global pool.
  int t = 1;
  t = 2 * (t - 1) + 2;          // undo the second 2x pool
  t += config.conv_kernel - 1;  // undo conv2
  t = 2 * (t - 1) + 2;          // undo the first 2x pool
  t += config.conv_kernel - 1;  // undo conv1
  return t;
}

template <typename S>
std::vector<Tensor<S>> bind_classifier(Tape<S>& tape, const StopClassifierParams& params,
                                       bool requires_grad) {
  std::vector<Tensor<S>> out;
  for (const auto& [name, t] : named_tensors(params)) {
    (void)name;
    out.push_back(
        tape.input(t->shape, std::vector<S>(t->data.begin(), t->data.end()), requires_grad));
  }
  return out;
}

template std::vector<Tensor<float>> bind_classifier(Tape<float>&, const StopClassifierParams&,
                                                    bool);
template std::vector<Tensor<double>> bind_classifier(Tape<double>&, const StopClassifierParams&,
                                                     bool);

template <typename S>
Tensor<S> classifier_forward(Tape<S>& tape, const StopClassifierConfig& cfg,
                             const std::vector<Tensor<S>>& bound, const TensorData<S>& features,
                             std::vector<std::vector<S>>* relu_preacts) {
  validate_classifier_config(cfg);
  if (bound.size() != 6)
    throw InvalidArgument("classifier_forward: bound parameter count does not match the config");
  if (features.shape.size() != 2 || features.shape[0] != cfg.n_mels)
    throw InvalidArgument("classifier_forward: features must be [n_mels x frames]");
  if (features.shape[1] < min_feature_frames(cfg))
    throw InvalidArgument("classifier_forward: too few feature frames");

  auto x = tape.input(features, false);
  std::vector<Tensor<S>> preacts;

  auto c1 = tape.bias_add(tape.conv1d(x, bound[0], 1), bound[1]);
  preacts.push_back(c1);
  auto h = tape.avg_pool1d(tape.relu(c1), 2, 2);

  auto c2 = tape.bias_add(tape.conv1d(h, bound[2], 1), bound[3]);
  preacts.push_back(c2);
  h = tape.avg_pool1d(tape.relu(c2), 2, 2);

  const int width = h.shape()[1];
  h = tape.avg_pool1d(h, width, 1);
  auto logits = tape.bias_add(tape.conv1d(h, bound[4], 1), bound[5]);

  if (relu_preacts) {
    relu_preacts->clear();
    for (const auto& t : preacts) relu_preacts->push_back(t.value());
  }
  return logits;
}

template Tensor<float> classifier_forward(Tape<float>&, const StopClassifierConfig&,
                                          const std::vector<Tensor<float>>&,
                                          const TensorData<float>&, std::vector<std::vector<float>>*);
template Tensor<double> classifier_forward(Tape<double>&, const StopClassifierConfig&,
                                           const std::vector<Tensor<double>>&,
                                           const TensorData<double>&,
                                           std::vector<std::vector<double>>*);

template <typename S>
Tensor<S> bce_loss(Tape<S>& tape, Tensor<S> logits, int label, int classes) {
  if (classes < 1) throw InvalidArgument("bce_loss: classes must be >= 1");
  const int hi = classes == 1 ? 2 : classes;
  if (label < 0 || label >= hi) throw InvalidArgument("bce_loss: label out of range");
  std::vector<S> y(classes, S(0));
  if (classes == 1)
    y[0] = static_cast<S>(label);
  else
    y[static_cast<std::size_t>(label)] = S(1);

  auto yt = tape.constant({classes, 1}, std::move(y));
  auto ones = tape.constant({classes, 1}, std::vector<S>(classes, S(1)));
  auto p = tape.sigmoid(logits);
  auto hit = tape.mul(yt, tape.log10_safe(p));
  auto miss = tape.mul(tape.sub(ones, yt), tape.log10_safe(tape.sub(ones, p)));
  // log10_safe is the only log primitive; rescale to natural-log units.
  return tape.cmul(tape.sum(tape.add(hit, miss)), -std::log(10.0));
}

template Tensor<float> bce_loss(Tape<float>&, Tensor<float>, int, int);
template Tensor<double> bce_loss(Tape<double>&, Tensor<double>, int, int);

std::vector<LabeledFeatures> build_stop_training_set(const SeparatorParams& separator,
                                                     const DatasetManifest& manifest,
                                                     const StopClassifierConfig& config,
                                                     std::uint64_t seed) {
  validate_classifier_config(config);
  if (manifest.records.empty())
    throw InvalidArgument("build_stop_training_set: empty manifest");

  Rng root(seed);
  std::vector<LabeledFeatures> out;
  for (std::size_t k = 0; k < manifest.records.size(); ++k) {
    const ManifestRecord& rec = manifest.records[k];
    MixtureSample sample = load_sample(manifest, rec);
    out.push_back({featurize(config, sample.mixture), 1});

    Waveform r = sample.mixture;
    for (int j = 1; j <= rec.n; ++j) {
      auto [one, rest] = separate_long(separator, r);
      (void)one;
      r = std::move(rest);
      out.push_back({featurize(config, r), j < rec.n ? 1 : 0});
    }

    Waveform noise;
    noise.sample_rate = sample.mixture.sample_rate;
    noise.samples.assign(sample.mixture.samples.size(), 0.f);
    if (k % 3 != 2) {  // every third noise clip is exact silence
      Rng rk = root.fork(k);
      const double amp = std::exp(rk.uniform(std::log(1e-5), std::log(3e-3)));
      for (auto& v : noise.samples) v = static_cast<float>(amp * rk.normal());
    }
    out.push_back({featurize(config, noise), 0});
  }
  return out;
}

StopClassifierParams train_classifier(const std::vector<LabeledFeatures>& dataset,
                                      const StopClassifierConfig& config, std::uint64_t seed,
                                      ClassifierTrainLog* log) {
  validate_classifier_config(config);
  if (dataset.empty()) throw InvalidArgument("train_classifier: empty dataset");
  const int n_labels = config.classes == 1 ? 2 : config.classes;
  std::vector<char> seen(n_labels, 0);
  for (const auto& ex : dataset) {
    if (ex.label < 0 || ex.label >= n_labels)
      throw InvalidArgument("train_classifier: label out of range");
    seen[ex.label] = 1;
  }
  if (std::find(seen.begin(), seen.end(), char(0)) != seen.end())
    throw InvalidArgument("train_classifier: every class must appear in the dataset");
  if (log) *log = {};

  StopClassifierParams params = init_classifier(config, seed);

  Rng rng(seed);
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  fisher_yates(order, rng);
  const std::size_t n_val = std::max<std::size_t>(1, dataset.size() / 5);
  const std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());
  if (train_idx.empty() && config.epochs > 0)
    throw InvalidArgument("train_classifier: too few examples to hold out validation");

  StopClassifierParams best = params;
  best.val_accuracy = accuracy_on(params, dataset, val_idx);

  auto named = named_tensors(params);
  std::vector<std::size_t> sizes;
  for (const auto& [name, t] : named) sizes.push_back(t->numel());
  AdamConfig acfg;
  acfg.lr = config.lr;
  AdamState adam(acfg, sizes);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng erng = rng.fork(static_cast<std::uint64_t>(epoch) + 1);
    fisher_yates(train_idx, erng);

    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < train_idx.size(); b0 += config.batch) {
      const std::size_t b1 = std::min(train_idx.size(), b0 + config.batch);
      std::vector<std::vector<float>> gsum;
      for (const auto& [name, t] : named) gsum.emplace_back(t->numel(), 0.f);

      for (std::size_t bi = b0; bi < b1; ++bi) {
        const LabeledFeatures& ex = dataset[train_idx[bi]];
        Tape<float> tape;
        auto bound = bind_classifier(tape, params, true);
        auto logits = classifier_forward(tape, params.config, bound, ex.features);
        auto loss = bce_loss(tape, logits, ex.label, config.classes);
        loss_sum += static_cast<double>(loss.value()[0]);
        tape.backward(loss);
        for (std::size_t pi = 0; pi < bound.size(); ++pi) {
          const auto& g = bound[pi].grad();
          for (std::size_t j = 0; j < g.size(); ++j) gsum[pi][j] += g[j];
        }
      }

      const float inv = 1.f / static_cast<float>(b1 - b0);
      for (auto& g : gsum)
        for (auto& v : g) v *= inv;
      std::vector<std::vector<float>*> ps;
      std::vector<const std::vector<float>*> gs;
      for (std::size_t pi = 0; pi < named.size(); ++pi) {
        ps.push_back(&named[pi].second->data);
        gs.push_back(&gsum[pi]);
      }
      adam_step(ps, gs, adam);
    }

    const double acc = accuracy_on(params, dataset, val_idx);
    if (log) {
      log->epoch_loss.push_back(loss_sum / static_cast<double>(train_idx.size()));
      log->epoch_val_accuracy.push_back(acc);
    }
    if (acc > best.val_accuracy) {
      best = params;
      best.val_accuracy = acc;
    }
  }
  return best;
}

double predict_is_source(const StopClassifierParams& params, const Waveform& x) {
  if (params.config.classes != 1)
    throw InvalidArgument("predict_is_source: params carry a count head, not a stop head");
  const auto logits = forward_logits(params, featurize(params.config, x));
  return 1.0 / (1.0 + std::exp(-static_cast<double>(logits[0])));
}

int predict_class(const StopClassifierParams& params, const TensorData<float>& features) {
  const auto logits = forward_logits(params, features);
  if (params.config.classes == 1) return logits[0] > 0.f ? 1 : 0;
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = static_cast<int>(i);  // ties keep the lowest index
  return best;
}

StopClassifierParams train_count_baseline(const DatasetManifest& manifest, int k_max,
                                          const StopClassifierConfig& config, std::uint64_t seed,
                                          ClassifierTrainLog* log) {
  if (k_max < 2) throw InvalidArgument("train_count_baseline: k_max must be >= 2");
  StopClassifierConfig cfg = config;
  cfg.classes = k_max;
  validate_classifier_config(cfg);
  if (manifest.records.empty()) throw InvalidArgument("train_count_baseline: empty manifest");

  std::vector<LabeledFeatures> dataset;
  for (const ManifestRecord& rec : manifest.records) {
    if (rec.n < 1 || rec.n > k_max)
      throw InvalidArgument("train_count_baseline: record count outside 1..k_max");
    MixtureSample sample = load_sample(manifest, rec);
    dataset.push_back({featurize(cfg, sample.mixture), rec.n - 1});
  }
  return train_classifier(dataset, cfg, seed, log);
}

CountEvalResult evaluate_count_baseline(const StopClassifierParams& params,
                                        const DatasetManifest& manifest) {
  const int k = params.config.classes;
  if (k < 2) throw InvalidArgument("evaluate_count_baseline: params carry no count head");
  if (manifest.records.empty()) throw InvalidArgument("evaluate_count_baseline: empty manifest");

  CountEvalResult r;
  r.confusion.assign(k, std::vector<int>(k, 0));
  for (const ManifestRecord& rec : manifest.records) {
    if (rec.n < 1 || rec.n > k)
      throw InvalidArgument("evaluate_count_baseline: record count outside 1..k_max");
    MixtureSample sample = load_sample(manifest, rec);
    const int pred = predict_class(params, featurize(params.config, sample.mixture));
    r.confusion[rec.n - 1][pred] += 1;
  }

  r.per_class_accuracy.assign(k, 0.0);
  int correct = 0, total = 0;
  for (int c = 0; c < k; ++c) {
    int row = 0;
    for (int p = 0; p < k; ++p) row += r.confusion[c][p];
    if (row > 0)
      r.per_class_accuracy[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
    correct += r.confusion[c][c];
    total += row;
  }
  r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

namespace {

std::string classifier_header(const StopClassifierConfig& c, double val_accuracy) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "type=classifier\n";
  os << "window_len=" << c.window_len << "\n";
  os << "hop=" << c.hop << "\n";
  os << "n_mels=" << c.n_mels << "\n";
  os << "channels1=" << c.channels1 << "\n";
  os << "channels2=" << c.channels2 << "\n";
  os << "conv_kernel=" << c.conv_kernel << "\n";
  os << "classes=" << c.classes << "\n";
  os << "epochs=" << c.epochs << "\n";
  os << "batch=" << c.batch << "\n";
  os << "lr=" << c.lr << "\n";
  os << "seed=" << c.seed << "\n";
  os << "val_accuracy=" << val_accuracy << "\n";
  return os.str();
}

}  // namespace

void save_classifier(const StopClassifierParams& params, const std::filesystem::path& path) {
  validate_classifier_config(params.config);
  Orp1File file;
  file.header = classifier_header(params.config, params.val_accuracy);
  for (const auto& [name, t] : named_tensors(params)) file.tensors.emplace_back(name, *t);
  write_orp1(file, path);
}

StopClassifierParams load_classifier(const std::filesystem::path& path) {
  const Orp1File file = read_orp1(path);
  const auto kv = parse_header(file.header);
  if (header_str(kv, "type") != "classifier")
    throw FormatError("checkpoint: not a classifier checkpoint");

  StopClassifierConfig cfg;
  cfg.window_len = static_cast<int>(header_int(kv, "window_len"));
  cfg.hop = static_cast<int>(header_int(kv, "hop"));
  cfg.n_mels = static_cast<int>(header_int(kv, "n_mels"));
  cfg.channels1 = static_cast<int>(header_int(kv, "channels1"));
  cfg.channels2 = static_cast<int>(header_int(kv, "channels2"));
  cfg.conv_kernel = static_cast<int>(header_int(kv, "conv_kernel"));
  cfg.classes = static_cast<int>(header_int(kv, "classes"));
  cfg.epochs = static_cast<int>(header_int(kv, "epochs"));
  cfg.batch = static_cast<int>(header_int(kv, "batch"));
  cfg.lr = header_double(kv, "lr");
  cfg.seed = static_cast<std::uint64_t>(header_int(kv, "seed"));
  try {
    validate_classifier_config(cfg);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }

  const auto layout = classifier_layout(cfg);
  if (file.tensors.size() != layout.size())
    throw FormatError("checkpoint: tensor count does not match the config");

  StopClassifierParams params;
  params.config = cfg;
  params.val_accuracy = header_double(kv, "val_accuracy");
  auto named = named_tensors(params);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, t] = file.tensors[i];
    if (name != layout[i].name) throw FormatError("checkpoint: unexpected tensor " + name);
    if (t.shape != layout[i].shape)
      throw FormatError("checkpoint: shape mismatch for tensor " + name);
    *named[i].second = t;
  }
  return params;
}

}  // namespace orpit
