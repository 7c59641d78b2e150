#include "orpit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#include "orpit/adam.hpp"
#include "orpit/errors.hpp"
#include "orpit/metrics.hpp"
#include "orpit/orpit_loss.hpp"
#include "orpit/recursion.hpp"
#include "orpit/rng.hpp"
#include "orpit/tensor.hpp"

namespace orpit {

namespace {

void fisher_yates(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng.uniform_int(static_cast<int>(i))]);
}

// Largest-deficit merge: every prefix of the epoch order tracks the requested
// ratio as closely as the pool sizes allow, and whichever pool runs dry first
// cedes the tail to the other.
std::vector<int> interleave_pools(const std::vector<int>& a, double ratio_a,
                                  const std::vector<int>& b) {
  std::vector<int> order;
  order.reserve(a.size() + b.size());
  std::size_t ia = 0, ib = 0;
  while (ia < a.size() || ib < b.size()) {
    if (ib == b.size()) {
      order.push_back(a[ia++]);
    } else if (ia == a.size()) {
      order.push_back(b[ib++]);
    } else {
      const double k = static_cast<double>(order.size()) + 1.0;
      const double da = ratio_a * k - static_cast<double>(ia);
      const double db = (1.0 - ratio_a) * k - static_cast<double>(ib);
      order.push_back(da >= db ? a[ia++] : b[ib++]);
    }
  }
  return order;
}

double mean_oracle_sisnri(const SeparatorParams& params,
                          const std::vector<MixtureSample>& samples,
                          const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  double sum = 0.0;
  for (int i : idx) {
    const MixtureSample& smp = samples[i];
    Stopper stopper;
    stopper.rule = OracleCount{static_cast<int>(smp.sources.size())};
    auto stems = stems_from_trace(separate_recursive(params, smp.mixture, stopper));
    double base = 0.0;
    for (const auto& s : smp.sources) base += si_snr(smp.mixture, s);
    base /= static_cast<double>(smp.sources.size());
    sum += best_permutation_score(stems, smp.sources).mean_si_snr_db - base;
  }
  return sum / static_cast<double>(idx.size());
}

struct StepResult {
  Tensor<float> loss;
  double total = 0.0;
  int chosen = 1;
};

using StepFn =
    std::function<StepResult(Tape<float>&, const std::vector<Tensor<float>>&, const MixtureSample&)>;

// Shared epoch loop for both trainers. Owns the split into train/validation
// pools, batch assembly, the optimizer, checkpoints, and the log; the step
// callback only builds one sample's graph.
std::pair<SeparatorParams, TrainLog> drive(SeparatorParams params, const DatasetManifest& manifest,
                                           const TrainConfig& config, int max_split_index,
                                           const StepFn& step) {
  std::vector<MixtureSample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) samples.push_back(load_sample(manifest, rec));

  std::vector<int> pool2, pool3;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    (manifest.records[i].n == 2 ? pool2 : pool3).push_back(static_cast<int>(i));

  Rng rng(config.seed);
  Rng split_rng = rng.fork(0);
  fisher_yates(pool2, split_rng);
  fisher_yates(pool3, split_rng);
  auto take_val = [&config](std::vector<int>& pool) {
    const auto nv = static_cast<std::ptrdiff_t>(config.val_fraction *
                                                static_cast<double>(pool.size()));
    std::vector<int> val(pool.begin(), pool.begin() + nv);
    pool.erase(pool.begin(), pool.begin() + nv);
    return val;
  };
  std::vector<int> val2 = take_val(pool2);
  std::vector<int> val3 = take_val(pool3);
  if (pool2.empty() && pool3.empty() && config.epochs > 0)
    throw InvalidArgument("train: no training samples left after the validation split");

  auto named = named_tensors(params);
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  adam_cfg.weight_decay = config.weight_decay;
  std::vector<std::size_t> sizes;
  sizes.reserve(named.size());
  for (const auto& [name, t] : named) sizes.push_back(t->data.size());
  AdamState adam(adam_cfg, sizes);

  std::vector<std::vector<float>> grad_sum;
  grad_sum.reserve(named.size());
  for (const auto& [name, t] : named) grad_sum.emplace_back(t->data.size(), 0.0f);
  std::vector<std::vector<float>*> param_ptrs;
  std::vector<const std::vector<float>*> grad_ptrs;
  for (std::size_t i = 0; i < named.size(); ++i) {
    param_ptrs.push_back(&named[i].second->data);
    grad_ptrs.push_back(&grad_sum[i]);
  }

  if (!config.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config.checkpoint_dir);
    save_checkpoint(params, config.checkpoint_dir / "init.orp");
  }
  const bool checkpoints = !config.checkpoint_dir.empty() && config.checkpoint_every > 0;

  TrainLog log;
  SeparatorParams best = params;
  double best_val = -std::numeric_limits<double>::infinity();
  const bool has_val = !val2.empty() || !val3.empty();
  double best_plateau = std::numeric_limits<double>::infinity();
  int stalled = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng epoch_rng = rng.fork(static_cast<std::uint64_t>(epoch));
    fisher_yates(pool2, epoch_rng);
    fisher_yates(pool3, epoch_rng);
    const std::vector<int> order = interleave_pools(pool2, config.ratio_n2, pool3);

    TrainEpoch entry;
    entry.epoch = epoch;
    entry.split_wins.assign(max_split_index, 0);
    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t b0 = done;
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(config.batch));
      for (auto& g : grad_sum) std::fill(g.begin(), g.end(), 0.0f);
      double batch_sum = 0.0;
      for (std::size_t s = b0; s < b1; ++s) {
        Tape<float> tape;
        auto bound = bind_params(tape, params, true);
        StepResult res = step(tape, bound, samples[order[s]]);
        if (!std::isfinite(res.total))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
        batch_sum += res.total;
        if (res.chosen >= 1 && res.chosen <= max_split_index) entry.split_wins[res.chosen - 1]++;
        tape.backward(res.loss);
        for (std::size_t i = 0; i < bound.size(); ++i) {
          const auto& g = tape.grad(bound[i].id());
          auto& acc = grad_sum[i];
          for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
        }
      }
      const float inv = 1.0f / static_cast<float>(b1 - b0);
      for (auto& g : grad_sum)
        for (float& v : g) v *= inv;
      adam_step(param_ptrs, grad_ptrs, adam);
      if (b0 == 0) {
        entry.probe_loss = batch_sum / static_cast<double>(b1 - b0);
        for (std::size_t s = b0; s < b1; ++s)
          entry.probe_ids.push_back(manifest.records[order[s]].id);
      }
      loss_sum += batch_sum;
      done = b1;
    }
    entry.mean_loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    entry.val_sisnri_n2 = mean_oracle_sisnri(params, samples, val2);
    entry.val_sisnri_n3 = mean_oracle_sisnri(params, samples, val3);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(entry);

    if (checkpoints && (epoch % config.checkpoint_every == 0 || epoch == config.epochs))
      save_checkpoint(params,
                      config.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".orp"));
    if (has_val) {
      double score = 0.0;
      int pools = 0;
      if (!val2.empty()) {
        score += entry.val_sisnri_n2;
        ++pools;
      }
      if (!val3.empty()) {
        score += entry.val_sisnri_n3;
        ++pools;
      }
      score /= static_cast<double>(pools);
      if (score > best_val) {
        best_val = score;
        best = params;
      }
    }
    if (config.plateau_patience > 0) {
      if (entry.mean_loss < best_plateau) {
        best_plateau = entry.mean_loss;
        stalled = 0;
      } else if (++stalled >= config.plateau_patience) {
        adam.set_lr(adam.config().lr * 0.5);
        stalled = 0;
      }
    }
  }
  if (has_val && config.epochs > 0) return {best, std::move(log)};
  return {std::move(params), std::move(log)};
}

}  // namespace

void validate_train_config(const TrainConfig& config) {
  if (config.epochs < 0) throw InvalidArgument("train config: epochs must be >= 0");
  if (config.batch < 1) throw InvalidArgument("train config: batch must be >= 1");
  if (!std::isfinite(config.lr) || config.lr <= 0)
    throw InvalidArgument("train config: lr must be positive");
  if (!std::isfinite(config.weight_decay) || config.weight_decay < 0)
    throw InvalidArgument("train config: weight_decay must be >= 0");
  if (config.ratio_n2 < 0 || config.ratio_n3 < 0 ||
      std::abs(config.ratio_n2 + config.ratio_n3 - 1.0) > 1e-9)
    throw InvalidArgument("train config: sample ratios must be non-negative and sum to 1");
  if (config.val_fraction < 0 || config.val_fraction >= 1)
    throw InvalidArgument("train config: val_fraction must be in [0, 1)");
  if (config.checkpoint_every < 0)
    throw InvalidArgument("train config: checkpoint_every must be >= 0");
  if (config.plateau_patience < 0)
    throw InvalidArgument("train config: plateau_patience must be >= 0");
}

void save_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("save_train_log_csv: cannot open " + path.string());
  f << "epoch,loss,val_sisnri_n2,val_sisnri_n3,seconds\n";
  char buf[128];
  for (const auto& e : log.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.9f,%.6f,%.6f,%.3f", e.epoch, e.mean_loss,
                  e.val_sisnri_n2, e.val_sisnri_n3, e.seconds);
    f << buf << "\n";
  }
  if (!f) throw IoError("save_train_log_csv: write failed for " + path.string());
}

std::pair<SeparatorParams, TrainLog> train_orpit(const DatasetManifest& manifest,
                                                 const SeparatorConfig& sep_config,
                                                 const TrainConfig& config) {
  validate_config(sep_config);
  validate_train_config(config);
  if (manifest.records.empty()) throw InvalidArgument("train_orpit: empty manifest");
  for (const auto& rec : manifest.records)
    if (rec.n != 2 && rec.n != 3)
      throw InvalidArgument("train_orpit: manifest must hold 2- or 3-source records, got n=" +
                            std::to_string(rec.n) + " for " + rec.id);

  StepFn step = [&sep_config](Tape<float>& tape, const std::vector<Tensor<float>>& bound,
                              const MixtureSample& smp) {
    const int t_len = static_cast<int>(smp.mixture.samples.size());
    auto x = tape.input({1, t_len}, smp.mixture.samples, false);
    auto [one, rest] = forward(tape, sep_config, bound, x);
    std::vector<Tensor<float>> sources;
    sources.reserve(smp.sources.size());
    for (const auto& s : smp.sources) sources.push_back(tape.input({1, t_len}, s.samples, false));
    auto res = or_pit_loss<float>(one, rest, sources);
    return StepResult{res.loss, res.breakdown.total, res.best.chosen_index};
  };
  return drive(init_params(sep_config, config.seed), manifest, config, 3, step);
}

std::pair<SeparatorParams, TrainLog> fine_tune_recursive(const SeparatorParams& params,
                                                         const DatasetManifest& manifest,
                                                         const TrainConfig& config) {
  validate_config(params.config);
  validate_train_config(config);
  if (manifest.records.empty()) throw InvalidArgument("fine_tune_recursive: empty manifest");
  for (const auto& rec : manifest.records)
    if (rec.n != 3)
      throw InvalidArgument("fine_tune_recursive: manifest must hold 3-source records, got n=" +
                            std::to_string(rec.n) + " for " + rec.id);

  const SeparatorConfig& cfg = params.config;
  const bool stop_gradient = config.stop_gradient;
  StepFn step = [&cfg, stop_gradient](Tape<float>& tape, const std::vector<Tensor<float>>& bound,
                                      const MixtureSample& smp) {
    const int t_len = static_cast<int>(smp.mixture.samples.size());
    auto x = tape.input({1, t_len}, smp.mixture.samples, false);
    auto [one1, rest1] = forward(tape, cfg, bound, x);
    std::vector<Tensor<float>> sources;
    sources.reserve(3);
    for (const auto& s : smp.sources) sources.push_back(tape.input({1, t_len}, s.samples, false));
    auto res1 = or_pit_loss<float>(one1, rest1, sources);

    std::vector<Tensor<float>> remaining;
    for (int i = 0; i < 3; ++i)
      if (i + 1 != res1.best.chosen_index) remaining.push_back(sources[i]);
    Tensor<float> back = rest1;
    if (stop_gradient) {
      std::vector<float> residual = rest1.value();
      back = tape.input({1, t_len}, std::move(residual), false);
    }
    auto [one2, rest2] = forward(tape, cfg, bound, back);
    auto res2 = or_pit_loss<float>(one2, rest2, remaining);
    return StepResult{tape.add(res1.loss, res2.loss),
                      res1.breakdown.total + res2.breakdown.total, res1.best.chosen_index};
  };
  return drive(params, manifest, config, 3, step);
}

}  // namespace orpit
