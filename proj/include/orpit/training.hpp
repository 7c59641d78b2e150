#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "orpit/dataset.hpp"
#include "orpit/separator.hpp"

namespace orpit {

struct TrainConfig {
  int epochs = 30;
  int batch = 8;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  double ratio_n2 = 0.5;  // share of 2-source samples per epoch; ratios sum to 1
  double ratio_n3 = 0.5;
  double val_fraction = 0.1;              // held out per source count, in [0, 1)
  std::filesystem::path checkpoint_dir;   // empty disables checkpoints
  int checkpoint_every = 1;               // epochs between checkpoints when the dir is set
  int plateau_patience = 0;               // halve lr after this many epochs without a new
                                          // best mean loss; 0 keeps it constant
  bool stop_gradient = false;             // fine-tune: feed the residual to the second pass
                                          // as a constant instead of backpropagating through it
};

void validate_train_config(const TrainConfig& config);

struct TrainEpoch {
  int epoch = 0;  // counts from 1
  double mean_loss = 0.0;
  double val_sisnri_n2 = 0.0;
  double val_sisnri_n3 = 0.0;
  double seconds = 0.0;
  std::vector<int> split_wins;         // wins per split index; [0] counts index 1
  std::vector<std::string> probe_ids;  // record ids of the epoch's first batch
  double probe_loss = 0.0;             // mean breakdown total of that batch, taken before
                                       // its update so it can be recomputed from the
                                       // previous checkpoint
};

struct TrainLog {
  std::vector<TrainEpoch> epochs;
};

// Header plus one row per epoch: epoch,loss,val_sisnri_n2,val_sisnri_n3,seconds.
void save_train_log_csv(const TrainLog& log, const std::filesystem::path& path);

// OR-PIT training over mixed 2- and 3-source batches. Initializes from
// (sep_config, config.seed), interleaves the per-count pools to match the
// ratios, runs forward / or_pit_loss / backward / adam_step per batch, and
// returns the parameters with the best validation SI-SNRi (the final ones
// when no validation split exists). Deterministic in (manifest, configs).
// Validation scores each held-out mixture by oracle-stopping recursion and
// best-permutation SI-SNRi. With a checkpoint_dir set, writes init.orp before
// the first epoch and epoch_<k>.orp on the cadence. A non-finite loss throws
// NumericError before any further checkpoint is written.
std::pair<SeparatorParams, TrainLog> train_orpit(const DatasetManifest& manifest,
                                                 const SeparatorConfig& sep_config,
                                                 const TrainConfig& config);

// Recursive fine-tune on 3-source mixtures, starting from trained params.
// Per sample: or_pit_loss on the mixture picks a winning split, the residual
// estimate is fed back through the same network, and a second or_pit_loss is
// taken against the two sources the first split left behind; the optimizer
// steps on the sum. config.stop_gradient controls whether the second pass
// differentiates through the residual. Ratios are ignored; everything else
// (validation, checkpoints, determinism, errors) behaves as train_orpit.
std::pair<SeparatorParams, TrainLog> fine_tune_recursive(const SeparatorParams& params,
                                                         const DatasetManifest& manifest,
                                                         const TrainConfig& config);

}  // namespace orpit
