#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "orpit/signal.hpp"

namespace orpit {

struct DatasetConfig {
  int count_n1 = 0;  // single-source records (used for counting/stopper data)
  int count_n2 = 0;
  int count_n3 = 0;
  int count_n4 = 0;
  double duration_s = 1.0;
  int sample_rate = 8000;
  double snr_lo = -2.5;
  double snr_hi = 2.5;
  std::uint64_t seed = 0;
  std::string split = "train";
};

struct ManifestRecord {
  std::string id;
  std::string mixture;  // path relative to the manifest file
  std::vector<std::string> sources;
  std::vector<double> gains_db;
  int n = 0;
  std::string split;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;
};

// Synthesizes every record, writes WAVs plus manifest.jsonl under out_dir, and
// returns the manifest. Record k draws from an RNG stream forked from
// (seed, k), so the output is a pure function of (config, seed) and records
// could be generated in any order.
DatasetManifest make_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

MixtureSample load_sample(const DatasetManifest& manifest, const ManifestRecord& rec);

}  // namespace orpit
