#include "orpit/dataset.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "orpit/errors.hpp"
#include "orpit/rng.hpp"
#include "orpit/wav_io.hpp"

namespace orpit {

namespace {

// Eight disjoint f0 bands inside [85, 400] Hz stand in for distinct speakers.
constexpr int kNumBands = 8;
constexpr double kF0Lo = 85.0;
constexpr double kF0Hi = 400.0;

std::array<double, 2> band_range(int band) {
  const double width = (kF0Hi - kF0Lo) / kNumBands;
  return {kF0Lo + band * width, kF0Lo + (band + 1) * width};
}

MixtureSample synth_record(Rng& rng, int n_sources, double duration_s, int sample_rate,
                           double snr_lo, double snr_hi) {
  // Partial Fisher-Yates over the band indices gives n distinct bands.
  std::array<int, kNumBands> bands;
  for (int i = 0; i < kNumBands; ++i) bands[i] = i;
  for (int i = 0; i < n_sources; ++i) {
    const int j = i + rng.uniform_int(kNumBands - i);
    std::swap(bands[i], bands[j]);
  }
  std::vector<Waveform> sources;
  sources.reserve(n_sources);
  for (int k = 0; k < n_sources; ++k) {
    const auto range = band_range(bands[k]);
    SourceSpec spec;
    spec.kind = SourceKind::HarmonicComplex;
    spec.f0_lo = range[0];
    spec.f0_hi = range[1];
    spec.am_rate = rng.uniform(2.0, 8.0);
    spec.am_depth = rng.uniform(0.2, 0.8);
    spec.seed = rng.next_u64();
    sources.push_back(synth_source(spec, duration_s, sample_rate));
  }
  std::vector<double> gains(n_sources, 0.0);
  for (int k = 1; k < n_sources; ++k) gains[k] = rng.uniform(snr_lo, snr_hi);
  MixtureSample sample = mix_at_snr(sources, gains);
  snap_to_wav_grid(sample);
  return sample;
}

}  // namespace

DatasetManifest make_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  if (config.count_n1 < 0 || config.count_n2 < 0 || config.count_n3 < 0 || config.count_n4 < 0)
    throw InvalidArgument("make_dataset: counts must be >= 0");
  if (config.snr_lo > config.snr_hi) throw InvalidArgument("make_dataset: empty SNR range");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("make_dataset: cannot create " + out_dir.string());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  const Rng root(config.seed);
  const std::array<int, 4> counts = {config.count_n1, config.count_n2, config.count_n3,
                                     config.count_n4};
  int index = 0;
  for (int n = 1; n <= 4; ++n) {
    for (int c = 0; c < counts[n - 1]; ++c, ++index) {
      Rng rng = root.fork(static_cast<std::uint64_t>(index));
      MixtureSample sample = synth_record(rng, n, config.duration_s, config.sample_rate,
                                          config.snr_lo, config.snr_hi);
      char idbuf[16];
      std::snprintf(idbuf, sizeof(idbuf), "r%06d", index);
      ManifestRecord rec;
      rec.id = idbuf;
      rec.n = n;
      rec.split = config.split;
      rec.seed = config.seed;
      rec.gains_db = sample.gains_db;
      rec.mixture = rec.id + "_mix.wav";
      write_wav(out_dir / rec.mixture, sample.mixture);
      for (int k = 0; k < n; ++k) {
        rec.sources.push_back(rec.id + "_s" + std::to_string(k + 1) + ".wav");
        write_wav(out_dir / rec.sources.back(), sample.sources[k]);
      }
      manifest.records.push_back(std::move(rec));
    }
  }
  save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("save_manifest: cannot open " + path.string());
  for (const auto& rec : manifest.records) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["mixture"] = rec.mixture;
    j["sources"] = rec.sources;
    j["gains_db"] = rec.gains_db;
    j["n"] = rec.n;
    j["split"] = rec.split;
    j["seed"] = rec.seed;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("save_manifest: write failed for " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_manifest: cannot open " + path.string());
  DatasetManifest manifest;
  manifest.base_dir = path.has_parent_path() ? path.parent_path() : ".";
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError("load_manifest: bad JSON at " + path.string() + ":" +
                        std::to_string(lineno));
    try {
      ManifestRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.mixture = j.at("mixture").get<std::string>();
      rec.sources = j.at("sources").get<std::vector<std::string>>();
      rec.gains_db = j.at("gains_db").get<std::vector<double>>();
      rec.n = j.at("n").get<int>();
      rec.split = j.at("split").get<std::string>();
      rec.seed = j.at("seed").get<std::uint64_t>();
      if (rec.n != static_cast<int>(rec.sources.size()))
        throw FormatError("load_manifest: n does not match source count at " + path.string() +
                          ":" + std::to_string(lineno));
      manifest.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("load_manifest: missing field at " + path.string() + ":" +
                        std::to_string(lineno) + " (" + e.what() + ")");
    }
  }
  return manifest;
}

MixtureSample load_sample(const DatasetManifest& manifest, const ManifestRecord& rec) {
  MixtureSample sample;
  sample.mixture = read_wav(manifest.base_dir / rec.mixture);
  sample.gains_db = rec.gains_db;
  sample.sources.reserve(rec.sources.size());
  for (const auto& s : rec.sources) sample.sources.push_back(read_wav(manifest.base_dir / s));
  return sample;
}

}  // namespace orpit
