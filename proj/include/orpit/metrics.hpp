#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "orpit/dataset.hpp"
#include "orpit/signal.hpp"

namespace orpit {

// SI-SNR values are capped to +/-kSnrCapDb; the +cap fires when the noise
// energy drops below kSnrEpsDen times the target energy.
inline constexpr double kSnrCapDb = 60.0;
inline constexpr double kSnrEpsDen = 1e-12;

struct SISNRBreakdown {
  std::vector<double> s_target;
  std::vector<double> e_noise;
  double value_db = 0.0;
};

// Core routine shared by every SI-SNR consumer. All reductions are plain
// in-order loops over the buffers; exact cross-checks elsewhere depend on
// that accumulation order, so it must not change. mean_normalize=false is the
// projection-SDR variant.
double si_snr_core(const std::vector<double>& est, const std::vector<double>& ref,
                   bool mean_normalize, SISNRBreakdown* breakdown);

double si_snr(const Waveform& est, const Waveform& ref, SISNRBreakdown* breakdown = nullptr);

// si_snr(est, ref) - si_snr(mix, ref)
double si_snr_improvement(const Waveform& est, const Waveform& ref, const Waveform& mix);

// SI-SNR without mean normalization; the desk-scale stand-in for BSSEval SDR.
double projection_sdr(const Waveform& est, const Waveform& ref);

struct PermutationScore {
  std::vector<int> perm;  // estimate j is scored against references[perm[j]]
  double mean_si_snr_db = 0.0;
};

// Exhaustive search over all assignments, n <= 6. Ties resolve to the
// lexicographically smallest permutation.
PermutationScore best_permutation_score(const std::vector<Waveform>& estimates,
                                        const std::vector<Waveform>& references);

// Ideal binary mask oracle: each T-F bin goes to the reference with the
// largest magnitude (ties to the lowest index). Output lengths equal the
// mixture length.
std::vector<Waveform> ibm_separate(const Waveform& mixture,
                                   const std::vector<Waveform>& references, int window_len,
                                   int hop);

struct EvalRow {
  std::string id;
  int n = 0;
  double si_snri_db = 0.0;
  double sdri_db = 0.0;
  std::vector<int> perm;  // reference index per estimate, 0-based
  bool failed = false;
  std::string error;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // manifest order
  int evaluated = 0;
  int failed = 0;
  double mean_si_snri_db = 0.0;
  double mean_sdri_db = 0.0;
  std::map<int, int> count_by_n;
  std::map<int, double> mean_si_snri_by_n;
  std::map<int, double> mean_sdri_by_n;
};

// Produces the stems for one loaded mixture. Model-based separators ignore
// sample.sources; the IBM oracle reads them.
using SeparationFn = std::function<std::vector<Waveform>(const MixtureSample& sample)>;

// Runs the separation per record, aligns stems to references by best
// permutation (padding missing stems with silence, dropping extras via the
// best injective assignment), and averages SI-SNRi / SDRi per mixture, then
// over mixtures. Per-record failures are recorded and excluded from
// aggregates. jobs > 1 processes records concurrently; output is identical to
// the serial run.
EvalReport evaluate_set(const DatasetManifest& manifest, const SeparationFn& separate,
                        int jobs = 1);

void save_report_csv(const EvalReport& report, const std::filesystem::path& path);
void save_report_json(const EvalReport& report, const std::filesystem::path& path);

}  // namespace orpit
