#include "orpit/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "orpit/errors.hpp"
#include "orpit/stft.hpp"

namespace orpit {

double si_snr_core(const std::vector<double>& est, const std::vector<double>& ref,
                   bool mean_normalize, SISNRBreakdown* breakdown) {
  if (est.size() != ref.size()) throw InvalidArgument("si_snr: length mismatch");
  if (est.empty()) throw InvalidArgument("si_snr: empty input");
  const std::size_t n = est.size();

  double me = 0.0, mr = 0.0;
  if (mean_normalize) {
    // Checked by value: rounding in the mean can leave a constant reference
    // with a tiny nonzero residual that the rr == 0 test below would miss.
    bool constant_ref = true;
    for (double v : ref)
      if (v != ref[0]) {
        constant_ref = false;
        break;
      }
    if (constant_ref) throw DegenerateReference("si_snr: constant reference");
    for (double v : est) me += v;
    for (double v : ref) mr += v;
    me /= static_cast<double>(n);
    mr /= static_cast<double>(n);
  }
  std::vector<double> e(n), r(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = est[i] - me;
  for (std::size_t i = 0; i < n; ++i) r[i] = ref[i] - mr;

  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += e[i] * r[i];
  for (std::size_t i = 0; i < n; ++i) rr += r[i] * r[i];
  if (rr == 0.0)
    throw DegenerateReference(mean_normalize ? "si_snr: constant reference"
                                             : "projection_sdr: zero reference");
  const double c = dot / rr;
  std::vector<double> st(n), en(n);
  for (std::size_t i = 0; i < n; ++i) st[i] = c * r[i];
  for (std::size_t i = 0; i < n; ++i) en[i] = e[i] - st[i];
  double st2 = 0.0, en2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) st2 += st[i] * st[i];
  for (std::size_t i = 0; i < n; ++i) en2 += en[i] * en[i];

  double value;
  if (st2 == 0.0)
    value = -kSnrCapDb;
  else if (en2 < kSnrEpsDen * st2)
    value = kSnrCapDb;
  else
    value = std::clamp(10.0 * std::log10(st2 / en2), -kSnrCapDb, kSnrCapDb);

  if (breakdown) {
    breakdown->s_target = std::move(st);
    breakdown->e_noise = std::move(en);
    breakdown->value_db = value;
  }
  return value;
}

namespace {

std::vector<double> widen(const Waveform& w) {
  return std::vector<double>(w.samples.begin(), w.samples.end());
}

}  // namespace

double si_snr(const Waveform& est, const Waveform& ref, SISNRBreakdown* breakdown) {
  return si_snr_core(widen(est), widen(ref), true, breakdown);
}

double si_snr_improvement(const Waveform& est, const Waveform& ref, const Waveform& mix) {
  return si_snr(est, ref) - si_snr(mix, ref);
}

double projection_sdr(const Waveform& est, const Waveform& ref) {
  return si_snr_core(widen(est), widen(ref), false, nullptr);
}

PermutationScore best_permutation_score(const std::vector<Waveform>& estimates,
                                        const std::vector<Waveform>& references) {
  if (estimates.size() != references.size())
    throw InvalidArgument("best_permutation_score: list length mismatch");
  const int n = static_cast<int>(estimates.size());
  if (n < 1) throw InvalidArgument("best_permutation_score: empty lists");
  if (n > 6) throw InvalidArgument("best_permutation_score: more than 6 sources");

  // Pairwise scores once, then enumerate assignments in lexicographic order.
  std::vector<std::vector<double>> score(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) score[i][j] = si_snr(estimates[i], references[j]);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  PermutationScore best;
  best.mean_si_snr_db = -1e300;
  do {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += score[i][perm[i]];
    const double mean = acc / n;
    if (mean > best.mean_si_snr_db) {
      best.mean_si_snr_db = mean;
      best.perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<Waveform> ibm_separate(const Waveform& mixture,
                                   const std::vector<Waveform>& references, int window_len,
                                   int hop) {
  validate_waveform(mixture, "ibm_separate: mixture");
  if (references.empty()) throw InvalidArgument("ibm_separate: no references");
  for (const auto& r : references)
    if (r.samples.size() != mixture.samples.size() || r.sample_rate != mixture.sample_rate)
      throw InvalidArgument("ibm_separate: reference length/rate mismatch");

  // Pad half a window on the left and enough on the right that every original
  // sample lands where the overlap-add weight is bounded away from zero.
  const int T = static_cast<int>(mixture.samples.size());
  const int half = window_len / 2;
  const int covered = T + half;
  const int n_frames = covered <= window_len
                           ? 1
                           : (covered - window_len + hop - 1) / hop + 1;
  const int padded_len = (n_frames - 1) * hop + window_len;

  auto pad = [&](const Waveform& w) {
    Waveform p;
    p.sample_rate = w.sample_rate;
    p.samples.assign(padded_len, 0.f);
    std::copy(w.samples.begin(), w.samples.end(), p.samples.begin() + half);
    return p;
  };

  const Spectrogram mix_spec = stft(pad(mixture), window_len, hop);
  std::vector<Spectrogram> ref_specs;
  ref_specs.reserve(references.size());
  for (const auto& r : references) ref_specs.push_back(stft(pad(r), window_len, hop));

  std::vector<Waveform> out;
  out.reserve(references.size());
  std::vector<Spectrogram> masked(references.size(), mix_spec);
  for (int f = 0; f < mix_spec.n_frames; ++f) {
    for (int b = 0; b < mix_spec.n_bins; ++b) {
      int winner = 0;
      double best = std::abs(ref_specs[0].at(f, b));
      for (std::size_t k = 1; k < references.size(); ++k) {
        const double mag = std::abs(ref_specs[k].at(f, b));
        if (mag > best) {
          best = mag;
          winner = static_cast<int>(k);
        }
      }
      for (std::size_t k = 0; k < references.size(); ++k)
        if (static_cast<int>(k) != winner) masked[k].at(f, b) = {0.0, 0.0};
    }
  }
  for (std::size_t k = 0; k < references.size(); ++k) {
    Waveform rec = istft(masked[k]);
    Waveform w;
    w.sample_rate = mixture.sample_rate;
    w.samples.assign(rec.samples.begin() + half, rec.samples.begin() + half + T);
    out.push_back(std::move(w));
  }
  return out;
}

namespace {

Waveform zero_like(const Waveform& w) {
  Waveform z;
  z.sample_rate = w.sample_rate;
  z.samples.assign(w.samples.size(), 0.f);
  return z;
}

// Aligns stems to references when the counts disagree: missing stems become
// silence; surplus stems are dropped by scoring every injective assignment of
// references onto stems and keeping the best.
EvalRow score_record(const ManifestRecord& rec, const MixtureSample& sample,
                     std::vector<Waveform> stems) {
  EvalRow row;
  row.id = rec.id;
  row.n = rec.n;
  const std::size_t n_ref = sample.sources.size();
  while (stems.size() < n_ref) stems.push_back(zero_like(sample.mixture));

  std::vector<int> assignment;  // reference index per stem, -1 = unused stem
  if (stems.size() == n_ref) {
    auto best = best_permutation_score(stems, sample.sources);
    assignment = best.perm;
  } else {
    if (stems.size() > 6) stems.resize(6);
    std::vector<std::vector<double>> score(stems.size(), std::vector<double>(n_ref));
    for (std::size_t i = 0; i < stems.size(); ++i)
      for (std::size_t j = 0; j < n_ref; ++j) score[i][j] = si_snr(stems[i], sample.sources[j]);
    std::vector<int> stem_idx(stems.size());
    std::iota(stem_idx.begin(), stem_idx.end(), 0);
    double best_mean = -1e300;
    std::vector<int> best_pick;
    do {
      double acc = 0.0;
      for (std::size_t j = 0; j < n_ref; ++j) acc += score[stem_idx[j]][j];
      if (acc / n_ref > best_mean) {
        best_mean = acc / n_ref;
        best_pick.assign(stem_idx.begin(), stem_idx.begin() + n_ref);
      }
    } while (std::next_permutation(stem_idx.begin(), stem_idx.end()));
    assignment.assign(stems.size(), -1);
    for (std::size_t j = 0; j < n_ref; ++j) assignment[best_pick[j]] = static_cast<int>(j);
  }

  double si_acc = 0.0, sdr_acc = 0.0;
  int scored = 0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] < 0) continue;
    const Waveform& ref = sample.sources[assignment[i]];
    si_acc += si_snr_improvement(stems[i], ref, sample.mixture);
    sdr_acc += projection_sdr(stems[i], ref) - projection_sdr(sample.mixture, ref);
    ++scored;
  }
  row.si_snri_db = si_acc / scored;
  row.sdri_db = sdr_acc / scored;
  row.perm = assignment;
  return row;
}

}  // namespace

EvalReport evaluate_set(const DatasetManifest& manifest, const SeparationFn& separate, int jobs) {
  if (jobs < 1) throw InvalidArgument("evaluate_set: jobs must be >= 1");
  EvalReport report;
  report.rows.resize(manifest.records.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= manifest.records.size()) return;
      const ManifestRecord& rec = manifest.records[i];
      try {
        MixtureSample sample = load_sample(manifest, rec);
        std::vector<Waveform> stems = separate(sample);
        report.rows[i] = score_record(rec, sample, std::move(stems));
      } catch (const std::exception& e) {
        report.rows[i].id = rec.id;
        report.rows[i].n = rec.n;
        report.rows[i].failed = true;
        report.rows[i].error = e.what();
      }
    }
  };
  if (jobs == 1 || manifest.records.size() < 2) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const int n_threads = std::min<int>(jobs, static_cast<int>(manifest.records.size()));
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::map<int, double> si_by_n, sdr_by_n;
  for (const auto& row : report.rows) {
    if (row.failed) {
      ++report.failed;
      continue;
    }
    ++report.evaluated;
    report.mean_si_snri_db += row.si_snri_db;
    report.mean_sdri_db += row.sdri_db;
    report.count_by_n[row.n] += 1;
    si_by_n[row.n] += row.si_snri_db;
    sdr_by_n[row.n] += row.sdri_db;
  }
  if (report.evaluated > 0) {
    report.mean_si_snri_db /= report.evaluated;
    report.mean_sdri_db /= report.evaluated;
  }
  for (const auto& [n, count] : report.count_by_n) {
    report.mean_si_snri_by_n[n] = si_by_n[n] / count;
    report.mean_sdri_by_n[n] = sdr_by_n[n] / count;
  }
  return report;
}

void save_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("save_report_csv: cannot open " + path.string());
  f << "# sdri_db uses projection SDR (no BSSEval distortion filters)\n";
  f << "id,n,si_snri_db,sdri_db,perm\n";
  char buf[64];
  for (const auto& row : report.rows) {
    if (row.failed) {
      f << row.id << "," << row.n << ",,,error:" << row.error << "\n";
      continue;
    }
    std::string perm;
    for (std::size_t i = 0; i < row.perm.size(); ++i) {
      if (i) perm += '|';
      perm += std::to_string(row.perm[i] + 1);
    }
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", row.si_snri_db, row.sdri_db);
    f << row.id << "," << row.n << "," << buf << "," << perm << "\n";
  }
  if (!f) throw IoError("save_report_csv: write failed for " + path.string());
}

void save_report_json(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["sdr_method"] = "projection SDR (no BSSEval distortion filters)";
  j["evaluated"] = report.evaluated;
  j["failed"] = report.failed;
  j["mean_si_snri_db"] = report.mean_si_snri_db;
  j["mean_sdri_db"] = report.mean_sdri_db;
  nlohmann::json per_n = nlohmann::json::object();
  for (const auto& [n, count] : report.count_by_n) {
    per_n[std::to_string(n)] = {{"count", count},
                                {"mean_si_snri_db", report.mean_si_snri_by_n.at(n)},
                                {"mean_sdri_db", report.mean_sdri_by_n.at(n)}};
  }
  j["per_n"] = per_n;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("save_report_json: cannot open " + path.string());
  f << j.dump(2) << "\n";
  if (!f) throw IoError("save_report_json: write failed for " + path.string());
}

}  // namespace orpit
