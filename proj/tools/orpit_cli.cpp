// Command-line front end. One subcommand per invocation; exit codes are 0 on
// success, 2 for usage problems, 3 for data or I/O trouble, 4 for numeric
// failures. Diagnostics go to stderr, gated by ORPIT_LOG.

#include <algorithm>
#include <atomic>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "orpit/dataset.hpp"
#include "orpit/errors.hpp"
#include "orpit/metrics.hpp"
#include "orpit/recursion.hpp"
#include "orpit/rng.hpp"
#include "orpit/separator.hpp"
#include "orpit/signal.hpp"
#include "orpit/stop_classifier.hpp"
#include "orpit/tensor.hpp"
#include "orpit/training.hpp"
#include "orpit/wav_io.hpp"

namespace fs = std::filesystem;
using namespace orpit;

namespace {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel g_log_level = LogLevel::Warn;

LogLevel log_level_from_env() {
  const char* v = std::getenv("ORPIT_LOG");
  if (v == nullptr) return LogLevel::Warn;
  if (std::strcmp(v, "error") == 0) return LogLevel::Error;
  if (std::strcmp(v, "warn") == 0) return LogLevel::Warn;
  if (std::strcmp(v, "info") == 0) return LogLevel::Info;
  if (std::strcmp(v, "debug") == 0) return LogLevel::Debug;
  std::fprintf(stderr, "[warn] ORPIT_LOG=%s not recognized, using warn\n", v);
  return LogLevel::Warn;
}

__attribute__((format(printf, 2, 3))) void logf(LogLevel level, const char* fmt, ...) {
  if (level > g_log_level) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[%s] ", names[static_cast<int>(level)]);
  va_list ap;
  va_start(ap, fmt);
  std::vfprintf(stderr, fmt, ap);
  va_end(ap);
  std::fputc('\n', stderr);
}

int parse_positive_int(const std::string& text, const std::string& what) {
  std::size_t pos = 0;
  int value = 0;
  try {
    value = std::stoi(text, &pos);
  } catch (const std::exception&) {
    throw InvalidArgument(what + ": '" + text + "' is not a number");
  }
  if (pos != text.size() || value < 1)
    throw InvalidArgument(what + ": '" + text + "' must be a positive integer");
  return value;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    out.push_back(parse_positive_int(item, what));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw InvalidArgument(what + ": empty list");
  return out;
}

// --stopper: fixed:J runs exactly J peels, oracle reads the count from the
// manifest record, oracle:N pins it, classifier asks the stop head.
struct StopperSpec {
  std::string text;
  fs::path classifier_path;
  double threshold = 0.5;
  int safety_cap = 8;
};

struct ParsedStopper {
  Stopper stopper;
  bool oracle_from_manifest = false;
};

ParsedStopper make_stopper(const StopperSpec& spec, bool manifest_supplies_count) {
  ParsedStopper out;
  out.stopper.safety_cap = spec.safety_cap;
  const std::string& s = spec.text;
  if (s == "classifier") {
    if (spec.classifier_path.empty())
      throw InvalidArgument("--stopper classifier needs --classifier");
    out.stopper.rule = ClassifierStop{load_classifier(spec.classifier_path), spec.threshold};
  } else if (s == "oracle") {
    if (!manifest_supplies_count)
      throw InvalidArgument(
          "--stopper oracle needs a manifest to supply the count; use oracle:N here");
    out.oracle_from_manifest = true;
    out.stopper.rule = OracleCount{1};
  } else if (s.rfind("oracle:", 0) == 0) {
    out.stopper.rule = OracleCount{parse_positive_int(s.substr(7), "--stopper oracle:N")};
  } else if (s.rfind("fixed:", 0) == 0) {
    out.stopper.rule = FixedIterations{parse_positive_int(s.substr(6), "--stopper fixed:J")};
  } else {
    throw InvalidArgument("unknown stopper '" + s +
                          "'; expected fixed:J, oracle, oracle:N, or classifier");
  }
  validate_stopper(out.stopper);
  return out;
}

void write_text_file(const fs::path& path, const std::string& text, const char* what) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(std::string(what) + ": cannot open " + path.string());
  out << text;
  if (!out) throw IoError(std::string(what) + ": write failed for " + path.string());
}

bool is_stem_name(const std::string& name) {
  if (name.rfind("stem_", 0) != 0) return false;
  if (name.size() < 10 || name.compare(name.size() - 4, 4, ".wav") != 0) return false;
  for (std::size_t i = 5; i + 4 < name.size(); ++i)
    if (name[i] < '0' || name[i] > '9') return false;
  return true;
}

void log_train_epochs(const TrainLog& log) {
  for (const TrainEpoch& e : log.epochs)
    logf(LogLevel::Info, "epoch %d loss %.6f val2 %.3f val3 %.3f (%.1fs)", e.epoch, e.mean_loss,
         e.val_sisnri_n2, e.val_sisnri_n3, e.seconds);
}

void log_classifier_epochs(const ClassifierTrainLog& log) {
  for (std::size_t i = 0; i < log.epoch_loss.size(); ++i)
    logf(LogLevel::Info, "epoch %zu loss %.6f val_acc %.4f", i + 1, log.epoch_loss[i],
         log.epoch_val_accuracy[i]);
}

// synth-data ------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  DatasetConfig config;
};

int run_synth(const SynthArgs& a) {
  const DatasetManifest manifest = make_dataset(a.config, a.out_dir);
  logf(LogLevel::Info, "wrote %zu records under %s", manifest.records.size(), a.out_dir.c_str());
  std::printf("%s\n", (fs::path(a.out_dir) / "manifest.jsonl").string().c_str());
  return 0;
}

// train / finetune ------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string model;  // finetune reads this
  std::string out;
  std::string report;
  std::string dilations;
  SeparatorConfig sep;
  TrainConfig train;
  std::string checkpoint_dir;
};

// --dilations wins; otherwise keep the config default when it still lines up
// with the layer count and fall back to doubling (1,2,4,...) when it does not.
void resolve_dilations(TrainArgs& args) {
  if (!args.dilations.empty()) {
    args.sep.dilations = parse_int_list(args.dilations, "--dilations");
  } else if (static_cast<int>(args.sep.dilations.size()) != args.sep.mask_layers) {
    args.sep.dilations.clear();
    for (int i = 0; i < args.sep.mask_layers; ++i)
      args.sep.dilations.push_back(1 << std::min(i, 16));
  }
}

int run_train(TrainArgs& a) {
  resolve_dilations(a);
  const DatasetManifest manifest = load_manifest(a.manifest);
  TrainConfig cfg = a.train;
  cfg.checkpoint_dir = a.checkpoint_dir;
  auto [params, log] = train_orpit(manifest, a.sep, cfg);
  log_train_epochs(log);
  save_checkpoint(params, a.out);
  if (!a.report.empty()) save_train_log_csv(log, a.report);
  logf(LogLevel::Info, "saved model to %s", a.out.c_str());
  return 0;
}

int run_finetune(const TrainArgs& a) {
  const SeparatorParams start = load_checkpoint(a.model);
  const DatasetManifest manifest = load_manifest(a.manifest);
  TrainConfig cfg = a.train;
  cfg.checkpoint_dir = a.checkpoint_dir;
  auto [params, log] = fine_tune_recursive(start, manifest, cfg);
  log_train_epochs(log);
  save_checkpoint(params, a.out);
  if (!a.report.empty()) save_train_log_csv(log, a.report);
  logf(LogLevel::Info, "saved model to %s", a.out.c_str());
  return 0;
}

// separate --------------------------------------------------------------

struct SeparateArgs {
  std::string model;
  std::string in;
  std::string out_dir;
  StopperSpec stopper;
  int segment_len = 0;
  bool force = false;
};

int run_separate(const SeparateArgs& a) {
  SeparatorParams params = load_checkpoint(a.model);
  if (a.segment_len > 0) {
    params.config.segment_len = a.segment_len;
    validate_config(params.config);
  }
  const Waveform x = read_wav(a.in);
  const ParsedStopper ps = make_stopper(a.stopper, false);

  const fs::path dir(a.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("separate: cannot create " + dir.string());
  std::vector<fs::path> leftovers;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (is_stem_name(name) || name == "trace.json") leftovers.push_back(entry.path());
  }
  if (!leftovers.empty() && !a.force)
    throw InvalidArgument("separate: " + dir.string() +
                          " already holds stems; pass --force to overwrite");
  for (const fs::path& p : leftovers) fs::remove(p, ec);

  const RecursionTrace trace = separate_recursive(params, x, ps.stopper);
  const std::vector<Waveform> stems = stems_from_trace(trace);
  std::vector<std::string> names;
  names.reserve(stems.size());
  for (std::size_t i = 0; i < stems.size(); ++i) {
    names.push_back("stem_" + std::to_string(i + 1) + ".wav");
    write_wav(dir / names.back(), stems[i]);
  }
  write_text_file(dir / "trace.json", trace_to_json(trace, names), "separate");
  if (trace.truncated) logf(LogLevel::Warn, "recursion hit the safety cap");
  if (trace.low_confidence) logf(LogLevel::Warn, "input is near-silent; count is low-confidence");
  logf(LogLevel::Info, "wrote %zu stems and trace.json under %s", stems.size(),
       a.out_dir.c_str());
  return 0;
}

// count -----------------------------------------------------------------

struct CountArgs {
  std::string model;
  std::string classifier;
  std::string in;
  std::string report;
  double threshold = 0.5;
  int safety_cap = 8;
};

int run_count(const CountArgs& a) {
  const SeparatorParams params = load_checkpoint(a.model);
  const StopClassifierParams classifier = load_classifier(a.classifier);
  const Waveform x = read_wav(a.in);
  const CountEstimate est = estimate_count(params, x, classifier, a.threshold, a.safety_cap);
  if (est.truncated) logf(LogLevel::Warn, "count hit the safety cap; the estimate is a floor");
  if (est.low_confidence) logf(LogLevel::Warn, "input is near-silent; count is low-confidence");
  if (!a.report.empty()) {
    nlohmann::json j;
    j["count"] = est.count;
    j["truncated"] = est.truncated;
    j["low_confidence"] = est.low_confidence;
    write_text_file(a.report, j.dump(2) + "\n", "count");
  }
  std::printf("%d\n", est.count);
  return 0;
}

// evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string manifest;
  std::string report;
  StopperSpec stopper;
  int segment_len = 0;
  int jobs = 1;
};

int run_evaluate(const EvaluateArgs& a) {
  SeparatorParams params = load_checkpoint(a.model);
  if (a.segment_len > 0) {
    params.config.segment_len = a.segment_len;
    validate_config(params.config);
  }
  const DatasetManifest manifest = load_manifest(a.manifest);
  const ParsedStopper ps = make_stopper(a.stopper, true);
  const SeparationFn fn = [&](const MixtureSample& sample) {
    Stopper st = ps.stopper;
    if (ps.oracle_from_manifest)
      st.rule = OracleCount{static_cast<int>(sample.sources.size())};
    return stems_from_trace(separate_recursive(params, sample.mixture, st));
  };
  const EvalReport report = evaluate_set(manifest, fn, a.jobs);
  save_report_csv(report, a.report);
  fs::path summary(a.report);
  summary.replace_extension(".json");
  save_report_json(report, summary);
  std::printf("evaluated %d failed %d mean_si_snri_db %.6f mean_sdri_db %.6f\n",
              report.evaluated, report.failed, report.mean_si_snri_db, report.mean_sdri_db);
  return 0;
}

// dominant-eval ----------------------------------------------------------

struct DominantArgs {
  std::string model;
  std::string interferers = "1,5,10";
  std::string report;
  int per_case = 50;
  std::uint64_t seed = 0;
  double duration_s = 1.0;
  int sample_rate = 8000;
  int jobs = 1;
};

Waveform draw_dominant_source(Rng& rng, double duration_s, int sample_rate) {
  constexpr int kNumBands = 8;
  constexpr double kF0Lo = 85.0;
  constexpr double kF0Hi = 400.0;
  const double width = (kF0Hi - kF0Lo) / kNumBands;
  const int band = rng.uniform_int(kNumBands);
  SourceSpec spec;
  spec.kind = SourceKind::HarmonicComplex;
  spec.f0_lo = kF0Lo + band * width;
  spec.f0_hi = spec.f0_lo + width;
  spec.am_rate = rng.uniform(2.0, 8.0);
  spec.am_depth = rng.uniform(0.2, 0.8);
  spec.seed = rng.next_u64();
  return synth_source(spec, duration_s, sample_rate);
}

int run_dominant(const DominantArgs& a) {
  if (a.per_case < 1) throw InvalidArgument("dominant-eval: --per-case must be >= 1");
  if (a.jobs < 1) throw InvalidArgument("dominant-eval: --jobs must be >= 1");
  if (a.duration_s <= 0) throw InvalidArgument("dominant-eval: --duration must be > 0");
  const std::vector<int> counts = parse_int_list(a.interferers, "dominant-eval: --interferers");
  const SeparatorParams params = load_checkpoint(a.model);

  struct Case {
    int n_interferers = 0;
    std::uint64_t stream = 0;
  };
  std::vector<Case> cases;
  for (std::size_t ki = 0; ki < counts.size(); ++ki)
    for (int c = 0; c < a.per_case; ++c)
      cases.push_back({counts[ki], static_cast<std::uint64_t>(ki) * 1000003ULL +
                                       static_cast<std::uint64_t>(c)});

  // Each case is a pure function of (seed, stream), so worker order cannot
  // change the numbers; results land in a slot per case.
  struct CaseResult {
    double stem_db = 0.0;
    double mix_db = 0.0;
  };
  std::vector<CaseResult> results(cases.size());
  const Rng root(a.seed);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cases.size()) return;
      try {
        Rng rng = root.fork(cases[i].stream);
        const Waveform target = draw_dominant_source(rng, a.duration_s, a.sample_rate);
        std::vector<Waveform> interferers;
        interferers.reserve(cases[i].n_interferers);
        for (int j = 0; j < cases[i].n_interferers; ++j)
          interferers.push_back(draw_dominant_source(rng, a.duration_s, a.sample_rate));
        const MixtureSample mix = dominant_mixture(target, interferers);
        Stopper one;
        one.rule = FixedIterations{1};
        const RecursionTrace trace = separate_recursive(params, mix.mixture, one);
        results[i].stem_db = si_snr(trace.steps[0].one, mix.sources[0]);
        results[i].mix_db = si_snr(mix.mixture, mix.sources[0]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const int n_workers = std::min<int>(a.jobs, static_cast<int>(cases.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::string csv = "interferers,cases,mean_si_snr_db,mean_mixture_si_snr_db\n";
  for (std::size_t ki = 0; ki < counts.size(); ++ki) {
    double stem_sum = 0.0;
    double mix_sum = 0.0;
    for (int c = 0; c < a.per_case; ++c) {
      const CaseResult& r = results[ki * a.per_case + c];
      stem_sum += r.stem_db;
      mix_sum += r.mix_db;
    }
    char line[128];
    std::snprintf(line, sizeof line, "%d,%d,%.6f,%.6f\n", counts[ki], a.per_case,
                  stem_sum / a.per_case, mix_sum / a.per_case);
    csv += line;
    logf(LogLevel::Info, "interferers %d: stem %.3f dB vs mixture %.3f dB", counts[ki],
         stem_sum / a.per_case, mix_sum / a.per_case);
  }
  if (a.report.empty())
    std::fputs(csv.c_str(), stdout);
  else
    write_text_file(a.report, csv, "dominant-eval");
  return 0;
}

// train-stopper / train-counter ------------------------------------------

struct ClassifierArgs {
  std::string model;
  std::string manifest;
  std::string out;
  int k_max = 3;
  StopClassifierConfig config;
};

int run_train_stopper(const ClassifierArgs& a) {
  const SeparatorParams separator = load_checkpoint(a.model);
  const DatasetManifest manifest = load_manifest(a.manifest);
  StopClassifierConfig cfg = a.config;
  cfg.classes = 1;
  const std::vector<LabeledFeatures> data =
      build_stop_training_set(separator, manifest, cfg, cfg.seed);
  logf(LogLevel::Info, "stop training set holds %zu clips", data.size());
  ClassifierTrainLog log;
  const StopClassifierParams clf = train_classifier(data, cfg, cfg.seed, &log);
  log_classifier_epochs(log);
  save_classifier(clf, a.out);
  std::printf("val_accuracy %.6f\n", clf.val_accuracy);
  return 0;
}

int run_train_counter(const ClassifierArgs& a) {
  const DatasetManifest manifest = load_manifest(a.manifest);
  ClassifierTrainLog log;
  const StopClassifierParams clf =
      train_count_baseline(manifest, a.k_max, a.config, a.config.seed, &log);
  log_classifier_epochs(log);
  save_classifier(clf, a.out);
  std::printf("val_accuracy %.6f\n", clf.val_accuracy);
  return 0;
}

// ------------------------------------------------------------------------

void add_stopper_options(CLI::App* cmd, StopperSpec& spec, const std::string& default_text) {
  spec.text = default_text;
  cmd->add_option("--stopper", spec.text,
                  "stopping rule: fixed:J, oracle, oracle:N, or classifier")
      ->capture_default_str();
  cmd->add_option("--classifier", spec.classifier_path,
                  "stop classifier checkpoint (for --stopper classifier)");
  cmd->add_option("--threshold", spec.threshold, "classifier continue threshold in (0,1)")
      ->capture_default_str();
  cmd->add_option("--safety-cap", spec.safety_cap, "hard bound on recursion steps")
      ->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainArgs& args) {
  cmd->add_option("--manifest", args.manifest, "dataset manifest (jsonl)")->required();
  cmd->add_option("--out", args.out, "output model checkpoint path")->required();
  cmd->add_option("--report", args.report, "write a per-epoch CSV log here");
  cmd->add_option("--epochs", args.train.epochs)->capture_default_str();
  cmd->add_option("--batch", args.train.batch)->capture_default_str();
  cmd->add_option("--lr", args.train.lr)->capture_default_str();
  cmd->add_option("--weight-decay", args.train.weight_decay)->capture_default_str();
  cmd->add_option("--seed", args.train.seed)->capture_default_str();
  cmd->add_option("--val-fraction", args.train.val_fraction)->capture_default_str();
  cmd->add_option("--checkpoint-dir", args.checkpoint_dir, "write epoch checkpoints here");
  cmd->add_option("--checkpoint-every", args.train.checkpoint_every)->capture_default_str();
  cmd->add_option("--plateau-patience", args.train.plateau_patience,
                  "halve the learning rate after this many stalled epochs (0 = constant)")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  g_log_level = log_level_from_env();

  CLI::App app{"Recursive single-channel source separation tools"};
  app.require_subcommand(1);
  std::function<int()> action;

  SynthArgs synth;
  {
    CLI::App* cmd = app.add_subcommand("synth-data", "synthesize a mixture dataset");
    cmd->add_option("--out-dir", synth.out_dir, "output directory")->required();
    cmd->add_option("--n1", synth.config.count_n1, "single-source records")
        ->capture_default_str();
    cmd->add_option("--n2", synth.config.count_n2, "two-source records")->capture_default_str();
    cmd->add_option("--n3", synth.config.count_n3, "three-source records")
        ->capture_default_str();
    cmd->add_option("--n4", synth.config.count_n4, "four-source records")->capture_default_str();
    cmd->add_option("--duration", synth.config.duration_s, "clip length in seconds")
        ->capture_default_str();
    cmd->add_option("--sample-rate", synth.config.sample_rate)->capture_default_str();
    cmd->add_option("--snr-lo", synth.config.snr_lo, "per-source gain range low, dB")
        ->capture_default_str();
    cmd->add_option("--snr-hi", synth.config.snr_hi, "per-source gain range high, dB")
        ->capture_default_str();
    cmd->add_option("--seed", synth.config.seed)->capture_default_str();
    cmd->add_option("--split", synth.config.split, "split tag written to the manifest")
        ->capture_default_str();
    cmd->callback([&] { action = [&] { return run_synth(synth); }; });
  }

  TrainArgs train;
  {
    CLI::App* cmd = app.add_subcommand("train", "train a separator from scratch");
    add_train_options(cmd, train);
    cmd->add_option("--ratio-n2", train.train.ratio_n2, "share of 2-source samples per epoch")
        ->capture_default_str();
    cmd->add_option("--ratio-n3", train.train.ratio_n3, "share of 3-source samples per epoch")
        ->capture_default_str();
    cmd->add_option("--n-basis", train.sep.n_basis)->capture_default_str();
    cmd->add_option("--enc-kernel", train.sep.enc_kernel)->capture_default_str();
    cmd->add_option("--enc-stride", train.sep.enc_stride)->capture_default_str();
    cmd->add_option("--mask-layers", train.sep.mask_layers)->capture_default_str();
    cmd->add_option("--mask-channels", train.sep.mask_channels)->capture_default_str();
    cmd->add_option("--dilations", train.dilations, "comma list, one entry per mask layer");
    cmd->add_option("--segment-len", train.sep.segment_len)->capture_default_str();
    cmd->callback([&] {
      train.sep.seed = train.train.seed;
      action = [&] { return run_train(train); };
    });
  }

  TrainArgs finetune;
  finetune.train.epochs = 10;
  finetune.train.lr = 1e-4;
  {
    CLI::App* cmd = app.add_subcommand("finetune", "fine-tune a separator on its own residuals");
    cmd->add_option("--model", finetune.model, "starting model checkpoint")->required();
    add_train_options(cmd, finetune);
    cmd->add_flag("--stop-gradient", finetune.train.stop_gradient,
                  "treat the first-pass residual as a constant in the second pass");
    cmd->callback([&] { action = [&] { return run_finetune(finetune); }; });
  }

  SeparateArgs separate;
  {
    CLI::App* cmd = app.add_subcommand("separate", "split one WAV into stems");
    cmd->add_option("--model", separate.model, "separator checkpoint")->required();
    cmd->add_option("--in", separate.in, "input mixture WAV")->required();
    cmd->add_option("--out-dir", separate.out_dir, "directory for stem_K.wav and trace.json")
        ->required();
    add_stopper_options(cmd, separate.stopper, "fixed:1");
    cmd->add_option("--segment-len", separate.segment_len,
                    "override the checkpoint's segment length");
    cmd->add_flag("--force", separate.force, "overwrite stems left by an earlier run");
    cmd->callback([&] { action = [&] { return run_separate(separate); }; });
  }

  CountArgs count;
  {
    CLI::App* cmd = app.add_subcommand("count", "estimate the source count of a WAV");
    cmd->add_option("--model", count.model, "separator checkpoint")->required();
    cmd->add_option("--classifier", count.classifier, "stop classifier checkpoint")->required();
    cmd->add_option("--in", count.in, "input mixture WAV")->required();
    cmd->add_option("--report", count.report, "also write a JSON report here");
    cmd->add_option("--threshold", count.threshold)->capture_default_str();
    cmd->add_option("--safety-cap", count.safety_cap)->capture_default_str();
    cmd->callback([&] { action = [&] { return run_count(count); }; });
  }

  EvaluateArgs evaluate;
  {
    CLI::App* cmd = app.add_subcommand("evaluate", "score a model over a manifest");
    cmd->add_option("--model", evaluate.model, "separator checkpoint")->required();
    cmd->add_option("--manifest", evaluate.manifest, "dataset manifest (jsonl)")->required();
    cmd->add_option("--report", evaluate.report,
                    "per-mixture CSV path; a JSON summary lands next to it")
        ->required();
    add_stopper_options(cmd, evaluate.stopper, "oracle");
    cmd->add_option("--segment-len", evaluate.segment_len,
                    "override the checkpoint's segment length");
    cmd->add_option("--jobs", evaluate.jobs, "worker threads; output is order-stable")
        ->capture_default_str();
    cmd->callback([&] { action = [&] { return run_evaluate(evaluate); }; });
  }

  DominantArgs dominant;
  {
    CLI::App* cmd =
        app.add_subcommand("dominant-eval", "first-peel SI-SNR against interferer crowds");
    cmd->add_option("--model", dominant.model, "separator checkpoint")->required();
    cmd->add_option("--interferers", dominant.interferers, "comma list of interferer counts")
        ->capture_default_str();
    cmd->add_option("--per-case", dominant.per_case, "mixtures per interferer count")
        ->capture_default_str();
    cmd->add_option("--seed", dominant.seed)->capture_default_str();
    cmd->add_option("--duration", dominant.duration_s, "clip length in seconds")
        ->capture_default_str();
    cmd->add_option("--sample-rate", dominant.sample_rate)->capture_default_str();
    cmd->add_option("--jobs", dominant.jobs, "worker threads; output is order-stable")
        ->capture_default_str();
    cmd->add_option("--report", dominant.report, "CSV path (stdout when omitted)");
    cmd->callback([&] { action = [&] { return run_dominant(dominant); }; });
  }

  ClassifierArgs stopper;
  {
    CLI::App* cmd = app.add_subcommand("train-stopper", "train the stop classifier");
    cmd->add_option("--model", stopper.model, "separator checkpoint")->required();
    cmd->add_option("--manifest", stopper.manifest, "dataset manifest (jsonl)")->required();
    cmd->add_option("--out", stopper.out, "output classifier checkpoint path")->required();
    cmd->add_option("--epochs", stopper.config.epochs)->capture_default_str();
    cmd->add_option("--batch", stopper.config.batch)->capture_default_str();
    cmd->add_option("--lr", stopper.config.lr)->capture_default_str();
    cmd->add_option("--seed", stopper.config.seed)->capture_default_str();
    cmd->callback([&] { action = [&] { return run_train_stopper(stopper); }; });
  }

  ClassifierArgs counter;
  {
    CLI::App* cmd =
        app.add_subcommand("train-counter", "train the direct count baseline classifier");
    cmd->add_option("--manifest", counter.manifest, "dataset manifest (jsonl)")->required();
    cmd->add_option("--out", counter.out, "output classifier checkpoint path")->required();
    cmd->add_option("--k-max", counter.k_max, "largest source count in the data")
        ->capture_default_str();
    cmd->add_option("--epochs", counter.config.epochs)->capture_default_str();
    cmd->add_option("--batch", counter.config.batch)->capture_default_str();
    cmd->add_option("--lr", counter.config.lr)->capture_default_str();
    cmd->add_option("--seed", counter.config.seed)->capture_default_str();
    cmd->callback([&] { action = [&] { return run_train_counter(counter); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    return action();
  } catch (const InvalidArgument& e) {
    logf(LogLevel::Error, "%s", e.what());
    return 2;
  } catch (const FormatError& e) {
    logf(LogLevel::Error, "%s", e.what());
    return 3;
  } catch (const IoError& e) {
    logf(LogLevel::Error, "%s", e.what());
    return 3;
  } catch (const DegenerateReference& e) {
    logf(LogLevel::Error, "%s", e.what());
    return 4;
  } catch (const NumericError& e) {
    logf(LogLevel::Error, "%s", e.what());
    return 4;
  } catch (const std::exception& e) {
    logf(LogLevel::Error, "unexpected: %s", e.what());
    return 3;
  }
}
