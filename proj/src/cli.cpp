#include "esr/cli.hpp"

#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>

#include <pthread.h>

#include <CLI11.hpp>

#include "esr/errors.hpp"
#include "esr/evaluation.hpp"
#include "esr/pipeline.hpp"
#include "esr/service.hpp"
#include "esr/synth.hpp"

namespace esr {

namespace {

namespace fs = std::filesystem;

void add_admission_options(CLI::App* cmd, AdmissionConfig& cfg) {
  cmd->add_option("--rms-min", cfg.rms_min, "Amplitude admission threshold")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--entropy-max", cfg.entropy_max_norm, "Normalized entropy admission threshold")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--hangover-frames", cfg.hangover_frames, "Rejected frames tolerated inside a segment");
  cmd->add_option("--min-len", cfg.min_len_s, "Shortest kept segment, seconds");
  cmd->add_option("--max-len", cfg.max_len_s, "Longest segment, seconds");
}

KnowledgeBase load_or_empty(const fs::path& dir) {
  return fs::exists(dir / kManifestName) ? load(dir) : KnowledgeBase{};
}

int cmd_features(const fs::path& wav, const AdmissionConfig& cfg, bool names, std::ostream& out) {
  const auto v = recording_features(read_wav_file(wav), cfg);
  out << std::setprecision(17);
  for (int i = 0; i < kFeatureCount; ++i) {
    if (names) out << feature_name(static_cast<std::size_t>(i)) << ' ';
    out << v(i) << '\n';
  }
  return 0;
}

int cmd_recognize(const fs::path& wav, const fs::path& kb_dir, const std::optional<std::string>& env,
                  const PipelineConfig& cfg, std::ostream& out) {
  Engine engine(std::make_shared<KnowledgeStore>(load(kb_dir)), cfg);
  FileReplaySource src(read_wav_file(wav));
  const auto r = engine.run_manual_recognition(src, env);
  if (!r) throw DomainError("no sound detected in " + wav.string());
  out << "class: " << r->class_name << '\n'
      << "level: " << r->level << '\n'
      << "g: " << std::setprecision(9) << r->gpi.g << '\n'
      << "posterior: " << r->posterior << '\n'
      << "importance: " << to_string(r->importance) << '\n'
      << "display: " << to_string(r->display) << '\n';
  return 0;
}

int cmd_record(const std::string& input, const fs::path& kb_dir, const std::string& label,
               const std::optional<std::string>& env, const PipelineConfig& cfg, std::ostream& out) {
  if (input == "live") throw DomainError("live audio input is not available in this build; pass a WAV file");
  if (label.empty()) throw ValidationError("--label must not be empty");
  const auto audio = read_wav_file(input);
  auto store = std::make_shared<KnowledgeStore>(load_or_empty(kb_dir), kb_dir);
  Engine engine(store, cfg);
  FileReplaySource src(audio);
  const auto outcome = engine.run_recording(src);
  if (outcome.status != RecordingStatus::captured) {
    throw DomainError("no sound captured (" + std::string(to_string(outcome.status)) + ")");
  }
  const auto id = engine.label_pending(outcome.pending_id, label, env);
  out << "record " << id << " added to '" << label << "' (" << std::setprecision(3)
      << outcome.capture->segment.duration() << " s, "
      << to_string(outcome.capture->segment.end_reason) << ")\n";
  return 0;
}

int cmd_eval(const fs::path& kb_dir, int folds, const std::string& algo_name, bool curves,
             std::uint64_t seed, int reps, const std::optional<std::string>& env, std::ostream& out) {
  const auto algo = algorithm_from_string(algo_name);
  const auto data = training_set(load(kb_dir), env);
  out << report_csv(cross_validate(data, folds, algo, seed));
  if (!curves) return 0;

  std::map<std::string, int> per_class;
  for (const auto& l : data.labels) ++per_class[l];
  int min_count = std::numeric_limits<int>::max();
  for (const auto& [name, n] : per_class) min_count = std::min(min_count, n);
  std::vector<int> inst, cls;
  for (int n = 2; n <= min_count; ++n) inst.push_back(n);
  for (int m = 2; m <= static_cast<int>(per_class.size()); ++m) cls.push_back(m);
  const auto c = learning_curves(data, inst, cls, algo, seed, reps, folds);
  out << "\n# instances per class\n" << curve_csv(c.instances);
  out << "\n# classes\n" << curve_csv(c.classes);
  return 0;
}

int cmd_synth(const fs::path& dir, int classes, int instances, std::uint64_t seed, std::ostream& out) {
  const auto kb = synthesize_corpus({classes, instances, seed}, dir);
  out << "wrote " << kb.records().size() << " records in " << kb.classes().size() << " classes to "
      << dir.string() << '\n';
  return 0;
}

int cmd_serve(ServiceOptions opts, std::ostream& out) {
  // Block termination signals before any thread exists so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  const std::string host = opts.host;
  Service service(std::move(opts));
  const int port = service.bind();
  service.start();
  out << "listening on http://" << host << ':' << port << '\n' << std::flush;
  int sig = 0;
  sigwait(&set, &sig);
  service.stop();
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Environmental sound recognition engine", "esr"};
  app.require_subcommand(1);

  PipelineConfig pipeline;

  auto* features = app.add_subcommand("features", "Print the 54 feature values of a WAV file");
  std::string feat_wav;
  bool feat_names = false;
  features->add_option("wav", feat_wav, "48 kHz mono 16-bit WAV")->required();
  features->add_flag("--names", feat_names, "Prefix each value with its name");
  add_admission_options(features, pipeline.admission);

  auto* recognize = app.add_subcommand("recognize", "Recognize the first sound in a WAV file");
  std::string rec_wav, rec_kb;
  std::optional<std::string> rec_env;
  recognize->add_option("wav", rec_wav)->required();
  recognize->add_option("--kb", rec_kb, "Knowledge base directory")->required();
  recognize->add_option("--env", rec_env, "Environment filter");
  add_admission_options(recognize, pipeline.admission);

  auto* record = app.add_subcommand("record", "Capture a sound and store it under a label");
  std::string record_input, record_kb, record_label;
  std::optional<std::string> record_env;
  record->add_option("input", record_input, "WAV file, or 'live'")->required();
  record->add_option("--kb", record_kb)->required();
  record->add_option("--label", record_label)->required();
  record->add_option("--env", record_env);
  record->add_option("--timeout", pipeline.recording_timeout_s, "Seconds without sound before giving up")
      ->check(CLI::PositiveNumber);
  add_admission_options(record, pipeline.admission);

  auto* eval = app.add_subcommand("eval", "Cross-validate a knowledge base");
  std::string eval_kb, eval_algo = "nb";
  int eval_folds = 10, eval_reps = 3;
  bool eval_curves = false;
  std::uint64_t eval_seed = 1;
  std::optional<std::string> eval_env;
  eval->add_option("--kb", eval_kb)->required();
  eval->add_option("--folds", eval_folds)->check(CLI::Range(2, 1000));
  eval->add_option("--algo", eval_algo)->check(CLI::IsMember({"nb", "1nn"}));
  eval->add_flag("--curves", eval_curves, "Also print learning curves");
  eval->add_option("--seed", eval_seed);
  eval->add_option("--reps", eval_reps, "Repetitions per curve point")->check(CLI::Range(1, 100));
  eval->add_option("--env", eval_env);

  auto* synth = app.add_subcommand("synth-corpus", "Generate the synthetic evaluation corpus");
  std::string synth_out;
  int synth_classes = kSynthClassCount, synth_instances = 10;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--classes", synth_classes)->check(CLI::Range(1, kSynthClassCount));
  synth->add_option("--instances", synth_instances)->check(CLI::Range(1, 1000));
  synth->add_option("--seed", synth_seed);

  auto* serve = app.add_subcommand("serve", "Run the local HTTP service");
  ServiceOptions svc;
  std::string serve_kb;
  bool lan = false;
  serve->add_option("--kb", serve_kb)->required();
  serve->add_option("--port", svc.port)->check(CLI::Range(0, 65535));
  serve->add_option("--columns-rate", pipeline.columns_rate, "Spectrogram columns per second")
      ->check(CLI::IsMember({23, 12, 8}));
  serve->add_flag("--lan", lan, "Listen on all interfaces instead of loopback");
  add_admission_options(serve, pipeline.admission);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "esr: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  }

  try {
    if (*features) return cmd_features(feat_wav, pipeline.admission, feat_names, out);
    if (*recognize) return cmd_recognize(rec_wav, rec_kb, rec_env, pipeline, out);
    if (*record) return cmd_record(record_input, record_kb, record_label, record_env, pipeline, out);
    if (*eval) return cmd_eval(eval_kb, eval_folds, eval_algo, eval_curves, eval_seed, eval_reps, eval_env, out);
    if (*synth) return cmd_synth(synth_out, synth_classes, synth_instances, synth_seed, out);
    if (*serve) {
      svc.kb_dir = serve_kb;
      svc.host = lan ? "0.0.0.0" : "127.0.0.1";
      svc.pipeline = pipeline;
      return cmd_serve(std::move(svc), out);
    }
  } catch (const std::exception& e) {
    err << "esr: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace esr
