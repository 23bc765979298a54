// Copyright 2026 The lungvit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lungvit/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "lungvit/checkpoint.hpp"
#include "lungvit/common.hpp"
#include "lungvit/config.hpp"
#include "lungvit/pipeline.hpp"
#include "lungvit/synth.hpp"

namespace lungvit {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFooter =
    "Exit codes:\n"
    "  0  success\n"
    "  1  usage or configuration error (bad flag, unknown config field, contract violation)\n"
    "  2  data error (missing or corrupt file, checkpoint mismatch, undefined metric);\n"
    "     prepare and predict also return 2 when some inputs were skipped\n"
    "  3  numeric failure (non-finite training loss)\n";

std::string num(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// Options shared by every command that reads a run configuration.
struct ConfigArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string manifest, root, index, output, preset, cache_dir;
  int epochs = 0;
  std::uint64_t seed = 0;
  double target_s = 0;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* target_opt = nullptr;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.config, "JSON run configuration");
  cmd->add_option("--set", a.sets, "Override a config field, e.g. --set train.epochs=20 (repeatable)")
      ->allow_extra_args(false);
  cmd->add_option("--manifest", a.manifest, "Shorthand for data.manifest");
  cmd->add_option("--root", a.root, "Shorthand for data.root");
  cmd->add_option("--index", a.index, "Shorthand for data.index");
  cmd->add_option("--cache-dir", a.cache_dir, "Shorthand for data.cache_dir");
  cmd->add_option("-o,--output", a.output, "Shorthand for output_dir");
  cmd->add_option("--preset", a.preset, "Model preset (paper, toy); replaces any model fields in the file");
  a.epochs_opt = cmd->add_option("--epochs", a.epochs, "Shorthand for train.epochs");
  a.seed_opt = cmd->add_option("--seed", a.seed, "Shorthand for train.seed");
  a.target_opt = cmd->add_option("--target-s", a.target_s, "Shorthand for audio.target_s");
}

RunConfig resolve_config(const ConfigArgs& a) {
  Json j = Json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot open config " + a.config);
    j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config " + a.config + " is not valid JSON");
  }
  if (!a.preset.empty()) j["model"] = Json{{"preset", a.preset}};
  if (!a.manifest.empty()) j["data"]["manifest"] = a.manifest;
  if (!a.root.empty()) j["data"]["root"] = a.root;
  if (!a.index.empty()) j["data"]["index"] = a.index;
  if (!a.cache_dir.empty()) j["data"]["cache_dir"] = a.cache_dir;
  if (!a.output.empty()) j["output_dir"] = a.output;
  if (a.epochs_opt->count()) j["train"]["epochs"] = a.epochs;
  if (a.seed_opt->count()) j["train"]["seed"] = a.seed;
  if (a.target_opt->count()) j["audio"]["target_s"] = a.target_s;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_override(j, std::string_view(s).substr(0, eq), std::string_view(s).substr(eq + 1));
  }
  RunConfig rc = run_config_from_json(j);
  rc.resolve();
  if (rc.index.empty()) rc.index = (fs::path(rc.output_dir) / "index.jsonl").string();
  return rc;
}

std::vector<CycleRecord> read_index(const RunConfig& rc) {
  if (!fs::exists(rc.index)) throw IoError("cycle index " + rc.index + " not found; run `lungvit prepare` first");
  return read_cycle_index(rc.index);
}

SplitSpec split_of(const RunConfig& rc, std::span<const CycleRecord> records) {
  return build_subject_independent_split(index_patients(records), rc.split_ratio, rc.split_seed);
}

// Fixed-start spectrogram, from the cache when one is configured.
Tensor eval_spectrogram(const Instance& inst, const FeatureExtractor& fx, const FixDurationPolicy& policy,
                        const FeatureCache* cache) {
  if (cache) {
    if (auto hit = cache->load(inst.id)) return std::move(*hit);
  }
  FixDurationPolicy fixed = policy;
  fixed.mode = CropMode::kFixedStart;
  return featurize(inst, fx, fixed);
}

ConfusionMatrix evaluate_instances(std::span<const Instance> instances, const FeatureConfig& fcfg,
                                   const FixDurationPolicy& policy, const NormStats& norm, const ModelParams& params,
                                   const ModelConfig& mcfg, const FeatureCache* cache) {
  const FeatureExtractor fx(fcfg);
  ConfusionMatrix cm;
  for (const auto& inst : instances) {
    const Example ex{normalize(eval_spectrogram(inst, fx, policy, cache), norm), inst.label, inst.patient};
    cm.merge(evaluate(std::span(&ex, 1), params, mcfg));
  }
  return cm;
}

void print_report(std::ostream& out, const MetricsReport& r) {
  out << "sensitivity " << num(r.sensitivity) << '\n'
      << "specificity " << num(r.specificity) << '\n'
      << "score " << num(r.score) << '\n'
      << "uar " << num(r.rates.uar) << '\n'
      << "macro_precision " << num(r.rates.macro_precision) << '\n'
      << "count " << r.total << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
  }
  fs::rename(tmp, path);
}

Json checkpoint_meta(const RunConfig& rc, int epoch) {
  return Json{{"epoch", epoch}, {"target_s", rc.target_s}, {"eval_start_s", rc.eval_start_s}};
}

// ---- commands

int cmd_synth(const std::string& out_dir, const SynthConfig& cfg, std::ostream& out) {
  const SynthCorpus c = generate_synthetic_corpus(out_dir, cfg);
  out << "wrote " << c.recordings << " recordings, " << c.cycles << " cycles\n"
      << "manifest " << c.manifest.generic_string() << '\n';
  return 0;
}

int cmd_prepare(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.manifest.empty()) throw ConfigError("data.manifest is not set");
  const PreparedIndex idx = prepare_index(read_manifest(rc.manifest, rc.data_root));
  if (const auto parent = fs::path(rc.index).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_cycle_index(rc.index, idx.records);

  const CorpusStatistics stats = index_statistics(idx.records);
  out << "index " << rc.index << '\n'
      << "recordings " << idx.recordings << " (skipped " << idx.skipped.size() << ")\n"
      << "cycles " << stats.count << '\n'
      << "patients " << stats.patients << '\n';
  out << "classes";
  for (int c = 0; c < kNumClasses; ++c) {
    out << ' ' << class_name(static_cast<RespiratoryClass>(c)) << '=' << stats.per_class[static_cast<std::size_t>(c)];
  }
  out << '\n';
  if (stats.mean_duration_s) {
    out << "duration_s min " << num(*stats.min_duration_s, "%.3f") << " mean " << num(*stats.mean_duration_s, "%.3f")
        << " max " << num(*stats.max_duration_s, "%.3f") << '\n';
  }
  std::map<int, std::array<std::size_t, kNumClasses>> per_patient;
  for (const auto& r : idx.records) ++per_patient[r.patient][static_cast<std::size_t>(r.label)];
  for (const auto& [patient, counts] : per_patient) {
    out << "patient " << patient;
    for (int c = 0; c < kNumClasses; ++c) {
      out << ' ' << class_name(static_cast<RespiratoryClass>(c)) << '=' << counts[static_cast<std::size_t>(c)];
    }
    out << '\n';
  }
  for (const auto& s : idx.skipped) err << "skipped " << s.path << ": " << s.reason << '\n';
  return idx.skipped.empty() ? 0 : static_cast<int>(ExitCode::kData);
}

int cmd_featurize(const RunConfig& rc, std::ostream& out) {
  if (rc.cache_dir.empty()) throw ConfigError("data.cache_dir is not set");
  const auto records = read_index(rc);
  const FeatureCache cache(rc.cache_dir, feature_hash(rc));
  const FeatureExtractor fx(rc.features);
  std::size_t stored = 0, present = 0;
  for (const auto& inst : load_instances(records, rc.features.sample_rate_hz)) {
    if (cache.load(inst.id)) {
      ++present;
      continue;
    }
    cache.store(inst.id, eval_spectrogram(inst, fx, rc.duration_policy(), nullptr));
    ++stored;
  }
  out << "cached " << stored << " spectrograms (" << present << " already present) in " << rc.cache_dir << '\n';
  return 0;
}

int cmd_train(const RunConfig& rc, bool resume, std::ostream& out) {
  const fs::path dir = rc.output_dir;
  fs::create_directories(dir / "checkpoints");
  save_run_config(dir / "config.json", rc);

  const auto records = read_index(rc);
  if (records.empty()) throw IoError("cycle index " + rc.index + " is empty");
  const SplitSpec split = split_of(rc, records);
  write_text(dir / "split.json", Json{{"ratio", to_string(split.ratio)},
                                      {"seed", split.seed},
                                      {"train_patients", split.train_patients},
                                      {"eval_patients", split.eval_patients}}
                                     .dump(2) +
                                     "\n");
  const int rate = rc.features.sample_rate_hz;
  const auto train_set = load_instances(records, rate, [&](const CycleRecord& r) { return !split.is_eval(r.patient); });
  const auto eval_set = load_instances(records, rate, [&](const CycleRecord& r) { return split.is_eval(r.patient); });
  out << "train " << train_set.size() << " cycles from " << split.train_patients.size() << " patients, eval "
      << eval_set.size() << " cycles from " << split.eval_patients.size() << " patients\n";

  const fs::path state_path = dir / "checkpoints" / "run_state.lvck";
  std::optional<RunState> previous;
  if (resume && fs::exists(state_path)) {
    previous = load_run_state(state_path, rc.model);
    out << "resuming after epoch " << previous->epoch << '\n';
  }

  auto save_model = [&](const fs::path& path, const ModelParams& params, const NormStats& norm, int epoch) {
    save_checkpoint(path, Checkpoint{rc.model, rc.features, norm, params, checkpoint_meta(rc, epoch)});
  };
  TrainHooks hooks;
  hooks.on_epoch = [&](const RunState& s) {
    const EpochRecord& r = s.history.back();
    out << "epoch " << r.epoch << '/' << rc.train.epochs << " loss " << num(r.loss, "%.6f");
    if (r.score) out << " score " << num(*r.score, "%.4f");
    if (r.uar) out << " uar " << num(*r.uar, "%.4f");
    out << std::endl;
    write_text(dir / "history.csv", format_history_csv(s.history));
    save_run_state(state_path, s, rc.model);
    save_model(dir / "checkpoints" / "last.lvck", s.params, s.norm, s.epoch);
    if (s.best_score && s.best_epoch == s.epoch) save_model(dir / "checkpoints" / "best.lvck", s.params, s.norm, s.epoch);
  };
  const TrainResult result = train(train_set, eval_set, split, rc.model, rc.features, rc.duration_policy(), rc.train,
                                   hooks, std::move(previous));
  const RunState& s = result.state;
  write_text(dir / "history.csv", format_history_csv(s.history));
  save_model(dir / "checkpoints" / "last.lvck", s.params, s.norm, s.epoch);

  if (!eval_set.empty() && s.epoch > 0) {
    const ConfusionMatrix cm = evaluate_instances(eval_set, rc.features, rc.duration_policy(), s.norm, s.params,
                                                  rc.model, nullptr);
    try {
      const MetricsReport report = make_report(cm);
      emit_report(report, cm, dir / "report");
      out << "final evaluation (" << cm.total() << " cycles)\n";
      print_report(out, report);
    } catch (const UndefinedMetricError& e) {
      warn(std::string("final report skipped: ") + e.what());
    }
  }
  if (s.best_score) out << "best score " << num(*s.best_score, "%.4f") << " at epoch " << s.best_epoch << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const std::string& checkpoint, const std::string& subset,
                 const std::string& out_dir, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint, &rc.model);
  if (!(ck.features == rc.features)) {
    throw ConfigError("checkpoint " + checkpoint + " was trained with different feature settings");
  }
  const auto records = read_index(rc);
  std::function<bool(const CycleRecord&)> keep = [](const CycleRecord&) { return true; };
  if (!records.empty() && subset != "all") {
    const SplitSpec split = split_of(rc, records);
    const bool want_eval = subset == "eval";
    keep = [split, want_eval](const CycleRecord& r) { return split.is_eval(r.patient) == want_eval; };
  }
  const auto instances = load_instances(records, rc.features.sample_rate_hz, keep);
  std::optional<FeatureCache> cache;
  if (!rc.cache_dir.empty()) cache.emplace(rc.cache_dir, feature_hash(rc));
  const ConfusionMatrix cm = evaluate_instances(instances, rc.features, rc.duration_policy(), ck.norm, ck.params,
                                                rc.model, cache ? &*cache : nullptr);
  const MetricsReport report = make_report(cm);
  const fs::path dir = out_dir.empty() ? fs::path(rc.output_dir) / "evaluation" : fs::path(out_dir);
  emit_report(report, cm, dir);
  out << "evaluated " << cm.total() << " cycles (" << subset << ") into " << dir.generic_string() << '\n';
  print_report(out, report);
  return 0;
}

std::pair<double, double> parse_cycle(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("--cycle expects START:END in seconds, got '" + text + "'");
  try {
    std::size_t used_a = 0, used_b = 0;
    const double a = std::stod(text.substr(0, colon), &used_a);
    const double b = std::stod(text.substr(colon + 1), &used_b);
    if (used_a != colon || used_b != text.size() - colon - 1 || !(a >= 0) || !(b > a)) throw std::invalid_argument("");
    return {a, b};
  } catch (const std::exception&) {
    throw ConfigError("--cycle expects START:END with 0 <= START < END, got '" + text + "'");
  }
}

int cmd_predict(const std::string& checkpoint, const std::vector<std::string>& wavs,
                const std::vector<std::string>& cycle_args, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const FeatureConfig fcfg = resolve(ck.features);
  const FeatureExtractor fx(fcfg);
  FixDurationPolicy policy;
  policy.mode = CropMode::kFixedStart;
  policy.target_s = ck.meta.value("target_s", static_cast<double>(ck.model.frames) * fcfg.hop_ms / 1000.0);
  policy.fixed_start_s = ck.meta.value("eval_start_s", 0.0);
  std::vector<std::pair<double, double>> cycles;
  for (const auto& c : cycle_args) cycles.push_back(parse_cycle(c));

  std::size_t failures = 0;
  for (const auto& wav : wavs) {
    try {
      const Waveform audio = resample(read_wav(wav), fcfg.sample_rate_hz);
      auto spans = cycles;
      if (spans.empty()) spans.emplace_back(0.0, audio.duration_s());
      for (const auto& [start, end] : spans) {
        Instance inst{slice_cycle(audio, CycleAnnotation{start, end, false, false}), 0, 0, wav};
        const Tensor spec = normalize(featurize(inst, fx, policy), ck.norm);
        const Logits logits = infer(spec, ck.params, ck.model);
        const auto probs = class_probabilities(logits.final.data());
        out << wav << '\t' << num(start, "%.3f") << '\t' << num(end, "%.3f") << '\t'
            << class_name(static_cast<RespiratoryClass>(predict(logits.final.data())));
        for (double p : probs) out << '\t' << num(p, "%.4f");
        out << '\n';
      }
    } catch (const Error& e) {
      err << "error: " << wav << ": " << e.what() << '\n';
      ++failures;
    }
  }
  return failures == 0 ? 0 : static_cast<int>(ExitCode::kData);
}

int cmd_report(const std::string& confusion, const std::string& out_dir, std::ostream& out) {
  const ConfusionMatrix cm = read_confusion_csv(confusion);
  const MetricsReport report = make_report(cm);
  emit_report(report, cm, out_dir);
  print_report(out, report);
  out << table_row(report) << '\n';
  return 0;
}

}  // namespace

std::string format_history_csv(std::span<const EpochRecord> history) {
  std::string s = "epoch,loss,sensitivity,specificity,score,uar\n";
  auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  for (const auto& r : history) {
    s += std::to_string(r.epoch) + ',' + num(r.loss) + ',' + opt(r.sensitivity) + ',' + opt(r.specificity) + ',' +
         opt(r.score) + ',' + opt(r.uar) + '\n';
  }
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Respiratory sound classification with an audio spectrogram vision transformer.", "lungvit"};
  app.footer(kFooter);
  app.require_subcommand(1);

  SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic four-class corpus with a manifest");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--patients", synth_cfg.patients, "Synthetic patients")->capture_default_str();
  synth->add_option("--cycles-per-class", synth_cfg.cycles_per_class, "Cycles of each class per patient")
      ->capture_default_str();
  synth->add_option("--recordings-per-patient", synth_cfg.recordings_per_patient, "Recordings per patient")
      ->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Generator seed")->capture_default_str();

  ConfigArgs prep_args, feat_args, train_args, eval_args;
  auto* prepare = app.add_subcommand("prepare", "Parse the manifest into a cycle index and print a corpus summary");
  add_config_options(prepare, prep_args);
  auto* featurize_cmd = app.add_subcommand("featurize", "Warm the feature cache with fixed-start spectrograms");
  add_config_options(featurize_cmd, feat_args);

  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes config.json, history.csv, checkpoints/ and report/");
  add_config_options(train_cmd, train_args);
  train_cmd->add_flag("--resume", resume, "Continue from checkpoints/run_state.lvck when present");

  std::string eval_ckpt, eval_subset = "eval", eval_out;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on the indexed cycles (fixed-start crops)");
  add_config_options(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Model checkpoint (.lvck)")->required();
  eval_cmd->add_option("--subset", eval_subset, "Which split side to score")
      ->check(CLI::IsMember({"eval", "train", "all"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report directory (default <output_dir>/evaluation)");

  std::string pred_ckpt;
  std::vector<std::string> pred_wavs, pred_cycles;
  auto* predict_cmd = app.add_subcommand(
      "predict", "Classify cycles of WAV files; prints path, start, end, label and four class probabilities");
  predict_cmd->add_option("--checkpoint", pred_ckpt, "Model checkpoint (.lvck)")->required();
  predict_cmd->add_option("--cycle", pred_cycles, "START:END in seconds (repeatable; default: whole file)")
      ->allow_extra_args(false);
  predict_cmd->add_option("wav", pred_wavs, "WAV files")->required();

  std::string rep_confusion, rep_out;
  auto* report_cmd = app.add_subcommand("report", "Recompute metrics and figures from a confusion.csv");
  report_cmd->add_option("--confusion", rep_confusion, "confusion.csv written by evaluate or train")->required();
  report_cmd->add_option("--out", rep_out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (app.got_subcommand(synth)) return cmd_synth(synth_out, synth_cfg, out);
    if (app.got_subcommand(prepare)) return cmd_prepare(resolve_config(prep_args), out, err);
    if (app.got_subcommand(featurize_cmd)) return cmd_featurize(resolve_config(feat_args), out);
    if (app.got_subcommand(train_cmd)) return cmd_train(resolve_config(train_args), resume, out);
    if (app.got_subcommand(eval_cmd)) {
      return cmd_evaluate(resolve_config(eval_args), eval_ckpt, eval_subset, eval_out, out);
    }
    if (app.got_subcommand(predict_cmd)) return cmd_predict(pred_ckpt, pred_wavs, pred_cycles, out, err);
    if (app.got_subcommand(report_cmd)) return cmd_report(rep_confusion, rep_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(exit_code_for(e));
  }
  return static_cast<int>(ExitCode::kUsage);
}

}  // namespace lungvit
