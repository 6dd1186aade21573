#include "cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "modelctl/attack.hpp"
#include "modelctl/errors.hpp"
#include "modelctl/manifest.hpp"
#include "modelctl/metrics.hpp"
#include "modelctl/report.hpp"
#include "modelctl/toy_data.hpp"
#include "modelctl/toy_model.hpp"

namespace modelctl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bad invocation detected after parsing (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw CorruptFile(path.string() + ": " + e.what());
  }
}

void echo_config(std::ostream& out, const fs::path& dir, const json& config) {
  fs::create_directories(dir);
  write_json(dir / "config.json", config);
  out << config.dump(2) << '\n';
}

struct ModelArgs {
  std::string adapter = "toy";
  std::string model;
};

std::unique_ptr<ModelAdapter> open_model(const ModelArgs& m) {
  if (!fs::exists(m.model)) throw UsageError("model checkpoint not found: " + m.model);
  return make_adapter(m.adapter, m.model);
}

std::unique_ptr<LangDetector> detector_for(const ModelAdapter& adapter) {
  if (adapter.id() == "toy") return std::make_unique<AlphabetDetector>(toy_detector((adapter.vocab_size() - 5) / 2));
  throw UsageError("no language detector available for adapter '" + adapter.id() + "'");
}

Manifest open_manifest(const std::string& path, std::ostream& err) {
  if (!fs::exists(path)) throw UsageError("manifest not found: " + path);
  auto m = load_manifest(path);
  for (const auto& w : m.warnings) err << "warning: " << w << '\n';
  return m;
}

std::vector<ManifestEntry> take(std::vector<ManifestEntry> entries, std::size_t limit) {
  if (limit > 0 && entries.size() > limit) entries.resize(limit);
  return entries;
}

std::vector<AttackUtterance> attack_utterances(const Manifest& m, std::size_t limit) {
  std::vector<AttackUtterance> out;
  for (const auto& e : take(split(m.entries, Split::kTrain), limit)) out.push_back({e.id, m.load_audio(e)});
  return out;
}

// --- synth-data --------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 1000;
  std::uint64_t seed = 7;
  int alphabet = 10;
  int max_lead = -1;
  std::string out;
};

json spec_json(const SyntheticSpec& s) {
  return {{"alphabet_size", s.alphabet_size},   {"chip_length", s.chip_length},
          {"tone_frequencies", s.tone_frequencies}, {"mapping", s.mapping},
          {"noise_std", s.noise_std},           {"tone_amplitude", s.tone_amplitude},
          {"sample_rate", s.sample_rate},       {"min_symbols", s.min_symbols},
          {"max_symbols", s.max_symbols},       {"max_lead_frames", s.max_lead_frames},
          {"max_trail_frames", s.max_trail_frames}, {"train_fraction", s.train_fraction}};
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.n == 0) throw UsageError("--n must be > 0");
  auto spec = default_synthetic_spec(a.alphabet);
  if (a.max_lead >= 0) spec.max_lead_frames = a.max_lead;
  spec.validate();
  const fs::path dir = a.out;
  echo_config(out, dir, {{"command", "synth-data"}, {"n", a.n}, {"seed", a.seed}, {"spec", spec_json(spec)}});
  auto data = generate_synthetic_dataset(spec, a.n, a.seed);
  fs::create_directories(dir / "audio");
  const auto vocab = spec.vocabulary();
  std::vector<ManifestEntry> entries;
  for (const auto& u : data) {
    const std::string rel = "audio/" + u.id + ".wav";
    write_wav(u.audio, dir / rel, WavEncoding::kFloat32);
    entries.push_back({u.id, rel, "xx", vocab.render(u.source), vocab.render(u.target),
                       u.train ? Split::kTrain : Split::kTest});
  }
  write_manifest(entries, dir / "manifest.jsonl");
  out << "wrote " << entries.size() << " utterances (" << split(entries, Split::kTrain).size() << " train, "
      << split(entries, Split::kTest).size() << " test)\n";
  return kExitOk;
}

// --- train-toy ---------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out;
  int alphabet = 10;
  long max_steps = -1;
  std::uint64_t seed = 1234;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  auto m = open_manifest(a.manifest, err);
  ToyModelConfig cfg;
  cfg.alphabet_size = a.alphabet;
  cfg.seed = a.seed;
  if (a.max_steps >= 0) cfg.max_steps = a.max_steps;
  cfg.validate();
  const fs::path dir = a.out;
  echo_config(out, dir, {{"command", "train-toy"}, {"manifest", a.manifest}, {"model", cfg.to_json()}});
  const auto vocab = cfg.vocabulary();
  std::vector<ToyExample> examples;
  for (const auto& e : split(m.entries, Split::kTrain))
    examples.push_back({m.load_audio(e), vocab.parse(e.ref_transcript, false), vocab.parse(e.ref_translation_en, false)});
  if (examples.empty()) throw UsageError("manifest has no train entries");
  auto model = train_toy_model(cfg, examples, [&](const ToyTrainingReport& r) {
    out << "step " << r.steps << " loss " << r.final_loss << " tc " << r.tc_token_accuracy << "/"
        << r.tc_sequence_accuracy << " tl " << r.tl_token_accuracy << "/" << r.tl_sequence_accuracy << '\n';
  });
  save_toy_model(model, dir / "model.bin");
  write_json(dir / "training.json", model.training_report().to_json());
  for (const auto& w : model.training_report().warnings) err << "warning: " << w << '\n';
  return kExitOk;
}

// --- gen-targets -------------------------------------------------------------

struct TargetArgs {
  ModelArgs model;
  std::string manifest;
  std::size_t limit = 0;
  std::string out;
};

int cmd_targets(const TargetArgs& a, std::ostream& out, std::ostream& err) {
  auto m = open_manifest(a.manifest, err);
  auto adapter = open_model(a.model);
  const fs::path dir = a.out;
  echo_config(out, dir,
              {{"command", "gen-targets"}, {"adapter", a.model.adapter}, {"model", a.model.model},
               {"manifest", a.manifest}, {"train_limit", a.limit}});
  auto targets = generate_targets(*adapter, attack_utterances(m, a.limit));
  for (const auto& w : targets.warnings) err << "warning: " << w << '\n';
  write_json(dir / "targets.json", to_json(targets));
  out << "targets: " << targets.entries.size() << " (excluded " << targets.excluded.size() << ")\n";
  return kExitOk;
}

// --- learn-attack ------------------------------------------------------------

struct AttackArgs {
  ModelArgs model;
  std::string manifest;
  std::string targets;
  std::string preset;
  std::optional<double> epsilon;
  std::optional<std::size_t> frames;
  std::optional<long> steps;
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<std::string> init;
  std::optional<double> init_scale;
  std::optional<std::string> reduction;
  std::optional<long> select_every;
  std::optional<std::size_t> select_limit;
  std::optional<long> checkpoint_every;
  std::uint64_t seed = 0;
  std::size_t limit = 0;
  bool deterministic = true;
  std::string out;
};

AttackConfig resolve_attack(const AttackArgs& a, int sample_rate) {
  AttackConfig c;
  if (!a.preset.empty()) {
    if (a.epsilon || a.frames) throw UsageError("--preset cannot be combined with --epsilon/--frames");
    try {
      c = AttackConfig::from_preset(parse_preset(a.preset), sample_rate);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  } else {
    if (!a.epsilon || !a.frames) throw UsageError("give --preset or both --epsilon and --frames");
    c.sample_rate = sample_rate;
    c.epsilon = *a.epsilon;
    c.segment_frames = *a.frames;
  }
  c.seed = a.seed;
  if (a.steps) c.steps = *a.steps;
  if (a.lr) c.learning_rate = *a.lr;
  if (a.batch) c.batch_size = *a.batch;
  if (a.init) c.init = *a.init == "zeros" ? SegmentInit::kZeros : SegmentInit::kUniform;
  if (a.init_scale) c.init_scale = *a.init_scale;
  if (a.reduction) c.reduction = *a.reduction == "per_token" ? LossReduction::kPerToken : LossReduction::kPerUtterance;
  if (a.select_every) c.select_every = *a.select_every;
  if (a.select_limit) c.select_limit = *a.select_limit;
  if (a.checkpoint_every) c.checkpoint_every = *a.checkpoint_every;
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return c;
}

int cmd_attack(const AttackArgs& a, std::ostream& out, std::ostream& err) {
  auto m = open_manifest(a.manifest, err);
  auto adapter = open_model(a.model);
  const auto config = resolve_attack(a, adapter->sample_rate());
  const fs::path dir = a.out;
  json echo = {{"command", "learn-attack"},      {"adapter", a.model.adapter},
               {"model", a.model.model},         {"manifest", a.manifest},
               {"targets", a.targets},           {"train_limit", a.limit},
               {"deterministic", a.deterministic}, {"attack", config.to_json()}};
  echo_config(out, dir, echo);

  auto trainset = attack_utterances(m, a.limit);
  TargetSet targets;
  if (!a.targets.empty()) {
    targets = targets_from_json(read_json(a.targets));
  } else {
    targets = generate_targets(*adapter, trainset);
    write_json(dir / "targets.json", to_json(targets));
  }
  for (const auto& w : targets.warnings) err << "warning: " << w << '\n';

  TrainOptions opts;
  opts.checkpoint_dir = dir;
  opts.model_id = a.model.adapter + ":" + fs::path(a.model.model).filename().string();
  opts.source_lang = adapter->language();
  opts.on_select = [&](const SelectionPoint& s) {
    out << "step " << s.step << " train_mean_nll " << s.train_mean_nll << '\n';
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto result = train_universal_segment(*adapter, config, trainset, targets, opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_segment(result.segment, dir / "segment");
  result.trace.segment_path = (dir / "segment").string();
  write_trace(result.trace, dir);
  echo["summary"] = {{"best_step", result.trace.best_step},
                     {"steps_run", static_cast<long>(result.trace.rows.size())},
                     {"segment", result.trace.segment_path},
                     {"linf", linf_norm(result.segment.samples)},
                     {"targets", targets.entries.size()},
                     {"excluded", targets.excluded},
                     {"seconds", seconds}};
  write_json(dir / "summary.json", echo);
  out << "segment written to " << result.trace.segment_path << " (best step " << result.trace.best_step << ")\n";
  return kExitOk;
}

// --- evaluate ----------------------------------------------------------------

struct EvalArgs {
  ModelArgs model;
  std::string manifest;
  std::string segment;
  std::string mode = "tc";
  std::string label;
  std::size_t limit = 0;
  std::string out;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  TaskTag mode;
  try {
    mode = parse_task(a.mode);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  std::optional<AdversarialSegment> segment;
  if (!a.segment.empty()) {
    if (!fs::exists(segment_payload_path(a.segment)) || !fs::exists(segment_sidecar_path(a.segment)))
      throw UsageError("segment not found: " + a.segment);
    segment = load_segment(a.segment);
  }
  auto m = open_manifest(a.manifest, err);
  auto adapter = open_model(a.model);
  auto detector = detector_for(*adapter);
  const std::string label = !a.label.empty() ? a.label : (segment ? "Attack" : "No Attack");
  const fs::path dir = a.out;
  echo_config(out, dir,
              {{"command", "evaluate"}, {"adapter", a.model.adapter}, {"model", a.model.model},
               {"manifest", a.manifest}, {"segment", a.segment}, {"mode", to_string(mode)},
               {"label", label}, {"test_limit", a.limit}, {"split", "test"}});

  std::vector<EvalUtterance> testset;
  for (const auto& e : take(split(m.entries, Split::kTest), a.limit))
    testset.push_back({e.id, m.load_audio(e), e.ref_translation_en});
  if (testset.empty()) throw UsageError("manifest has no test entries");
  auto res = evaluate_testset(*adapter, segment ? &*segment : nullptr, testset, mode, *detector);
  write_records(res.records, dir / "records.jsonl");
  std::ofstream csv(dir / "aggregate.csv", std::ios::binary);
  csv << aggregate_csv_header() << '\n' << aggregate_csv_row(res.aggregate, label) << '\n';
  out << aggregate_csv_header() << '\n' << aggregate_csv_row(res.aggregate, label) << '\n';
  return kExitOk;
}

// --- report ------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string tl_reference;
  std::string wer_fixture;
  std::string aggregate_fixture;
  std::string out;
};

ReportRun load_run(const fs::path& dir) {
  for (const char* f : {"config.json", "records.jsonl"})
    if (!fs::exists(dir / f)) throw UsageError("missing " + (dir / f).string());
  auto cfg = read_json(dir / "config.json");
  ReportRun run;
  run.label = cfg.value("label", dir.filename().string());
  run.mode = cfg.value("mode", std::string("tc"));
  run.attacked = !cfg.value("segment", std::string()).empty();
  run.records = read_records(dir / "records.jsonl");
  return run;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  ReportInputs in;
  std::vector<std::string> missing;
  auto need = [&](const std::string& p) {
    if (!p.empty() && !fs::exists(p)) missing.push_back(p);
  };
  for (const auto& r : a.runs) need(r);
  need(a.tl_reference);
  need(a.wer_fixture);
  need(a.aggregate_fixture);
  if (!missing.empty()) {
    std::string msg = "missing inputs:";
    for (const auto& p : missing) msg += " " + p;
    throw UsageError(msg);
  }
  for (const auto& r : a.runs) in.runs.push_back(load_run(r));
  if (!a.tl_reference.empty()) in.tl_reference = load_run(a.tl_reference);
  if (!a.wer_fixture.empty()) in.wer_fixture = wer_rows_from_json(read_json(a.wer_fixture));
  if (!a.aggregate_fixture.empty()) in.aggregate_fixture = read_aggregate_csv(a.aggregate_fixture);
  const fs::path dir = a.out;
  echo_config(out, dir,
              {{"command", "report"}, {"runs", a.runs}, {"tl_reference", a.tl_reference},
               {"wer_fixture", a.wer_fixture}, {"aggregate_fixture", a.aggregate_fixture}});
  auto res = write_report(in, dir);
  for (const auto& r : res.wer_rows)
    out << "wer " << r.label << " ins " << r.ins << " del " << r.del << " sub " << r.sub << " total " << r.wer
        << " residual " << r.residual() << '\n';
  for (const auto& b : res.bimodality)
    out << "bimodality " << b.label << " mass_low " << b.summary.mass_low << " mass_mid " << b.summary.mass_mid
        << " mass_high " << b.summary.mass_high << '\n';
  out << "report written to " << (dir / "report.md").string() << '\n';
  return kExitOk;
}

void add_model_options(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--adapter", m.adapter, "Adapter id")->capture_default_str();
  sub->add_option("--model", m.model, "Model checkpoint")->required();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Universal prepend attack toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Generate the synthetic tone dataset and manifest");
  s->add_option("--n", synth.n, "Number of utterances")->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--alphabet", synth.alphabet)->capture_default_str();
  s->add_option("--max-lead", synth.max_lead, "Max leading silence in frames");
  s->add_option("--out", synth.out)->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train-toy", "Train the toy multi-task model on the train split");
  t->add_option("--manifest", train.manifest)->required();
  t->add_option("--alphabet", train.alphabet)->capture_default_str();
  t->add_option("--max-steps", train.max_steps);
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--out", train.out)->required();

  TargetArgs targ;
  auto* g = app.add_subcommand("gen-targets", "Decode clean train audio in translate mode");
  add_model_options(g, targ.model);
  g->add_option("--manifest", targ.manifest)->required();
  g->add_option("--train-limit", targ.limit, "Use only the first N train entries (0 = all)");
  g->add_option("--out", targ.out)->required();

  AttackArgs atk;
  auto* l = app.add_subcommand("learn-attack", "Learn a universal prepended segment");
  add_model_options(l, atk.model);
  l->add_option("--manifest", atk.manifest)->required();
  l->add_option("--targets", atk.targets, "targets.json from gen-targets");
  l->add_option("--preset", atk.preset)->check(CLI::IsMember({"weak", "mid", "strong"}));
  l->add_option("--epsilon", atk.epsilon);
  l->add_option("--frames", atk.frames);
  l->add_option("--steps", atk.steps);
  l->add_option("--lr", atk.lr);
  l->add_option("--batch", atk.batch);
  l->add_option("--init", atk.init)->check(CLI::IsMember({"zeros", "uniform"}));
  l->add_option("--init-scale", atk.init_scale, "Uniform init range as a fraction of epsilon");
  l->add_option("--reduction", atk.reduction)->check(CLI::IsMember({"per_utterance", "per_token"}));
  l->add_option("--select-every", atk.select_every);
  l->add_option("--select-limit", atk.select_limit);
  l->add_option("--checkpoint-every", atk.checkpoint_every);
  l->add_option("--seed", atk.seed)->capture_default_str();
  l->add_option("--train-limit", atk.limit, "Use only the first N train entries (0 = all)");
  l->add_flag("--deterministic,!--no-deterministic", atk.deterministic)->capture_default_str();
  l->add_option("--out", atk.out)->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score the test split, optionally with a segment prepended");
  add_model_options(e, ev.model);
  e->add_option("--manifest", ev.manifest)->required();
  e->add_option("--segment", ev.segment);
  e->add_option("--mode", ev.mode)->check(CLI::IsMember({"tc", "tl"}))->capture_default_str();
  e->add_option("--label", ev.label);
  e->add_option("--test-limit", ev.limit, "Use only the first N test entries (0 = all)");
  e->add_option("--out", ev.out)->required();

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Render tables, curves and histograms from evaluate outputs");
  r->add_option("--run", rep.runs, "evaluate output directory (repeatable)");
  r->add_option("--tl-reference", rep.tl_reference, "Unattacked tl evaluate directory");
  r->add_option("--wer-fixture", rep.wer_fixture, "JSON rows {label, ins, del, sub, wer}");
  r->add_option("--aggregate-fixture", rep.aggregate_fixture, "Aggregate CSV rows to include");
  r->add_option("--out", rep.out)->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << '\n';
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out, err);
    if (g->parsed()) return cmd_targets(targ, out, err);
    if (l->parsed()) return cmd_attack(atk, out, err);
    if (e->parsed()) return cmd_evaluate(ev, out, err);
    if (r->parsed()) return cmd_report(rep, out);
  } catch (const UsageError& ue) {
    err << "error: " << ue.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace modelctl::cli
