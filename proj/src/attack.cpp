#include "modelctl/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include "modelctl/errors.hpp"

namespace modelctl {

using nlohmann::json;

std::string_view to_string(AttackPreset preset) noexcept {
  switch (preset) {
    case AttackPreset::kWeak: return "weak";
    case AttackPreset::kMid: return "mid";
    case AttackPreset::kStrong: return "strong";
  }
  return "?";
}

AttackPreset parse_preset(std::string_view text) {
  if (text == "weak") return AttackPreset::kWeak;
  if (text == "mid") return AttackPreset::kMid;
  if (text == "strong") return AttackPreset::kStrong;
  throw InvalidArgument("unknown preset '" + std::string(text) + "'");
}

namespace {

std::string_view init_name(SegmentInit init) {
  return init == SegmentInit::kZeros ? "zeros" : "uniform";
}

std::string_view reduction_name(LossReduction r) {
  return r == LossReduction::kPerUtterance ? "per_utterance" : "per_token";
}

}  // namespace

AttackConfig AttackConfig::from_preset(AttackPreset preset, int sample_rate) {
  AttackConfig c;
  c.sample_rate = sample_rate;
  c.preset = preset;
  // Durations are 0.64 s and 5.12 s; at 16 kHz that is 10240 / 81920 frames.
  switch (preset) {
    case AttackPreset::kWeak:
      c.epsilon = 0.02;
      c.segment_frames = static_cast<std::size_t>(std::lround(0.64 * sample_rate));
      break;
    case AttackPreset::kMid:
      c.epsilon = 0.2;
      c.segment_frames = static_cast<std::size_t>(std::lround(0.64 * sample_rate));
      break;
    case AttackPreset::kStrong:
      c.epsilon = 2.0;
      c.segment_frames = static_cast<std::size_t>(std::lround(5.12 * sample_rate));
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be finite and >= 0");
  if (segment_frames == 0) throw InvalidArgument("segment_frames must be > 0");
  if (sample_rate <= 0) throw InvalidArgument("sample_rate must be > 0");
  if (steps < 0) throw InvalidArgument("steps must be >= 0");
  if (batch_size <= 0) throw InvalidArgument("batch_size must be > 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be finite and >= 0");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw InvalidArgument("init_scale must be finite and >= 0");
  if (select_every <= 0) throw InvalidArgument("select_every must be > 0");
  if (checkpoint_every < 0) throw InvalidArgument("checkpoint_every must be >= 0");
}

json AttackConfig::to_json() const {
  json j;
  j["epsilon"] = epsilon;
  j["segment_frames"] = segment_frames;
  j["sample_rate"] = sample_rate;
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["init"] = init_name(init);
  j["init_scale"] = init_scale;
  j["seed"] = seed;
  j["reduction"] = reduction_name(reduction);
  j["preset"] = preset ? json(to_string(*preset)) : json(nullptr);
  j["select_every"] = select_every;
  j["select_limit"] = select_limit;
  j["checkpoint_every"] = checkpoint_every;
  return j;
}

AttackConfig AttackConfig::from_json(const json& j) {
  try {
    AttackConfig c;
    c.epsilon = j.at("epsilon").get<double>();
    c.segment_frames = j.at("segment_frames").get<std::size_t>();
    c.sample_rate = j.value("sample_rate", kDefaultSampleRate);
    c.steps = j.at("steps").get<long>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    auto init = j.value("init", std::string("uniform"));
    if (init == "zeros") c.init = SegmentInit::kZeros;
    else if (init == "uniform") c.init = SegmentInit::kUniform;
    else throw InvalidArgument("unknown init '" + init + "'");
    c.init_scale = j.value("init_scale", 0.1);
    c.seed = j.value("seed", std::uint64_t{0});
    auto red = j.value("reduction", std::string("per_utterance"));
    if (red == "per_utterance") c.reduction = LossReduction::kPerUtterance;
    else if (red == "per_token") c.reduction = LossReduction::kPerToken;
    else throw InvalidArgument("unknown reduction '" + red + "'");
    if (j.contains("preset") && !j["preset"].is_null()) c.preset = parse_preset(j["preset"].get<std::string>());
    c.select_every = j.value("select_every", 50L);
    c.select_limit = j.value("select_limit", std::size_t{0});
    c.checkpoint_every = j.value("checkpoint_every", 0L);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("attack config: ") + e.what());
  }
}

const TargetEntry* TargetSet::find(std::string_view id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

TargetSet generate_targets(const ModelAdapter& adapter, const std::vector<AttackUtterance>& trainset) {
  TargetSet out;
  if (trainset.empty()) {
    out.warnings.push_back("empty training set; no targets generated");
    return out;
  }
  for (const auto& u : trainset) {
    try {
      auto d = adapter.decode(u.audio, TaskTag::kTranslate);
      out.entries.push_back({u.id, d.sequence, adapter.detokenize(d.sequence)});
    } catch (const Error& e) {
      out.excluded.push_back(u.id);
      out.warnings.push_back("excluded " + u.id + ": " + e.what());
    }
  }
  return out;
}

json to_json(const TargetSet& targets) {
  json entries = json::array();
  for (const auto& e : targets.entries)
    entries.push_back({{"id", e.id}, {"tokens", e.tokens.tokens}, {"text", e.text}});
  return {{"entries", entries}, {"excluded", targets.excluded}, {"warnings", targets.warnings}};
}

TargetSet targets_from_json(const json& j) {
  try {
    TargetSet t;
    for (const auto& e : j.at("entries"))
      t.entries.push_back({e.at("id").get<std::string>(),
                           TokenSequence{e.at("tokens").get<std::vector<int>>()},
                           e.value("text", std::string())});
    t.excluded = j.value("excluded", std::vector<std::string>{});
    t.warnings = j.value("warnings", std::vector<std::string>{});
    return t;
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("targets: ") + e.what());
  }
}

BatchGradient batch_gradient(const ModelAdapter& adapter, const AdversarialSegment& segment,
                             std::span<const BatchItem> batch, LossReduction reduction) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const std::size_t T = segment.frames();
  BatchGradient out;
  out.grad.assign(T, 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& item : batch) {
    auto r = adapter.teacher_forced_nll(prepend(segment, item.utterance->audio), item.target->tokens,
                                        TaskTag::kTranscribe);
    double w = inv_b;
    if (reduction == LossReduction::kPerToken)
      w /= static_cast<double>(std::max<std::size_t>(1, item.target->tokens.size()));
    out.mean_nll += w * r.nll;
    for (std::size_t i = 0; i < T; ++i) out.grad[i] += w * r.grad[i];
  }
  return out;
}

SegmentOptimizer::SegmentOptimizer(std::size_t frames, double learning_rate)
    : learning_rate_(learning_rate), m_(frames, 0.0), v_(frames, 0.0) {}

void SegmentOptimizer::apply(AdversarialSegment& segment, std::span<const double> grad) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (grad.size() != segment.frames() || m_.size() != segment.frames())
    throw InvalidArgument("gradient size does not match segment");
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    const double upd = learning_rate_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    segment.samples[i] = static_cast<float>(segment.samples[i] - upd);
  }
  project_linf_inplace(segment.samples, segment.epsilon);
}

StepOutcome attack_step(const ModelAdapter& adapter, AdversarialSegment& segment,
                        std::span<const BatchItem> batch, SegmentOptimizer& optimizer, long step,
                        LossReduction reduction) {
  segment.validate();
  auto g = batch_gradient(adapter, segment, batch, reduction);
  if (!std::isfinite(g.mean_nll)) throw StepFailure("non-finite loss", step);
  for (double x : g.grad)
    if (!std::isfinite(x)) throw StepFailure("non-finite gradient", step);
  optimizer.apply(segment, g.grad);
  StepOutcome out;
  out.mean_nll = g.mean_nll;
  out.linf = linf_norm(segment.samples);
  if (out.linf > segment.epsilon) throw ConstraintViolation("segment left the epsilon ball");
  return out;
}

AdversarialSegment initial_segment(const AttackConfig& config) {
  config.validate();
  AdversarialSegment seg;
  seg.sample_rate = config.sample_rate;
  seg.epsilon = config.epsilon;
  seg.samples.assign(config.segment_frames, 0.0f);
  if (config.init == SegmentInit::kUniform && config.init_scale > 0.0 && config.epsilon > 0.0) {
    std::mt19937_64 rng(config.seed ^ 0x5eedu);
    const double r = config.init_scale * config.epsilon;
    std::uniform_real_distribution<double> u(-r, r);
    for (auto& s : seg.samples) s = static_cast<float>(u(rng));
  }
  project_linf_inplace(seg.samples, config.epsilon);
  return seg;
}

void write_trace(const TrainingTrace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "trace.jsonl");
    for (const auto& r : trace.rows)
      f << json{{"step", r.step}, {"mean_nll", r.mean_nll}, {"linf", r.linf}}.dump() << '\n';
  }
  {
    std::ofstream f(dir / "batches.jsonl");
    for (std::size_t i = 0; i < trace.batch_ids.size(); ++i)
      f << json{{"step", static_cast<long>(i) + 1}, {"ids", trace.batch_ids[i]}}.dump() << '\n';
  }
  {
    std::ofstream f(dir / "selection.jsonl");
    for (const auto& s : trace.selections)
      f << json{{"step", s.step}, {"train_mean_nll", s.train_mean_nll}}.dump() << '\n';
  }
}

std::vector<TraceRow> read_trace(const std::filesystem::path& trace_jsonl) {
  std::ifstream f(trace_jsonl);
  if (!f) throw CorruptFile("cannot open " + trace_jsonl.string());
  std::vector<TraceRow> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      rows.push_back({j.at("step").get<long>(), j.at("mean_nll").get<double>(), j.at("linf").get<double>()});
    } catch (const json::exception& e) {
      throw CorruptFile("trace: " + std::string(e.what()));
    }
  }
  return rows;
}

namespace {

double selection_nll(const ModelAdapter& adapter, const AdversarialSegment& segment,
                     const std::vector<BatchItem>& items, LossReduction reduction) {
  double total = 0.0;
  for (const auto& it : items) {
    double n = adapter.nll(prepend(segment, it.utterance->audio), it.target->tokens, TaskTag::kTranscribe);
    if (reduction == LossReduction::kPerToken)
      n /= static_cast<double>(std::max<std::size_t>(1, it.target->tokens.size()));
    total += n;
  }
  return total / static_cast<double>(items.size());
}

}  // namespace

AttackResult train_universal_segment(const ModelAdapter& adapter, const AttackConfig& config,
                                     const std::vector<AttackUtterance>& trainset,
                                     const TargetSet& targets, const TrainOptions& options) {
  config.validate();
  if (config.sample_rate != adapter.sample_rate())
    throw SampleRateMismatch("attack sample rate differs from the model's");

  std::unordered_map<std::string, const TargetEntry*> by_id;
  for (const auto& e : targets.entries) by_id[e.id] = &e;
  std::vector<BatchItem> items;
  for (const auto& u : trainset) {
    auto it = by_id.find(u.id);
    if (it != by_id.end()) {
      items.push_back({&u, it->second});
      continue;
    }
    if (std::find(targets.excluded.begin(), targets.excluded.end(), u.id) == targets.excluded.end())
      throw InvalidArgument("no target for training utterance " + u.id);
  }

  AttackResult result;
  result.segment = initial_segment(config);
  result.segment.metadata = {options.model_id.empty() ? adapter.id() : options.model_id,
                             options.source_lang.empty() ? adapter.language() : options.source_lang, 0};
  if (config.steps > 0 && items.empty()) throw InvalidArgument("no usable training utterances");

  AdversarialSegment current = result.segment;
  auto& trace = result.trace;

  std::vector<BatchItem> select_items = items;
  if (config.select_limit > 0 && select_items.size() > config.select_limit) select_items.resize(config.select_limit);

  auto persist = [&](const AdversarialSegment& seg) {
    if (!options.checkpoint_dir) return;
    write_trace(trace, *options.checkpoint_dir);
    save_segment(seg, *options.checkpoint_dir / "checkpoint");
  };

  double best = std::numeric_limits<double>::infinity();
  auto select = [&](long step) {
    if (select_items.empty()) return;
    const double v = selection_nll(adapter, current, select_items, config.reduction);
    trace.selections.push_back({step, v});
    if (options.on_select) options.on_select(trace.selections.back());
    if (v < best) {
      best = v;
      result.segment = current;
      result.segment.metadata.steps = step;
      trace.best_step = step;
    }
  };

  try {
    if (config.steps > 0) select(0);
    SegmentOptimizer opt(current.frames(), config.learning_rate);
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    std::vector<BatchItem> batch;
    for (long step = 1; step <= config.steps; ++step) {
      batch.clear();
      std::vector<std::string> ids;
      const std::size_t bsz = std::min<std::size_t>(config.batch_size, items.size());
      while (batch.size() < bsz) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const auto& it = items[order[cursor++]];
        batch.push_back(it);
        ids.push_back(it.utterance->id);
      }
      trace.batch_ids.push_back(std::move(ids));
      try {
        auto o = attack_step(adapter, current, batch, opt, step, config.reduction);
        trace.rows.push_back({step, o.mean_nll, o.linf});
      } catch (const StepFailure&) {
        throw;
      } catch (const Error& e) {
        std::string names;
        for (const auto& b : batch) names += (names.empty() ? "" : ",") + b.utterance->id;
        throw StepFailure(std::string(e.what()) + " (batch " + names + ")", step);
      }
      if (options.on_step) options.on_step(trace.rows.back());
      if (step % config.select_every == 0 || step == config.steps) select(step);
      if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) persist(current);
    }
  } catch (...) {
    try {
      persist(current);
    } catch (...) {
    }
    throw;
  }
  if (config.steps > 0) persist(current);
  return result;
}

}  // namespace modelctl
