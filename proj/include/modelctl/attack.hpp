#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "modelctl/adapter.hpp"
#include "modelctl/audio.hpp"

namespace modelctl {

enum class AttackPreset { kWeak, kMid, kStrong };
enum class SegmentInit { kZeros, kUniform };
// Per-utterance averaging keeps long utterances from dominating the batch
// objective; per-token averaging is available for comparison.
enum class LossReduction { kPerUtterance, kPerToken };

std::string_view to_string(AttackPreset preset) noexcept;
AttackPreset parse_preset(std::string_view text);

struct AttackConfig {
  double epsilon = 0.02;
  std::size_t segment_frames = 10240;
  int sample_rate = kDefaultSampleRate;
  long steps = 600;
  int batch_size = 16;
  double learning_rate = 1e-3;
  SegmentInit init = SegmentInit::kUniform;
  double init_scale = 0.1;  // uniform init range as a fraction of epsilon
  std::uint64_t seed = 0;
  LossReduction reduction = LossReduction::kPerUtterance;
  std::optional<AttackPreset> preset;
  // Training-set mean NLL is measured every `select_every` steps (and at
  // step 0 and the last step); the best segment seen is returned.
  long select_every = 50;
  // Cap on utterances used for that measurement (0 = whole training set).
  std::size_t select_limit = 0;
  // Current segment + trace written to the checkpoint directory this often
  // (0 disables).
  long checkpoint_every = 0;

  // weak (0.02, 0.64 s), mid (0.2, 0.64 s), strong (2.0, 5.12 s).
  static AttackConfig from_preset(AttackPreset preset, int sample_rate = kDefaultSampleRate);

  void validate() const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

struct AttackUtterance {
  std::string id;
  Waveform audio;
};

struct TargetEntry {
  std::string id;
  TokenSequence tokens;
  std::string text;
};

struct TargetSet {
  std::vector<TargetEntry> entries;
  std::vector<std::string> excluded;  // ids whose clean decode failed
  std::vector<std::string> warnings;

  const TargetEntry* find(std::string_view id) const;
};

// Translate-mode greedy decode of each CLEAN utterance.
TargetSet generate_targets(const ModelAdapter& adapter, const std::vector<AttackUtterance>& trainset);

nlohmann::json to_json(const TargetSet& targets);
TargetSet targets_from_json(const nlohmann::json& j);

struct BatchItem {
  const AttackUtterance* utterance;
  const TargetEntry* target;
};

struct BatchGradient {
  double mean_nll = 0.0;
  std::vector<double> grad;  // d mean_nll / d segment sample
};

// Mean over the batch of the transcribe-mode NLL of each translate target
// with the segment prepended; the gradient is restricted to segment frames.
BatchGradient batch_gradient(const ModelAdapter& adapter, const AdversarialSegment& segment,
                             std::span<const BatchItem> batch, LossReduction reduction);

// Adam on the segment samples, descending the NLL.
class SegmentOptimizer {
 public:
  SegmentOptimizer(std::size_t frames, double learning_rate);
  double learning_rate() const noexcept { return learning_rate_; }
  // One update followed by projection onto the epsilon ball.
  void apply(AdversarialSegment& segment, std::span<const double> grad);

 private:
  double learning_rate_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

struct StepOutcome {
  double mean_nll = 0.0;  // at the segment before the update
  double linf = 0.0;      // after projection
};

// Gradient, update and projection for one batch. Neither the audio nor the
// model is touched. Throws StepFailure (segment unchanged) on a non-finite
// loss or gradient.
StepOutcome attack_step(const ModelAdapter& adapter, AdversarialSegment& segment,
                        std::span<const BatchItem> batch, SegmentOptimizer& optimizer, long step,
                        LossReduction reduction = LossReduction::kPerUtterance);

struct TraceRow {
  long step = 0;
  double mean_nll = 0.0;
  double linf = 0.0;
};

struct SelectionPoint {
  long step = 0;
  double train_mean_nll = 0.0;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;
  std::vector<SelectionPoint> selections;
  std::vector<std::vector<std::string>> batch_ids;  // ids used at each step
  long best_step = 0;
  std::string segment_path;  // where the caller stored the final segment, if anywhere
};

struct AttackResult {
  AdversarialSegment segment;
  TrainingTrace trace;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::string model_id;
  std::string source_lang;
  std::function<void(const TraceRow&)> on_step;
  std::function<void(const SelectionPoint&)> on_select;
};

AdversarialSegment initial_segment(const AttackConfig& config);

// Learns one segment over shuffled mini-batches of the training set. The
// returned segment is the best by training-set mean NLL among the measured
// checkpoints. On failure the trace so far is written to the checkpoint
// directory (if any) before the error propagates.
AttackResult train_universal_segment(const ModelAdapter& adapter, const AttackConfig& config,
                                     const std::vector<AttackUtterance>& trainset,
                                     const TargetSet& targets, const TrainOptions& options = {});

// trace.jsonl rows: {"step", "mean_nll", "linf"}.
void write_trace(const TrainingTrace& trace, const std::filesystem::path& dir);
std::vector<TraceRow> read_trace(const std::filesystem::path& trace_jsonl);

}  // namespace modelctl
