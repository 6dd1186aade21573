#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "modelctl/adapter.hpp"
#include "modelctl/autograd.hpp"
#include "modelctl/toy_data.hpp"

namespace modelctl {

// Architecture and training hyperparameters of the toy multi-task model.
//
// Front end: Hann-windowed, non-overlapping analysis windows projected onto a
// fixed bank of sinusoids; features are log band powers. The front end has no
// parameters and is differentiable w.r.t. the waveform.
// Encoder: per-window projection followed by a temporal convolution; the
// mean of the pre-activation projections is kept as a linear input summary.
// Decoder: GRU with location-aware additive attention. The prompt is
// <|start|> <|lang|> <|task|>: start and language tokens are fed through the
// GRU, while the task token's embedding is fused with a linear summary of the
// whole input into a conditioning vector seen at every decoder step.
struct ToyModelConfig {
  int alphabet_size = 10;
  int sample_rate = kDefaultSampleRate;
  std::string source_lang = "xx";
  std::size_t max_frames = 30 * kDefaultSampleRate;

  int window = 160;
  int n_bins = 40;
  double bin_spacing_hz = 200.0;
  double log_floor = 1e-2;

  int enc_hidden = 64;
  int conv_taps = 5;
  int dec_hidden = 64;
  int embed_dim = 16;
  int attn_dim = 32;
  int loc_channels = 8;
  int loc_taps = 15;
  int cond_dim = 32;
  int out_hidden = 64;
  int max_decode_len = 16;

  double learning_rate = 3e-3;
  int batch_size = 16;
  long max_steps = 6000;
  long eval_every = 200;
  double target_accuracy = 0.98;
  double holdout_fraction = 0.1;
  double grad_clip = 5.0;
  std::uint64_t seed = 1234;

  void validate() const;
  ToyVocabulary vocabulary() const { return ToyVocabulary{alphabet_size}; }
  nlohmann::json to_json() const;
  static ToyModelConfig from_json(const nlohmann::json& j);
};

struct ToyTrainingReport {
  bool reached_target = false;
  long steps = 0;
  double tc_token_accuracy = 0.0;
  double tl_token_accuracy = 0.0;
  double tc_sequence_accuracy = 0.0;
  double tl_sequence_accuracy = 0.0;
  double final_loss = 0.0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static ToyTrainingReport from_json(const nlohmann::json& j);
};

struct NamedTensor {
  std::string name;
  ad::Matrix value;
};

class ToyModel {
 public:
  // Parameters initialised from config.seed.
  explicit ToyModel(ToyModelConfig config);

  const ToyModelConfig& config() const noexcept { return config_; }
  ToyVocabulary vocabulary() const { return config_.vocabulary(); }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<NamedTensor>& mutable_parameters() noexcept { return params_; }
  std::uint64_t checksum() const;

  const ToyTrainingReport& training_report() const noexcept { return report_; }
  void set_training_report(ToyTrainingReport r) { report_ = std::move(r); }

  // Log band-power features, one row per analysis window.
  ad::Matrix features(const Waveform& audio) const;
  // Fixed analysis basis (window x 2*n_bins): windowed cosines then sines.
  const ad::Matrix& analysis_basis() const noexcept { return basis_; }

 private:
  ToyModelConfig config_;
  std::vector<NamedTensor> params_;
  ad::Matrix basis_;
  ToyTrainingReport report_;
};

// Differentiable forward pass of a ToyModel on one tape. Parameters enter the
// tape as variables when `trainable`, as constants otherwise.
class ToyGraph {
 public:
  ToyGraph(const ToyModel& model, ad::Tape& tape, bool trainable);

  ad::Var features(ad::Var audio_column);

  struct Encoded {
    ad::Var states;  // T x enc_hidden
    ad::Var keys;    // T x attn_dim
    ad::Var summary;
  };
  Encoded encode(ad::Var features);

  struct State {
    ad::Var hidden;     // 1 x dec_hidden
    ad::Var alignment;  // T x 1
    ad::Var condition;  // 1 x cond_dim, task embedding fused with the summary
  };
  State initial_state(const Encoded& enc, TaskTag task);
  // Consumes `token`, returns the new state and next-token logits.
  std::pair<State, ad::Var> step(const Encoded& enc, const State& state, TokenId token);

  // Feeds <|start|> <|lang|>; the logits predict the first output token.
  std::pair<State, ad::Var> run_prompt(const Encoded& enc, TaskTag task);

  // Sum over target positions of -log p(y_m | y_<m); `per_step` receives the
  // individual terms when non-null.
  ad::Var sequence_nll(const Encoded& enc, TaskTag task, const TokenSequence& target,
                       std::vector<double>* per_step = nullptr);

  DecodeResult greedy_decode(const Encoded& enc, TaskTag task);

  const std::vector<ad::Var>& parameter_vars() const noexcept { return params_; }

 private:
  ad::Var p(int index) const { return params_[static_cast<std::size_t>(index)]; }

  const ToyModel& model_;
  ad::Tape& tape_;
  std::vector<ad::Var> params_;
  ad::Var basis_;
};

class ToyAdapter final : public ModelAdapter {
 public:
  explicit ToyAdapter(ToyModel model);

  std::string id() const override { return "toy"; }
  int vocab_size() const override { return model_.vocabulary().size(); }
  int sample_rate() const override { return model_.config().sample_rate; }
  std::size_t max_frames() const override { return model_.config().max_frames; }
  std::vector<TaskTag> tasks() const override {
    return {TaskTag::kTranscribe, TaskTag::kTranslate};
  }
  TokenId end_token() const override { return model_.vocabulary().end(); }
  std::string language() const override { return language_; }
  // The toy vocabulary has a single language token; only the configured
  // source language is accepted.
  void set_language(const std::string& lang) override;

  // Empty audio (0 frames) is rejected with InvalidArgument.
  NllResult teacher_forced_nll(const Waveform& audio, const TokenSequence& target,
                               TaskTag task) const override;
  double nll(const Waveform& audio, const TokenSequence& target, TaskTag task) const override;
  DecodeResult decode(const Waveform& audio, TaskTag task) const override;
  std::string detokenize(const TokenSequence& sequence) const override;
  std::uint64_t parameter_checksum() const override { return model_.checksum(); }

  const ToyModel& model() const noexcept { return model_; }

 private:
  void check_nonempty(const Waveform& audio) const;

  ToyModel model_;
  std::string language_;
};

struct ToyExample {
  Waveform audio;
  TokenSequence source;  // without end token
  TokenSequence target;  // without end token
};

std::vector<ToyExample> to_toy_examples(const std::vector<SyntheticUtterance>& utterances);

// Trains both tasks jointly with Adam until held-out token and sequence
// accuracy reach config.target_accuracy on both tasks or max_steps is hit.
// The outcome is recorded in the returned model's training_report(); a miss
// adds a degraded-model warning there.
// `on_eval` sees the report after each held-out evaluation.
ToyModel train_toy_model(const ToyModelConfig& config, const std::vector<ToyExample>& dataset,
                         const std::function<void(const ToyTrainingReport&)>& on_eval = {});

// Versioned binary container: magic, version, JSON header (config + training
// report), then named float64 tensors.
void save_toy_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_toy_model(const std::filesystem::path& path);

}  // namespace modelctl
