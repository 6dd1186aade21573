#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "modelctl/audio.hpp"

namespace modelctl {

enum class TaskTag { kTranscribe, kTranslate };

// "tc" / "tl"
std::string_view to_string(TaskTag task) noexcept;
TaskTag parse_task(std::string_view text);

using TokenId = int;

struct TokenSequence {
  std::vector<TokenId> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

struct NllResult {
  double nll = 0.0;
  // d nll / d audio sample, one entry per input frame.
  std::vector<double> grad;
};

struct DecodeResult {
  TokenSequence sequence;
  // -log p of each emitted token at the step it was chosen.
  std::vector<double> step_nll;
  bool terminated = false;  // ended on the end token rather than the length cap

  double total_nll() const;
};

// White-box contract for an attackable multi-task speech model. The decoder
// prompt (start, language, task tokens) is built inside the adapter; callers
// select the task only through TaskTag and have no other handle on
// decoder-side tokens.
//
// Instances are not required to be safe for concurrent calls.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;

  virtual std::string id() const = 0;
  virtual int vocab_size() const = 0;
  virtual int sample_rate() const = 0;
  virtual std::size_t max_frames() const = 0;
  virtual std::vector<TaskTag> tasks() const = 0;
  virtual TokenId end_token() const = 0;

  // Language token placed in the prompt. Defaults to the source language.
  virtual std::string language() const = 0;
  virtual void set_language(const std::string& lang) = 0;

  // nll = -sum_m log P(y_m | y_<m, audio, task), plus d nll / d audio.
  virtual NllResult teacher_forced_nll(const Waveform& audio, const TokenSequence& target,
                                       TaskTag task) const = 0;
  // Same value without the backward pass.
  virtual double nll(const Waveform& audio, const TokenSequence& target, TaskTag task) const = 0;

  // Greedy autoregressive decoding; the returned sequence includes the end
  // token when one was produced.
  virtual DecodeResult decode(const Waveform& audio, TaskTag task) const = 0;

  virtual std::string detokenize(const TokenSequence& sequence) const = 0;

  // Digest of all model parameters; used to check the attack never mutates them.
  virtual std::uint64_t parameter_checksum() const = 0;

 protected:
  // Shared precondition checks: sample rate, finite samples, length cap.
  void check_audio(const Waveform& audio) const;
  void check_tokens(const TokenSequence& target) const;
};

using AdapterFactory =
    std::function<std::unique_ptr<ModelAdapter>(const std::filesystem::path& checkpoint)>;

// Adapters are looked up by string id ("toy" is registered by the library).
void register_adapter(const std::string& id, AdapterFactory factory);
std::unique_ptr<ModelAdapter> make_adapter(const std::string& id,
                                           const std::filesystem::path& checkpoint);
std::vector<std::string> registered_adapters();

}  // namespace modelctl
