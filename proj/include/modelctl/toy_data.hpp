#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modelctl/adapter.hpp"
#include "modelctl/audio.hpp"

namespace modelctl {

// Token layout shared by the toy model, the toy data generator and the toy
// language detector:
//   [0, K)      source alphabet, rendered "s<i>"
//   [K, 2K)     target alphabet, rendered "t<j>"
//   2K .. 2K+4  <|start|> <|lang|> <|tc|> <|tl|> <|end|>
struct ToyVocabulary {
  int alphabet_size = 10;

  int size() const noexcept { return 2 * alphabet_size + 5; }
  TokenId source(int symbol) const noexcept { return symbol; }
  TokenId target(int symbol) const noexcept { return alphabet_size + symbol; }
  TokenId start() const noexcept { return 2 * alphabet_size; }
  TokenId lang() const noexcept { return 2 * alphabet_size + 1; }
  TokenId task(TaskTag t) const noexcept {
    return 2 * alphabet_size + (t == TaskTag::kTranscribe ? 2 : 3);
  }
  TokenId end() const noexcept { return 2 * alphabet_size + 4; }

  bool is_source(TokenId t) const noexcept { return t >= 0 && t < alphabet_size; }
  bool is_target(TokenId t) const noexcept { return t >= alphabet_size && t < 2 * alphabet_size; }

  std::string word(TokenId t) const;
  // Space-separated words; special tokens are not rendered.
  std::string render(const TokenSequence& seq) const;
  // Inverse of render for alphabet words; unknown words raise OutOfVocabulary.
  TokenSequence parse(const std::string& text, bool append_end) const;
  std::vector<std::string> target_words() const;
};

struct SyntheticSpec {
  int alphabet_size = 10;
  int chip_length = 800;
  std::vector<double> tone_frequencies;  // Hz, one per symbol
  std::vector<int> mapping;              // source symbol -> target symbol
  double noise_std = 0.005;
  double tone_amplitude = 0.1;
  int sample_rate = kDefaultSampleRate;
  int min_symbols = 3;
  int max_symbols = 10;
  // Silence (plus noise) before the first and after the last chip; the actual
  // length is drawn uniformly from [0, max].
  int max_lead_frames = 8000;
  int max_trail_frames = 800;
  double train_fraction = 0.8;

  // Throws InvalidArgument on any broken invariant.
  void validate() const;
  ToyVocabulary vocabulary() const { return ToyVocabulary{alphabet_size}; }
};

// Evenly spaced tones between 600 Hz and 6 kHz and a reversal mapping.
SyntheticSpec default_synthetic_spec(int alphabet_size = 10);

struct SyntheticUtterance {
  std::string id;
  Waveform audio;
  std::vector<int> symbols;
  TokenSequence source;  // source tokens, no end token
  TokenSequence target;  // mapped tokens, no end token
  bool train = true;
};

// The first round(train_fraction * n) utterances form the train split.
std::vector<SyntheticUtterance> generate_synthetic_dataset(const SyntheticSpec& spec,
                                                           std::size_t n_utterances,
                                                           std::uint64_t seed);

// Audio for an explicit symbol string (noise and silence drawn from `seed`).
Waveform synthesize_symbols(const SyntheticSpec& spec, const std::vector<int>& symbols,
                            std::uint64_t seed);

}  // namespace modelctl
