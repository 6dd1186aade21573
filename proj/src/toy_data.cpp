#include "modelctl/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "modelctl/errors.hpp"

namespace modelctl {

std::string ToyVocabulary::word(TokenId t) const {
  if (is_source(t)) return "s" + std::to_string(t);
  if (is_target(t)) return "t" + std::to_string(t - alphabet_size);
  if (t == start()) return "<|start|>";
  if (t == lang()) return "<|lang|>";
  if (t == task(TaskTag::kTranscribe)) return "<|tc|>";
  if (t == task(TaskTag::kTranslate)) return "<|tl|>";
  if (t == end()) return "<|end|>";
  throw OutOfVocabulary("token id " + std::to_string(t));
}

std::string ToyVocabulary::render(const TokenSequence& seq) const {
  std::string out;
  for (TokenId t : seq.tokens) {
    if (!is_source(t) && !is_target(t)) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

TokenSequence ToyVocabulary::parse(const std::string& text, bool append_end) const {
  TokenSequence seq;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    if (w.size() < 2 || (w[0] != 's' && w[0] != 't')) {
      throw OutOfVocabulary("unknown toy word '" + w + "'");
    }
    int idx = -1;
    try {
      std::size_t used = 0;
      idx = std::stoi(w.substr(1), &used);
      if (used != w.size() - 1) idx = -1;
    } catch (const std::exception&) {
      idx = -1;
    }
    if (idx < 0 || idx >= alphabet_size) throw OutOfVocabulary("unknown toy word '" + w + "'");
    seq.tokens.push_back(w[0] == 's' ? source(idx) : target(idx));
  }
  if (append_end) seq.tokens.push_back(end());
  return seq;
}

std::vector<std::string> ToyVocabulary::target_words() const {
  std::vector<std::string> words;
  for (int j = 0; j < alphabet_size; ++j) words.push_back(word(target(j)));
  return words;
}

void SyntheticSpec::validate() const {
  if (alphabet_size < 1) throw InvalidArgument("alphabet_size must be positive");
  if (chip_length < 1) throw InvalidArgument("chip_length must be positive");
  if (sample_rate <= 0) throw InvalidArgument("sample_rate must be positive");
  if (static_cast<int>(tone_frequencies.size()) != alphabet_size) {
    throw InvalidArgument("need one tone frequency per symbol");
  }
  const double nyquist = sample_rate / 2.0;
  std::set<double> seen;
  for (double f : tone_frequencies) {
    if (!(f > 0.0) || f >= nyquist) throw InvalidArgument("tone frequency outside (0, Nyquist)");
    if (!seen.insert(f).second) throw InvalidArgument("tone frequencies must be distinct");
  }
  if (static_cast<int>(mapping.size()) != alphabet_size) {
    throw InvalidArgument("mapping must cover every source symbol");
  }
  std::vector<int> sorted = mapping;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < alphabet_size; ++i) {
    if (sorted[static_cast<std::size_t>(i)] != i) throw InvalidArgument("mapping is not a bijection");
  }
  if (!(noise_std >= 0.0)) throw InvalidArgument("noise_std must be non-negative");
  if (min_symbols < 1 || max_symbols < min_symbols) throw InvalidArgument("bad symbol count range");
  if (max_lead_frames < 0 || max_trail_frames < 0) throw InvalidArgument("negative silence length");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw InvalidArgument("train_fraction must lie in [0, 1]");
  }
}

SyntheticSpec default_synthetic_spec(int alphabet_size) {
  SyntheticSpec spec;
  spec.alphabet_size = alphabet_size;
  for (int k = 0; k < alphabet_size; ++k) {
    const double step = alphabet_size > 1 ? 5400.0 / (alphabet_size - 1) : 0.0;
    spec.tone_frequencies.push_back(600.0 + k * step);
    spec.mapping.push_back(alphabet_size - 1 - k);
  }
  return spec;
}

namespace {

Waveform render(const SyntheticSpec& spec, const std::vector<int>& symbols, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> lead_dist(0, spec.max_lead_frames);
  std::uniform_int_distribution<int> trail_dist(0, spec.max_trail_frames);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);

  const int lead = lead_dist(rng);
  const int trail = trail_dist(rng);
  std::vector<double> phases;
  for (std::size_t i = 0; i < symbols.size(); ++i) phases.push_back(phase_dist(rng));

  const std::size_t total =
      static_cast<std::size_t>(lead + trail) + symbols.size() * static_cast<std::size_t>(spec.chip_length);
  std::vector<double> signal(total, 0.0);
  for (std::size_t c = 0; c < symbols.size(); ++c) {
    const double f = spec.tone_frequencies[static_cast<std::size_t>(symbols[c])];
    const std::size_t base = static_cast<std::size_t>(lead) + c * static_cast<std::size_t>(spec.chip_length);
    for (int n = 0; n < spec.chip_length; ++n) {
      signal[base + static_cast<std::size_t>(n)] =
          spec.tone_amplitude * std::sin(2.0 * std::numbers::pi * f * n / spec.sample_rate + phases[c]);
    }
  }
  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double v = signal[i] + (spec.noise_std > 0.0 ? spec.noise_std * noise(rng) : 0.0);
    out.samples[i] = static_cast<float>(v);
  }
  return out;
}

}  // namespace

Waveform synthesize_symbols(const SyntheticSpec& spec, const std::vector<int>& symbols,
                            std::uint64_t seed) {
  spec.validate();
  for (int s : symbols) {
    if (s < 0 || s >= spec.alphabet_size) throw InvalidArgument("symbol outside alphabet");
  }
  std::mt19937_64 rng(seed);
  return render(spec, symbols, rng);
}

std::vector<SyntheticUtterance> generate_synthetic_dataset(const SyntheticSpec& spec,
                                                           std::size_t n_utterances,
                                                           std::uint64_t seed) {
  spec.validate();
  if (n_utterances == 0) throw InvalidArgument("n_utterances must be positive");
  const ToyVocabulary vocab = spec.vocabulary();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(spec.min_symbols, spec.max_symbols);
  std::uniform_int_distribution<int> sym_dist(0, spec.alphabet_size - 1);
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(n_utterances)));

  std::vector<SyntheticUtterance> out;
  out.reserve(n_utterances);
  for (std::size_t i = 0; i < n_utterances; ++i) {
    SyntheticUtterance u;
    char id[32];
    std::snprintf(id, sizeof id, "utt%05zu", i);
    u.id = id;
    const int len = len_dist(rng);
    for (int k = 0; k < len; ++k) u.symbols.push_back(sym_dist(rng));
    for (int s : u.symbols) {
      u.source.tokens.push_back(vocab.source(s));
      u.target.tokens.push_back(vocab.target(spec.mapping[static_cast<std::size_t>(s)]));
    }
    u.audio = render(spec, u.symbols, rng);
    u.train = i < n_train;
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace modelctl
