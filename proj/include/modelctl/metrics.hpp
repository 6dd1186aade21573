#pragma once

#include <array>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "modelctl/adapter.hpp"
#include "modelctl/audio.hpp"

namespace modelctl {

// Lowercase, ASCII punctuation removed, split on whitespace. Applied to both
// sides before WER and BLEU.
std::vector<std::string> normalize_words(std::string_view text);

struct WerBreakdown {
  std::size_t ins = 0;
  std::size_t del = 0;
  std::size_t sub = 0;
  std::size_t n_ref_words = 0;

  std::size_t errors() const noexcept { return ins + del + sub; }
  // Percent of reference words; may exceed 100.
  double wer() const { return rate(errors()); }
  double ins_rate() const { return rate(ins); }
  double del_rate() const { return rate(del); }
  double sub_rate() const { return rate(sub); }

  WerBreakdown& operator+=(const WerBreakdown& o) noexcept {
    ins += o.ins;
    del += o.del;
    sub += o.sub;
    n_ref_words += o.n_ref_words;
    return *this;
  }

 private:
  double rate(std::size_t count) const {
    return n_ref_words == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(n_ref_words);
  }
};

// Unit-cost Levenshtein alignment. The decomposition comes from a backtrace
// that prefers the diagonal (match/substitution), then deletion, then
// insertion. Throws InvalidArgument for an empty reference.
WerBreakdown wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);
WerBreakdown wer(std::string_view reference, std::string_view hypothesis);

inline constexpr int kBleuOrder = 4;

// Sufficient statistics of one sentence pair for corpus BLEU.
struct BleuStats {
  std::array<std::size_t, kBleuOrder> matches{};
  std::array<std::size_t, kBleuOrder> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o) noexcept;
};

BleuStats bleu_stats(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);
// 0..100, geometric mean of clipped 1..4-gram precisions times the brevity
// penalty, no smoothing.
double bleu_from_stats(const BleuStats& stats);
double corpus_bleu(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses);

// Probability that a text is in the detector's target language.
class LangDetector {
 public:
  virtual ~LangDetector() = default;
  virtual std::string target_language() const = 0;
  virtual double probability(std::string_view text) const = 0;
};

// Fraction of normalized words that belong to a fixed target vocabulary.
class AlphabetDetector final : public LangDetector {
 public:
  AlphabetDetector(std::string language, std::vector<std::string> target_words);
  std::string target_language() const override { return language_; }
  double probability(std::string_view text) const override;

 private:
  std::string language_;
  std::set<std::string> words_;
};

// Detector for the toy task: target alphabet words "t0".."t<K-1>" count as English.
AlphabetDetector toy_detector(int alphabet_size);

// Validated detector call; throws Error when the detector leaves [0, 1].
double p_target_lang(const LangDetector& detector, std::string_view text);

struct EvalUtterance {
  std::string id;
  Waveform audio;
  std::string reference;  // English reference translation
};

struct EvalRecord {
  std::string id;
  std::string hypothesis;
  std::string reference;
  WerBreakdown wer;
  BleuStats bleu;
  double p_en = 0.0;
  std::optional<std::string> error;  // decode failure; record excluded from aggregates

  nlohmann::json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
};

struct EvalAggregate {
  std::string mode;
  std::size_t n = 0;
  std::size_t n_failed = 0;
  WerBreakdown wer;  // counts pooled over utterances
  double bleu = 0.0;
  std::optional<double> comet;  // metric slot; never computed here
  double p_en = 0.0;            // mean over utterances, in [0, 1]
};

EvalAggregate aggregate_records(const std::vector<EvalRecord>& records, std::string mode);

struct EvalResult {
  std::vector<EvalRecord> records;
  EvalAggregate aggregate;
};

// Decodes every utterance (with the segment prepended when given) under
// `mode` and scores it against the English reference.
EvalResult evaluate_testset(const ModelAdapter& adapter, const AdversarialSegment* segment,
                            const std::vector<EvalUtterance>& testset, TaskTag mode,
                            const LangDetector& detector);

// Column order: Mode, WER, BLEU, COMET, P(en). P(en) in percent.
std::string aggregate_csv_header();
std::string aggregate_csv_row(const EvalAggregate& a, std::string_view label);

}  // namespace modelctl
