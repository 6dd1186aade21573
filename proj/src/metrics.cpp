#include "modelctl/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "modelctl/errors.hpp"

namespace modelctl {
using nlohmann::json;

std::vector<std::string> normalize_words(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 128 && std::ispunct(u)) continue;
    cleaned.push_back(u < 128 ? static_cast<char>(std::tolower(u)) : ch);
  }
  std::vector<std::string> words;
  std::istringstream in(cleaned);
  std::string w;
  while (in >> w) words.push_back(std::move(w));
  return words;
}

WerBreakdown wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis) {
  if (reference.empty()) throw InvalidArgument("WER is undefined for an empty reference");
  const std::size_t n = reference.size();
  const std::size_t m = hypothesis.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  const auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  WerBreakdown out;
  out.n_ref_words = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = reference[i - 1] == hypothesis[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++out.sub;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.del;
      --i;
    } else {
      ++out.ins;
      --j;
    }
  }
  return out;
}

WerBreakdown wer(std::string_view reference, std::string_view hypothesis) {
  return wer(normalize_words(reference), normalize_words(hypothesis));
}

BleuStats& BleuStats::operator+=(const BleuStats& o) noexcept {
  for (int k = 0; k < kBleuOrder; ++k) {
    matches[static_cast<std::size_t>(k)] += o.matches[static_cast<std::size_t>(k)];
    totals[static_cast<std::size_t>(k)] += o.totals[static_cast<std::size_t>(k)];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& words,
                                                             std::size_t order) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (words.size() < order) return counts;
  for (std::size_t i = 0; i + order <= words.size(); ++i) {
    ++counts[std::vector<std::string>(words.begin() + static_cast<long>(i),
                                      words.begin() + static_cast<long>(i + order))];
  }
  return counts;
}

}  // namespace

BleuStats bleu_stats(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis) {
  BleuStats s;
  s.hyp_len = hypothesis.size();
  s.ref_len = reference.size();
  for (std::size_t order = 1; order <= kBleuOrder; ++order) {
    const auto hyp = ngram_counts(hypothesis, order);
    const auto ref = ngram_counts(reference, order);
    std::size_t matched = 0;
    for (const auto& [gram, count] : hyp) {
      const auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    s.matches[order - 1] = matched;
    s.totals[order - 1] = hypothesis.size() >= order ? hypothesis.size() - order + 1 : 0;
  }
  return s;
}

double bleu_from_stats(const BleuStats& stats) {
  if (stats.hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int k = 0; k < kBleuOrder; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    if (stats.matches[idx] == 0 || stats.totals[idx] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(stats.matches[idx]) / static_cast<double>(stats.totals[idx]));
  }
  log_precision /= kBleuOrder;
  const double c = static_cast<double>(stats.hyp_len);
  const double r = static_cast<double>(stats.ref_len);
  const double log_bp = c >= r ? 0.0 : 1.0 - r / c;
  return 100.0 * std::exp(log_bp + log_precision);
}

double corpus_bleu(const std::vector<std::string>& references, const std::vector<std::string>& hypotheses) {
  if (references.size() != hypotheses.size()) {
    throw InvalidArgument("corpus_bleu: " + std::to_string(references.size()) + " references vs " +
                          std::to_string(hypotheses.size()) + " hypotheses");
  }
  if (references.empty()) throw InvalidArgument("corpus_bleu needs at least one pair");
  BleuStats total;
  for (std::size_t i = 0; i < references.size(); ++i) {
    total += bleu_stats(normalize_words(references[i]), normalize_words(hypotheses[i]));
  }
  return bleu_from_stats(total);
}

AlphabetDetector::AlphabetDetector(std::string language, std::vector<std::string> target_words)
    : language_(std::move(language)) {
  for (auto& w : target_words) {
    for (auto& n : normalize_words(w)) words_.insert(std::move(n));
  }
}

double AlphabetDetector::probability(std::string_view text) const {
  const auto words = normalize_words(text);
  if (words.empty()) return 0.0;
  const auto hits = std::count_if(words.begin(), words.end(),
                                  [&](const std::string& w) { return words_.count(w) > 0; });
  return static_cast<double>(hits) / static_cast<double>(words.size());
}

AlphabetDetector toy_detector(int alphabet_size) {
  std::vector<std::string> words;
  for (int j = 0; j < alphabet_size; ++j) words.push_back("t" + std::to_string(j));
  return AlphabetDetector("en", std::move(words));
}

double p_target_lang(const LangDetector& detector, std::string_view text) {
  const double p = detector.probability(text);
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error("language detector returned " + std::to_string(p) + ", outside [0, 1]");
  }
  return p;
}

json EvalRecord::to_json() const {
  json j = {{"id", id},
            {"hypothesis", hypothesis},
            {"reference", reference},
            {"ins", wer.ins},
            {"del", wer.del},
            {"sub", wer.sub},
            {"n_ref_words", wer.n_ref_words},
            {"wer", wer.wer()},
            {"bleu_matches", bleu.matches},
            {"bleu_totals", bleu.totals},
            {"hyp_len", bleu.hyp_len},
            {"ref_len", bleu.ref_len},
            {"p_en", p_en}};
  if (error) j["error"] = *error;
  return j;
}

EvalRecord EvalRecord::from_json(const json& j) {
  EvalRecord r;
  r.id = j.at("id").get<std::string>();
  r.hypothesis = j.value("hypothesis", "");
  r.reference = j.value("reference", "");
  r.wer.ins = j.value("ins", std::size_t{0});
  r.wer.del = j.value("del", std::size_t{0});
  r.wer.sub = j.value("sub", std::size_t{0});
  r.wer.n_ref_words = j.value("n_ref_words", std::size_t{0});
  if (j.contains("bleu_matches")) r.bleu.matches = j.at("bleu_matches").get<std::array<std::size_t, kBleuOrder>>();
  if (j.contains("bleu_totals")) r.bleu.totals = j.at("bleu_totals").get<std::array<std::size_t, kBleuOrder>>();
  r.bleu.hyp_len = j.value("hyp_len", std::size_t{0});
  r.bleu.ref_len = j.value("ref_len", std::size_t{0});
  r.p_en = j.at("p_en").get<double>();
  if (j.contains("error")) r.error = j.at("error").get<std::string>();
  if (!(r.p_en >= 0.0 && r.p_en <= 1.0)) throw InvalidArgument("record " + r.id + ": p_en outside [0, 1]");
  return r;
}

EvalAggregate aggregate_records(const std::vector<EvalRecord>& records, std::string mode) {
  EvalAggregate a;
  a.mode = std::move(mode);
  BleuStats bleu;
  double p_sum = 0.0;
  for (const auto& r : records) {
    if (r.error) {
      ++a.n_failed;
      continue;
    }
    ++a.n;
    a.wer += r.wer;
    bleu += r.bleu;
    p_sum += r.p_en;
  }
  a.bleu = bleu_from_stats(bleu);
  a.p_en = a.n == 0 ? 0.0 : p_sum / static_cast<double>(a.n);
  return a;
}

EvalResult evaluate_testset(const ModelAdapter& adapter, const AdversarialSegment* segment,
                            const std::vector<EvalUtterance>& testset, TaskTag mode,
                            const LangDetector& detector) {
  EvalResult out;
  out.records.reserve(testset.size());
  for (const auto& u : testset) {
    EvalRecord r;
    r.id = u.id;
    r.reference = u.reference;
    try {
      const Waveform input = segment ? prepend(*segment, u.audio) : u.audio;
      const auto decoded = adapter.decode(input, mode);
      r.hypothesis = adapter.detokenize(decoded.sequence);
      const auto ref_words = normalize_words(r.reference);
      const auto hyp_words = normalize_words(r.hypothesis);
      r.wer = wer(ref_words, hyp_words);
      r.bleu = bleu_stats(ref_words, hyp_words);
      r.p_en = p_target_lang(detector, r.hypothesis);
    } catch (const Error& e) {
      r.error = e.what();
    }
    out.records.push_back(std::move(r));
  }
  out.aggregate = aggregate_records(out.records, std::string(to_string(mode)));
  return out;
}

std::string aggregate_csv_header() {
  return "label,mode,n,n_failed,wer,ins,del,sub,bleu,comet,p_en";
}

std::string aggregate_csv_row(const EvalAggregate& a, std::string_view label) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%s,%.4f",
                std::string(label).c_str(), a.mode.c_str(), a.n, a.n_failed, a.wer.wer(),
                a.wer.ins_rate(), a.wer.del_rate(), a.wer.sub_rate(), a.bleu,
                a.comet ? std::to_string(*a.comet).c_str() : "NA", 100.0 * a.p_en);
  return buf;
}

}  // namespace modelctl
