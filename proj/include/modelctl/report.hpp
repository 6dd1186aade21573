#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "modelctl/analysis.hpp"
#include "modelctl/metrics.hpp"

namespace modelctl {

// One aggregate table line. Rates and P(en) are percentages.
struct AggregateRow {
  std::string label;
  std::string mode;
  std::size_t n = 0;
  std::size_t n_failed = 0;
  double wer = 0.0;
  double ins = 0.0;
  double del = 0.0;
  double sub = 0.0;
  double bleu = 0.0;
  std::optional<double> comet;
  double p_en = 0.0;
};

AggregateRow to_row(const EvalAggregate& a, std::string label);
// Parses the output of aggregate_csv_header / aggregate_csv_row.
std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path);
std::string aggregate_table_markdown(const std::vector<AggregateRow>& rows);

// One breakdown line: WER split into its edit operations, all in percent.
struct WerTableRow {
  std::string label;
  double ins = 0.0;
  double del = 0.0;
  double sub = 0.0;
  double wer = 0.0;

  // wer - (ins + del + sub); zero for exact counts, rounding noise otherwise.
  double residual() const noexcept { return wer - (ins + del + sub); }
};

WerTableRow to_wer_row(const WerBreakdown& w, std::string label);
// [{"label", "ins", "del", "sub", "wer"}, ...]
std::vector<WerTableRow> wer_rows_from_json(const nlohmann::json& j);
std::string wer_table_markdown(const std::vector<WerTableRow>& rows);

// WER of attacked hypotheses against the unattacked translate-mode
// hypotheses of the same ids, pooled. Ids missing on either side, failed
// records and empty references are skipped and counted.
struct CrossWer {
  WerBreakdown wer;
  std::size_t paired = 0;
  std::size_t skipped = 0;
};
CrossWer cross_wer(const std::vector<EvalRecord>& attacked, const std::vector<EvalRecord>& reference_run);

std::vector<EvalRecord> read_records(const std::filesystem::path& jsonl);
void write_records(const std::vector<EvalRecord>& records, const std::filesystem::path& jsonl);

struct LabelledCurve {
  std::string label;
  RecallCurve curve;
};

// label,tau,recalled_fraction,bleu  (bleu "NA" when nothing is recalled)
void write_curves_csv(const std::vector<LabelledCurve>& curves, const std::filesystem::path& path);

struct LabelledSummary {
  std::string label;
  BimodalitySummary summary;
};

// label,bin_lo,bin_hi,count,fraction
void write_histogram_csv(const std::vector<LabelledSummary>& summaries, const std::filesystem::path& path);

// BLEU of the recalled subset against recalled fraction, one polyline per label.
std::string recall_plot_svg(const std::vector<LabelledCurve>& curves, const std::string& title);
// Grouped bars of histogram fractions.
std::string histogram_svg(const std::vector<LabelledSummary>& summaries, const std::string& title);

struct ReportRun {
  std::string label;
  std::string mode;
  std::vector<EvalRecord> records;
  bool attacked = false;
};

struct ReportInputs {
  std::vector<ReportRun> runs;
  // Unattacked translate-mode run used as reference for the computed WER
  // decomposition; that table is skipped without it.
  std::optional<ReportRun> tl_reference;
  // Externally supplied per-language WER decomposition rows.
  std::vector<WerTableRow> wer_fixture;
  std::vector<AggregateRow> aggregate_fixture;
};

struct ReportOutputs {
  std::vector<std::filesystem::path> files;
  std::vector<WerTableRow> wer_rows;  // fixture rows followed by computed ones
  std::vector<LabelledSummary> bimodality;
  std::vector<std::pair<std::string, Discontinuity>> success_jumps;
};

// Writes report.md, aggregates.csv, curves_success.csv, curves_fail.csv,
// p_en_hist.csv, wer_breakdown.csv and the SVG plots into `out_dir`.
ReportOutputs write_report(const ReportInputs& inputs, const std::filesystem::path& out_dir);

}  // namespace modelctl
