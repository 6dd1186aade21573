#include "modelctl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "modelctl/errors.hpp"

namespace modelctl {

using nlohmann::json;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CorruptFile("bad number for " + what + ": '" + s + "'");
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

}  // namespace

AggregateRow to_row(const EvalAggregate& a, std::string label) {
  AggregateRow r;
  r.label = std::move(label);
  r.mode = a.mode;
  r.n = a.n;
  r.n_failed = a.n_failed;
  r.wer = a.wer.wer();
  r.ins = a.wer.ins_rate();
  r.del = a.wer.del_rate();
  r.sub = a.wer.sub_rate();
  r.bleu = a.bleu;
  r.comet = a.comet;
  r.p_en = 100.0 * a.p_en;
  return r;
}

std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw CorruptFile("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != aggregate_csv_header())
    throw CorruptFile(path.string() + ": unexpected header");
  std::vector<AggregateRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto c = split_csv(line);
    if (c.size() != 11) throw CorruptFile(path.string() + ": expected 11 columns");
    AggregateRow r;
    r.label = c[0];
    r.mode = c[1];
    r.n = static_cast<std::size_t>(parse_double(c[2], "n"));
    r.n_failed = static_cast<std::size_t>(parse_double(c[3], "n_failed"));
    r.wer = parse_double(c[4], "wer");
    r.ins = parse_double(c[5], "ins");
    r.del = parse_double(c[6], "del");
    r.sub = parse_double(c[7], "sub");
    r.bleu = parse_double(c[8], "bleu");
    if (c[9] != "NA") r.comet = parse_double(c[9], "comet");
    r.p_en = parse_double(c[10], "p_en");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string aggregate_table_markdown(const std::vector<AggregateRow>& rows) {
  std::ostringstream o;
  o << "| | Mode | WER | BLEU | COMET | P(en) |\n";
  o << "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    o << "| " << r.label << " | " << r.mode << " | " << fmt("%.1f", r.wer) << " | " << fmt("%.2f", r.bleu)
      << " | " << (r.comet ? fmt("%.1f", *r.comet) : std::string("NA")) << " | " << fmt("%.1f", r.p_en)
      << " |\n";
  }
  return o.str();
}

WerTableRow to_wer_row(const WerBreakdown& w, std::string label) {
  return {std::move(label), w.ins_rate(), w.del_rate(), w.sub_rate(), w.wer()};
}

std::vector<WerTableRow> wer_rows_from_json(const json& j) {
  try {
    std::vector<WerTableRow> rows;
    for (const auto& e : j)
      rows.push_back({e.at("label").get<std::string>(), e.at("ins").get<double>(), e.at("del").get<double>(),
                      e.at("sub").get<double>(), e.at("wer").get<double>()});
    return rows;
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("wer fixture: ") + e.what());
  }
}

std::string wer_table_markdown(const std::vector<WerTableRow>& rows) {
  std::ostringstream o;
  o << "| Lang | ins | del | sub | WER | residual |\n";
  o << "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    o << "| " << r.label << " | " << fmt("%.1f", r.ins) << " | " << fmt("%.1f", r.del) << " | "
      << fmt("%.1f", r.sub) << " | " << fmt("%.1f", r.wer) << " | " << fmt("%.1f", r.residual() + 0.0)
      << " |\n";
  }
  return o.str();
}

CrossWer cross_wer(const std::vector<EvalRecord>& attacked, const std::vector<EvalRecord>& reference_run) {
  std::map<std::string, const EvalRecord*> ref;
  for (const auto& r : reference_run)
    if (!r.error) ref[r.id] = &r;
  CrossWer out;
  for (const auto& a : attacked) {
    auto it = ref.find(a.id);
    if (a.error || it == ref.end()) {
      ++out.skipped;
      continue;
    }
    auto ref_words = normalize_words(it->second->hypothesis);
    if (ref_words.empty()) {
      ++out.skipped;
      continue;
    }
    out.wer += wer(ref_words, normalize_words(a.hypothesis));
    ++out.paired;
  }
  return out;
}

std::vector<EvalRecord> read_records(const std::filesystem::path& jsonl) {
  std::ifstream f(jsonl);
  if (!f) throw CorruptFile("cannot open " + jsonl.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(EvalRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw CorruptFile(jsonl.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_records(const std::vector<EvalRecord>& records, const std::filesystem::path& jsonl) {
  std::ofstream f(jsonl, std::ios::binary);
  if (!f) throw Error("cannot write " + jsonl.string());
  for (const auto& r : records) f << r.to_json().dump() << '\n';
}

void write_curves_csv(const std::vector<LabelledCurve>& curves, const std::filesystem::path& path) {
  std::ostringstream o;
  o << "label,tau,recalled_fraction,bleu\n";
  for (const auto& c : curves)
    for (const auto& p : c.curve.points)
      o << c.label << ',' << fmt("%.2f", p.tau) << ',' << fmt("%.6f", p.recalled_fraction) << ','
        << (p.bleu ? fmt("%.4f", *p.bleu) : std::string("NA")) << '\n';
  write_text(path, o.str());
}

void write_histogram_csv(const std::vector<LabelledSummary>& summaries, const std::filesystem::path& path) {
  std::ostringstream o;
  o << "label,bin_lo,bin_hi,count,fraction\n";
  for (const auto& s : summaries) {
    const auto& h = s.summary.histogram;
    for (std::size_t b = 0; b < h.size(); ++b) {
      const double frac = s.summary.n == 0 ? 0.0 : static_cast<double>(h[b]) / static_cast<double>(s.summary.n);
      o << s.label << ',' << fmt("%.1f", b / 10.0) << ',' << fmt("%.1f", (b + 1) / 10.0) << ',' << h[b] << ','
        << fmt("%.6f", frac) << '\n';
    }
  }
  write_text(path, o.str());
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Frame {
  double w = 480, h = 320, left = 56, right = 16, top = 32, bottom = 44;
  double x(double v) const { return left + v * (w - left - right); }
  double y(double v) const { return h - bottom - v * (h - top - bottom); }
};

void svg_axes(std::ostringstream& o, const Frame& f, const std::string& title, const std::string& xlabel,
              const std::string& ylabel, double ymax) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.w << "\" height=\"" << f.h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << f.w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  o << "<line x1=\"" << f.x(0) << "\" y1=\"" << f.y(0) << "\" x2=\"" << f.x(1) << "\" y2=\"" << f.y(0)
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << f.x(0) << "\" y1=\"" << f.y(0) << "\" x2=\"" << f.x(0) << "\" y2=\"" << f.y(1)
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double t = i / 4.0;
    o << "<text x=\"" << f.x(t) << "\" y=\"" << f.y(0) + 14 << "\" text-anchor=\"middle\">"
      << fmt("%.2f", t) << "</text>\n";
    o << "<text x=\"" << f.x(0) - 4 << "\" y=\"" << f.y(t) + 4 << "\" text-anchor=\"end\">"
      << fmt("%.0f", t * ymax) << "</text>\n";
  }
  o << "<text x=\"" << f.w / 2 << "\" y=\"" << f.h - 8 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  o << "<text x=\"14\" y=\"" << f.h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << f.h / 2
    << ")\">" << ylabel << "</text>\n";
}

}  // namespace

std::string recall_plot_svg(const std::vector<LabelledCurve>& curves, const std::string& title) {
  Frame f;
  std::ostringstream o;
  svg_axes(o, f, title, "recalled fraction", "BLEU", 100.0);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* colour = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& p : curves[i].curve.points) {
      if (!p.bleu) continue;
      pts += fmt("%.2f", f.x(p.recalled_fraction)) + "," + fmt("%.2f", f.y(*p.bleu / 100.0)) + " ";
    }
    if (!pts.empty())
      o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
    o << "<text x=\"" << f.x(0.02) << "\" y=\"" << f.top + 12 + 13 * i << "\" fill=\"" << colour << "\">"
      << curves[i].label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string histogram_svg(const std::vector<LabelledSummary>& summaries, const std::string& title) {
  Frame f;
  std::ostringstream o;
  svg_axes(o, f, title, "P(en)", "% of utterances", 100.0);
  const double group = 0.1;
  const double bar = summaries.empty() ? 0.0 : 0.8 * group / static_cast<double>(summaries.size());
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const char* colour = kPalette[i % std::size(kPalette)];
    const auto& s = summaries[i].summary;
    for (std::size_t b = 0; b < s.histogram.size(); ++b) {
      const double frac = s.n == 0 ? 0.0 : static_cast<double>(s.histogram[b]) / static_cast<double>(s.n);
      const double x0 = b * group + 0.1 * group + i * bar;
      o << "<rect x=\"" << fmt("%.2f", f.x(x0)) << "\" y=\"" << fmt("%.2f", f.y(frac)) << "\" width=\""
        << fmt("%.2f", f.x(x0 + bar) - f.x(x0)) << "\" height=\"" << fmt("%.2f", f.y(0) - f.y(frac))
        << "\" fill=\"" << colour << "\"/>\n";
    }
    o << "<text x=\"" << f.x(0.4) << "\" y=\"" << f.top + 12 + 13 * i << "\" fill=\"" << colour << "\">"
      << summaries[i].label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

ReportOutputs write_report(const ReportInputs& inputs, const std::filesystem::path& out_dir) {
  if (inputs.runs.empty() && inputs.wer_fixture.empty() && inputs.aggregate_fixture.empty())
    throw InvalidArgument("report: nothing to report");
  std::filesystem::create_directories(out_dir);
  ReportOutputs out;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out_dir / name, text);
    out.files.push_back(out_dir / name);
  };

  std::vector<AggregateRow> rows = inputs.aggregate_fixture;
  for (const auto& run : inputs.runs) rows.push_back(to_row(aggregate_records(run.records, run.mode), run.label));
  {
    std::ostringstream csv;
    csv << aggregate_csv_header() << '\n';
    for (const auto& r : rows) {
      char buf[512];
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%s,%.4f", r.label.c_str(),
                    r.mode.c_str(), r.n, r.n_failed, r.wer, r.ins, r.del, r.sub, r.bleu,
                    r.comet ? fmt("%.4f", *r.comet).c_str() : "NA", r.p_en);
      csv << buf << '\n';
    }
    emit("aggregates.csv", csv.str());
  }

  std::vector<LabelledCurve> success, fail;
  const auto taus = default_tau_grid();
  for (const auto& run : inputs.runs) {
    const bool any = std::any_of(run.records.begin(), run.records.end(), [](const EvalRecord& r) { return !r.error; });
    if (!any) continue;
    auto [s, fl] = recall_curves(run.records, taus);
    out.success_jumps.emplace_back(run.label, largest_recall_jump(s));
    success.push_back({run.label, std::move(s)});
    fail.push_back({run.label, std::move(fl)});
    out.bimodality.push_back({run.label, bimodality_summary(run.records)});
  }
  if (!success.empty()) {
    write_curves_csv(success, out_dir / "curves_success.csv");
    write_curves_csv(fail, out_dir / "curves_fail.csv");
    write_histogram_csv(out.bimodality, out_dir / "p_en_hist.csv");
    out.files.push_back(out_dir / "curves_success.csv");
    out.files.push_back(out_dir / "curves_fail.csv");
    out.files.push_back(out_dir / "p_en_hist.csv");
    emit("curves_success.svg", recall_plot_svg(success, "BLEU of successfully attacked samples"));
    emit("curves_fail.svg", recall_plot_svg(fail, "BLEU of unsuccessfully attacked samples"));
    emit("p_en_hist.svg", histogram_svg(out.bimodality, "P(en) distribution"));
  }

  out.wer_rows = inputs.wer_fixture;
  if (inputs.tl_reference) {
    for (const auto& run : inputs.runs) {
      if (!run.attacked) continue;
      auto c = cross_wer(run.records, inputs.tl_reference->records);
      if (c.paired == 0) continue;
      out.wer_rows.push_back(to_wer_row(c.wer, run.label));
    }
  }
  if (!out.wer_rows.empty()) {
    std::ostringstream csv;
    csv << "label,ins,del,sub,wer,residual\n";
    for (const auto& r : out.wer_rows)
      csv << r.label << ',' << fmt("%.4f", r.ins) << ',' << fmt("%.4f", r.del) << ',' << fmt("%.4f", r.sub) << ','
          << fmt("%.4f", r.wer) << ',' << fmt("%.4f", r.residual() + 0.0) << '\n';
    emit("wer_breakdown.csv", csv.str());
  }

  std::ostringstream md;
  md << "# Attack report\n\n";
  if (!rows.empty()) md << "## Aggregates\n\n" << aggregate_table_markdown(rows) << '\n';
  if (!out.bimodality.empty()) {
    md << "## P(en) distribution\n\n| run | n | mass_low | mass_mid | mass_high | success jump at recall |\n";
    md << "|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < out.bimodality.size(); ++i) {
      const auto& s = out.bimodality[i].summary;
      md << "| " << out.bimodality[i].label << " | " << s.n << " | " << fmt("%.3f", s.mass_low) << " | "
         << fmt("%.3f", s.mass_mid) << " | " << fmt("%.3f", s.mass_high) << " | "
         << fmt("%.2f", out.success_jumps[i].second.recall_before) << " |\n";
    }
    md << "\nCurves: `curves_success.csv`, `curves_fail.csv` (plots `curves_success.svg`, `curves_fail.svg`).\n";
    md << "Histogram: `p_en_hist.csv` (`p_en_hist.svg`).\n\n";
  }
  if (!out.wer_rows.empty()) {
    md << "## WER decomposition\n\n";
    if (inputs.tl_reference)
      md << "Computed rows compare attacked hypotheses with the unattacked translate-mode hypotheses ("
         << inputs.tl_reference->label << ").\n\n";
    md << wer_table_markdown(out.wer_rows) << '\n';
  }
  emit("report.md", md.str());
  return out;
}

}  // namespace modelctl
