#include "modelctl/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "modelctl/errors.hpp"

namespace modelctl {

std::vector<double> default_tau_grid() {
  std::vector<double> taus;
  for (int i = 0; i <= 100; ++i) taus.push_back(i / 100.0);
  return taus;
}

namespace {

std::vector<const EvalRecord*> usable(const std::vector<EvalRecord>& records) {
  std::vector<const EvalRecord*> out;
  for (const auto& r : records) {
    if (!r.error) out.push_back(&r);
  }
  return out;
}

}  // namespace

std::pair<RecallCurve, RecallCurve> recall_curves(const std::vector<EvalRecord>& records,
                                                  const std::vector<double>& taus) {
  const auto rs = usable(records);
  if (rs.empty()) throw InvalidArgument("recall curves need at least one scored record");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] >= 0.0 && taus[i] <= 1.0)) throw InvalidArgument("tau outside [0, 1]");
    if (i > 0 && !(taus[i] > taus[i - 1])) throw InvalidArgument("tau grid must be strictly increasing");
  }
  RecallCurve success{RecallKind::kSuccess, {}};
  RecallCurve fail{RecallKind::kFail, {}};
  const double n = static_cast<double>(rs.size());
  for (double tau : taus) {
    BleuStats s_stats, f_stats;
    std::size_t s_count = 0, f_count = 0;
    for (const auto* r : rs) {
      if (r->p_en > tau) {
        ++s_count;
        s_stats += r->bleu;
      } else if (r->p_en < tau) {
        ++f_count;
        f_stats += r->bleu;
      }
    }
    success.points.push_back({tau, static_cast<double>(s_count) / n,
                              s_count ? std::optional(bleu_from_stats(s_stats)) : std::nullopt});
    fail.points.push_back({tau, static_cast<double>(f_count) / n,
                           f_count ? std::optional(bleu_from_stats(f_stats)) : std::nullopt});
  }
  return {success, fail};
}

Discontinuity largest_recall_jump(const RecallCurve& curve) {
  if (curve.points.size() < 2) throw InvalidArgument("curve needs at least two points");
  Discontinuity best;
  double best_jump = -1.0;
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
    const double a = curve.points[i].recalled_fraction;
    const double b = curve.points[i + 1].recalled_fraction;
    const double jump = std::fabs(a - b);
    if (jump > best_jump) {
      best_jump = jump;
      best.index = i;
      best.tau = curve.points[i].tau;
      best.recall_before = std::max(a, b);
      best.recall_after = std::min(a, b);
    }
  }
  return best;
}

BimodalitySummary bimodality_summary(const std::vector<EvalRecord>& records) {
  const auto rs = usable(records);
  if (rs.empty()) throw InvalidArgument("bimodality summary needs at least one scored record");
  BimodalitySummary s;
  s.n = rs.size();
  std::size_t low = 0, high = 0;
  for (const auto* r : rs) {
    if (r->p_en <= 0.1) ++low;
    if (r->p_en >= 0.9) ++high;
    const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(std::floor(r->p_en * 10.0 + 1e-9)));
    ++s.histogram[bin];
  }
  const double n = static_cast<double>(s.n);
  s.mass_low = static_cast<double>(low) / n;
  s.mass_high = static_cast<double>(high) / n;
  s.mass_mid = static_cast<double>(s.n - low - high) / n;
  return s;
}

}  // namespace modelctl
