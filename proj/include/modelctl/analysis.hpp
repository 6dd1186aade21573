#pragma once

#include <array>
#include <optional>
#include <vector>

#include "modelctl/metrics.hpp"

namespace modelctl {

struct RecallPoint {
  double tau = 0.0;
  double recalled_fraction = 0.0;
  std::optional<double> bleu;  // absent when nothing is recalled
};

enum class RecallKind { kSuccess, kFail };

struct RecallCurve {
  RecallKind kind = RecallKind::kSuccess;
  std::vector<RecallPoint> points;
};

// 101 points, 0.00 .. 1.00.
std::vector<double> default_tau_grid();

// Success set at tau: p_en > tau. Fail set: p_en < tau. Records with p_en
// exactly tau are in neither. BLEU is corpus BLEU over the recalled subset.
// Records carrying a decode error are ignored.
std::pair<RecallCurve, RecallCurve> recall_curves(const std::vector<EvalRecord>& records,
                                                  const std::vector<double>& taus);

struct Discontinuity {
  std::size_t index = 0;  // grid index before the jump
  double tau = 0.0;
  double recall_before = 0.0;  // recalled fraction on the high-recall side
  double recall_after = 0.0;
};

// Largest single change in recalled_fraction between consecutive grid points.
// The location on the recall axis is the high-recall side of that jump.
Discontinuity largest_recall_jump(const RecallCurve& curve);

struct BimodalitySummary {
  double mass_low = 0.0;   // p_en <= 0.1
  double mass_mid = 0.0;
  double mass_high = 0.0;  // p_en >= 0.9
  std::array<std::size_t, 10> histogram{};  // equal-width bins over [0, 1]
  std::size_t n = 0;
};

BimodalitySummary bimodality_summary(const std::vector<EvalRecord>& records);

}  // namespace modelctl
