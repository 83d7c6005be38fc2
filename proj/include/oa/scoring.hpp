#pragma once

#include <span>

namespace oa {

// Axis-aligned box over the half-open region [x, x+w) x [y, y+h),
// continuous pixel coordinates.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double x2() const { return x + w; }
  double y2() const { return y + h; }
};

double intersection_area(const Box& a, const Box& b);

// Intersection over union. Defined as 0 when both boxes have zero area.
double iou(const Box& a, const Box& b);

// Parameters of the objectness scoring scheme. alpha/beta/gamma/q shape the
// logistic fullness transfer; w weighs completeness against fullness.
struct ScoringConfig {
  double alpha = 0.5;
  double beta = 12.0;
  double gamma = 0.6;
  double q = 1.0;
  double w = 0.4;
};

struct ScoreBreakdown {
  double c_c = 0.0;      // completeness index, Area(I)/Area(G)
  double c_f = 0.0;      // fullness index, Area(I)/Area(P)
  double s_c = 0.0;      // completeness score, c_c^2
  double s_f = 0.0;      // fullness score, logistic transfer of c_f
  double s_final = 0.0;  // w*s_c + (1-w)*s_f
};

// Logistic fullness transfer: (1 + q*exp(-beta*(c_f - alpha)))^(-1/gamma).
double fullness_score(double c_f, const ScoringConfig& cfg);

// Scores proposal p against a single ground-truth box g.
// Throws std::invalid_argument if g has zero area.
ScoreBreakdown score_components(const Box& p, const Box& g,
                                const ScoringConfig& cfg);

// Highest s_final of p over all ground-truth boxes; 0 for an empty set.
double objectness_gt_score(const Box& p, std::span<const Box> gts,
                           const ScoringConfig& cfg);

}  // namespace oa
