#include "oa/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oa {

double intersection_area(const Box& a, const Box& b) {
  double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double fullness_score(double c_f, const ScoringConfig& cfg) {
  return std::pow(1.0 + cfg.q * std::exp(-cfg.beta * (c_f - cfg.alpha)),
                  -1.0 / cfg.gamma);
}

ScoreBreakdown score_components(const Box& p, const Box& g,
                                const ScoringConfig& cfg) {
  double area_g = g.area();
  if (area_g <= 0.0)
    throw std::invalid_argument("score_components: ground-truth box has zero area");
  double inter = intersection_area(p, g);
  double area_p = p.area();

  ScoreBreakdown out;
  out.c_c = inter / area_g;
  out.c_f = area_p > 0.0 ? inter / area_p : 0.0;
  out.s_c = out.c_c * out.c_c;
  out.s_f = fullness_score(out.c_f, cfg);
  out.s_final = cfg.w * out.s_c + (1.0 - cfg.w) * out.s_f;
  return out;
}

double objectness_gt_score(const Box& p, std::span<const Box> gts,
                           const ScoringConfig& cfg) {
  double best = 0.0;
  for (const Box& g : gts)
    best = std::max(best, score_components(p, g, cfg).s_final);
  return best;
}

}  // namespace oa
