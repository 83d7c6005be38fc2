#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "oa/scoring.hpp"

namespace oa {

// Precision, recall and mean ground-truth score as functions of top-k,
// pooled over all images, plus the mean-of-curve AUC summaries.
struct EvalCurves {
  std::size_t k_max = 0;
  std::vector<double> precision;      // index k-1
  std::vector<double> recall;         // index k-1, non-decreasing
  std::vector<double> mean_gt_score;  // index k-1
  double auc_precision = 0.0;
  double auc_recall = 0.0;
  double auc_mean_score = 0.0;
};

// One image of an evaluation dataset; proposals must already be ranked.
struct EvalImage {
  std::vector<Box> proposals;
  std::vector<Box> gt_boxes;
};

// First flag per proposal: IOU with some GT reaches iou_threshold.
// Second flag per GT: some proposal reaches the threshold against it.
// Matching is many-to-one in both directions.
std::pair<std::vector<bool>, std::vector<bool>> match_detected(
    std::span<const Box> proposals_topk, std::span<const Box> gts,
    double iou_threshold);

// Pooled counting over the dataset at every k in 1..k_max. Images with fewer
// than k proposals contribute only their available proposals to the
// denominators. Throws std::invalid_argument if the dataset holds no
// ground-truth boxes at all.
EvalCurves evaluate(std::span<const EvalImage> dataset, std::size_t k_max,
                    double iou_threshold, const ScoringConfig& cfg);

// CSV report: header "k,precision,recall,mean_gt_score", one row per k with
// six decimal places, and a trailing "AUC,..." row.
void write_report(const EvalCurves& curves, std::ostream& out);

}  // namespace oa
