#include "oa/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace oa {

std::pair<std::vector<bool>, std::vector<bool>> match_detected(
    std::span<const Box> proposals_topk, std::span<const Box> gts,
    double iou_threshold) {
  std::vector<bool> detected(proposals_topk.size(), false);
  std::vector<bool> covered(gts.size(), false);
  for (std::size_t i = 0; i < proposals_topk.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (iou(proposals_topk[i], gts[j]) >= iou_threshold) {
        detected[i] = true;
        covered[j] = true;
      }
    }
  }
  return {std::move(detected), std::move(covered)};
}

EvalCurves evaluate(std::span<const EvalImage> dataset, std::size_t k_max,
                    double iou_threshold, const ScoringConfig& cfg) {
  if (k_max < 1) throw std::invalid_argument("evaluate: k_max must be >= 1");
  std::size_t total_gt = 0;
  for (const EvalImage& img : dataset) total_gt += img.gt_boxes.size();
  if (total_gt == 0)
    throw std::invalid_argument(
        "evaluate: dataset has no ground-truth boxes, recall undefined");

  // Pooled tallies per k: detected proposals, available proposals,
  // covered GTs, and gt-score sums over the top-k prefix of every image.
  std::vector<std::size_t> detected_num(k_max, 0), available(k_max, 0),
      covered_num(k_max, 0);
  std::vector<double> score_sum(k_max, 0.0);

  for (const EvalImage& img : dataset) {
    std::size_t n = img.proposals.size();
    std::size_t n_use = std::min(n, k_max);
    auto [det, cov] = match_detected(
        std::span<const Box>(img.proposals.data(), n_use), img.gt_boxes,
        iou_threshold);

    // Earliest 1-based rank at which each GT is covered.
    std::vector<std::size_t> first_cover(img.gt_boxes.size(), 0);
    for (std::size_t j = 0; j < img.gt_boxes.size(); ++j) {
      for (std::size_t i = 0; i < n_use; ++i) {
        if (iou(img.proposals[i], img.gt_boxes[j]) >= iou_threshold) {
          first_cover[j] = i + 1;
          break;
        }
      }
    }

    // Prefix sums over ranks.
    std::size_t det_prefix = 0;
    double score_prefix = 0.0;
    std::vector<std::size_t> det_at(n_use + 1, 0);
    std::vector<double> score_at(n_use + 1, 0.0);
    for (std::size_t i = 0; i < n_use; ++i) {
      det_prefix += det[i] ? 1 : 0;
      score_prefix += objectness_gt_score(img.proposals[i], img.gt_boxes, cfg);
      det_at[i + 1] = det_prefix;
      score_at[i + 1] = score_prefix;
    }

    for (std::size_t k = 1; k <= k_max; ++k) {
      std::size_t take = std::min(k, n_use);
      detected_num[k - 1] += det_at[take];
      available[k - 1] += take;
      score_sum[k - 1] += score_at[take];
      for (std::size_t j = 0; j < first_cover.size(); ++j)
        if (first_cover[j] != 0 && first_cover[j] <= k) ++covered_num[k - 1];
    }
  }

  EvalCurves curves;
  curves.k_max = k_max;
  curves.precision.resize(k_max);
  curves.recall.resize(k_max);
  curves.mean_gt_score.resize(k_max);
  for (std::size_t k = 0; k < k_max; ++k) {
    curves.precision[k] =
        available[k] > 0 ? static_cast<double>(detected_num[k]) / available[k]
                         : 0.0;
    curves.recall[k] = static_cast<double>(covered_num[k]) / total_gt;
    curves.mean_gt_score[k] =
        available[k] > 0 ? score_sum[k] / available[k] : 0.0;
  }
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  curves.auc_precision = mean(curves.precision);
  curves.auc_recall = mean(curves.recall);
  curves.auc_mean_score = mean(curves.mean_gt_score);
  return curves;
}

void write_report(const EvalCurves& curves, std::ostream& out) {
  out << "k,precision,recall,mean_gt_score\n";
  char line[128];
  for (std::size_t k = 0; k < curves.k_max; ++k) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f\n", k + 1,
                  curves.precision[k], curves.recall[k],
                  curves.mean_gt_score[k]);
    out << line;
  }
  std::snprintf(line, sizeof(line), "AUC,%.6f,%.6f,%.6f\n",
                curves.auc_precision, curves.auc_recall,
                curves.auc_mean_score);
  out << line;
  if (!out) throw std::runtime_error("write_report: output stream failed");
}

}  // namespace oa
