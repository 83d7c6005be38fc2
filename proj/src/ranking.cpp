#include "oa/ranking.hpp"

#include <algorithm>
#include <stdexcept>

namespace oa {

std::vector<ScoredProposal> rank(std::vector<ScoredProposal> proposals,
                                 double min_score) {
  std::erase_if(proposals, [min_score](const ScoredProposal& p) {
    return p.score < min_score;
  });
  std::sort(proposals.begin(), proposals.end(),
            [](const ScoredProposal& a, const ScoredProposal& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.source_index < b.source_index;
            });
  return proposals;
}

std::vector<ScoredProposal> nms(const std::vector<ScoredProposal>& sorted,
                                double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("nms: iou_threshold must be in (0, 1]");
  std::vector<ScoredProposal> kept;
  for (const ScoredProposal& cand : sorted) {
    bool suppressed = false;
    for (const ScoredProposal& k : kept) {
      if (iou(cand.box, k.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

}  // namespace oa
