#pragma once

#include <cstddef>
#include <vector>

#include "oa/scoring.hpp"

namespace oa {

struct ScoredProposal {
  Box box;
  double score = 0.0;
  std::size_t source_index = 0;  // position in the original proposal list
};

// Keeps proposals with score >= min_score, sorted by score descending.
// Equal scores are ordered by ascending source_index.
std::vector<ScoredProposal> rank(std::vector<ScoredProposal> proposals,
                                 double min_score);

// Greedy non-maximal suppression over a score-descending list. A proposal is
// kept iff its IOU with every already-kept proposal is < iou_threshold, so
// threshold 1.0 removes exact duplicates only.
// Throws std::invalid_argument if iou_threshold is outside (0, 1].
std::vector<ScoredProposal> nms(const std::vector<ScoredProposal>& sorted,
                                double iou_threshold);

}  // namespace oa
