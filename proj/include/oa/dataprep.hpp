#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "oa/rng.hpp"
#include "oa/scoring.hpp"

namespace oa {

struct AugmentLimits {
  double max_shift_frac = 0.2;  // translation per axis, fraction of box size
  double max_scale_frac = 0.2;  // relative size change per axis
};

struct SampleSpec {
  std::size_t bin_count = 10;  // uniform score bins over [0,1], last bin closed
  std::size_t target = 0;      // proposals to sample per image
};

// Scales each dimension by a factor uniform in [1-s, 1+s] about the box
// center, shifts each axis by up to +/- t times the scaled size, then
// translates (and if needed shrinks) the result to fit the image.
// Throws std::invalid_argument if b does not lie inside the image.
Box augment_box(const Box& b, double image_w, double image_h,
                const AugmentLimits& limits, Rng& rng);

// Histogram-balanced sampling: candidates are bucketed by gt_score, a
// per-bin quota of ceil(target/bin_count) is drawn round-robin without
// replacement, and any shortfall is refilled round-robin from the bins with
// the most remaining supply. Output size is min(target, input size).
std::vector<std::pair<Box, double>> balanced_sample(
    std::span<const std::pair<Box, double>> scored, const SampleSpec& spec,
    Rng& rng);

// Shuffles ids and deals them into k folds whose sizes differ by at most 1.
// Throws std::invalid_argument if k < 2 or there are fewer ids than folds.
template <typename T>
std::vector<std::vector<T>> kfold_split(std::vector<T> ids, std::size_t k,
                                        Rng& rng) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (ids.size() < k)
    throw std::invalid_argument("kfold_split: fewer ids than folds");
  rng.shuffle(ids);
  std::vector<std::vector<T>> folds(k);
  std::size_t base = ids.size() / k, extra = ids.size() % k, pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(ids.begin() + pos, ids.begin() + pos + len);
    pos += len;
  }
  return folds;
}

}  // namespace oa
