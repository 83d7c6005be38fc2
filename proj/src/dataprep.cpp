#include "oa/dataprep.hpp"

#include <algorithm>
#include <cmath>

namespace oa {

Box augment_box(const Box& b, double image_w, double image_h,
                const AugmentLimits& limits, Rng& rng) {
  constexpr double kEps = 1e-9;
  if (image_w <= 0.0 || image_h <= 0.0)
    throw std::invalid_argument("augment_box: image dimensions must be positive");
  if (b.x < -kEps || b.y < -kEps || b.x2() > image_w + kEps ||
      b.y2() > image_h + kEps)
    throw std::invalid_argument("augment_box: box lies outside the image");

  double sw = rng.uniform(1.0 - limits.max_scale_frac, 1.0 + limits.max_scale_frac);
  double sh = rng.uniform(1.0 - limits.max_scale_frac, 1.0 + limits.max_scale_frac);
  Box out;
  out.w = b.w * sw;
  out.h = b.h * sh;
  out.x = b.x + (b.w - out.w) * 0.5;  // scale about the center
  out.y = b.y + (b.h - out.h) * 0.5;
  out.x += rng.uniform(-limits.max_shift_frac * out.w, limits.max_shift_frac * out.w);
  out.y += rng.uniform(-limits.max_shift_frac * out.h, limits.max_shift_frac * out.h);

  // Fit inside the image: shrink if oversized, then translate to fit.
  out.w = std::min(out.w, image_w);
  out.h = std::min(out.h, image_h);
  out.x = std::clamp(out.x, 0.0, image_w - out.w);
  out.y = std::clamp(out.y, 0.0, image_h - out.h);
  return out;
}

std::vector<std::pair<Box, double>> balanced_sample(
    std::span<const std::pair<Box, double>> scored, const SampleSpec& spec,
    Rng& rng) {
  if (spec.bin_count < 1)
    throw std::invalid_argument("balanced_sample: bin_count must be >= 1");
  std::size_t want = std::min(spec.target, scored.size());
  std::vector<std::pair<Box, double>> out;
  if (want == 0) return out;
  out.reserve(want);

  // Bucket candidate indices; bins partition [0,1] uniformly, last closed.
  std::vector<std::vector<std::size_t>> bins(spec.bin_count);
  for (std::size_t i = 0; i < scored.size(); ++i) {
    double s = std::clamp(scored[i].second, 0.0, 1.0);
    std::size_t bin = std::min(static_cast<std::size_t>(s * spec.bin_count),
                               spec.bin_count - 1);
    bins[bin].push_back(i);
  }
  // Pre-shuffle each bin so draws are uniform without replacement.
  for (auto& bin : bins) rng.shuffle(bin);

  std::vector<std::size_t> taken(spec.bin_count, 0);
  auto pop = [&](std::size_t bin) {
    out.push_back(scored[bins[bin][taken[bin]]]);
    ++taken[bin];
  };

  // Quota phase: round-robin over non-empty bins, one draw per pass, until
  // every bin reached its quota or the target is met.
  std::size_t quota = (spec.target + spec.bin_count - 1) / spec.bin_count;
  bool progressed = true;
  while (out.size() < want && progressed) {
    progressed = false;
    for (std::size_t bin = 0; bin < spec.bin_count && out.size() < want; ++bin) {
      if (taken[bin] < quota && taken[bin] < bins[bin].size()) {
        pop(bin);
        progressed = true;
      }
    }
  }

  // Refill phase: bins ordered by remaining supply descending, round-robin.
  if (out.size() < want) {
    std::vector<std::size_t> order(spec.bin_count);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      std::size_t ra = bins[a].size() - taken[a];
      std::size_t rb = bins[b].size() - taken[b];
      if (ra != rb) return ra > rb;
      return a < b;
    });
    while (out.size() < want) {
      for (std::size_t bin : order) {
        if (out.size() >= want) break;
        if (taken[bin] < bins[bin].size()) pop(bin);
      }
    }
  }
  return out;
}

}  // namespace oa
