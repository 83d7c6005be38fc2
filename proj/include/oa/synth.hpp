#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oa/ranking.hpp"
#include "oa/rng.hpp"
#include "oa/scoring.hpp"
#include "oa/tensor.hpp"

namespace oa {

enum class ShapeKind { rectangle, ellipse, triangle };

std::string shape_kind_name(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

struct SceneSpec {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  std::vector<ShapeKind> kinds = {ShapeKind::rectangle, ShapeKind::ellipse,
                                  ShapeKind::triangle};
  double background = 0.2;   // base intensity
  double noise = 0.05;       // uniform amplitude around the base
  std::uint64_t seed = 1;    // drivers fork a per-scene rng from this
};

struct Scene {
  Tensor image;               // H x W x 1, intensities in [0, 1]
  std::vector<Box> gt_boxes;  // tight integer bounds of each shape's pixels
};

// Renders filled shapes (intensity >= 0.45, pairwise distinct) on a noisy
// background. Ground truth is each shape's own tight pixel bounding box,
// taken before later shapes occlude it; placements are rejection-sampled so
// GT boxes overlap pairwise with IOU <= 0.3.
// Throws std::runtime_error if a placement cannot be found within the retry
// budget, std::invalid_argument on a bad spec.
Scene generate_scene(const SceneSpec& spec, Rng& rng);

// Stub stand-in for an off-the-shelf proposal generator. Mixture per
// proposal: 60% jittered ground truth, 40% uniform random boxes; the
// generator score is the proposal's best IOU against the ground truth plus
// uniform noise in [-0.35, 0.35], clamped to [0, 1]. When n >= 10 * |gt|,
// the output is guaranteed to contain a proposal with IOU >= 0.8 for every
// ground-truth box. All boxes lie inside the image; source_index is the
// emission position.
std::vector<ScoredProposal> generate_proposals(std::span<const Box> gt_boxes,
                                               double image_w, double image_h,
                                               std::size_t n, Rng& rng);

}  // namespace oa
