#include "oa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "oa/dataprep.hpp"

namespace oa {

namespace {

constexpr std::size_t kPlacementTries = 200;
constexpr double kMinIntensity = 0.45;
constexpr double kMaxPairwiseIou = 0.3;
// Half-width of the uniform noise on generator scores. Sized so the stub's
// self-ordering trails a learned re-ranker the way off-the-shelf generators
// do, while staying well correlated with true overlap.
constexpr double kScoreNoise = 0.5;

struct Placement {
  std::vector<std::pair<std::size_t, std::size_t>> pixels;  // (px, py)
  Box bounds;
};

bool inside_ellipse(double px, double py, double x, double y, double bw,
                    double bh) {
  double dx = (px - (x + bw / 2.0)) / (bw / 2.0);
  double dy = (py - (y + bh / 2.0)) / (bh / 2.0);
  return dx * dx + dy * dy <= 1.0;
}

bool inside_triangle(double px, double py, double x, double y, double bw,
                     double bh) {
  // Apex at the top middle, base along the bottom edge.
  double ax = x + bw / 2.0, ay = y;
  double bx = x, by = y + bh;
  double cx = x + bw, cy = y + bh;
  auto side = [&](double x1, double y1, double x2, double y2) {
    return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
  };
  double d1 = side(ax, ay, bx, by);
  double d2 = side(bx, by, cx, cy);
  double d3 = side(cx, cy, ax, ay);
  bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
  bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(has_neg && has_pos);
}

// Rasterizes one shape over pixel centers and records its tight bounds.
Placement rasterize(ShapeKind kind, std::size_t x, std::size_t y,
                    std::size_t bw, std::size_t bh) {
  Placement p;
  std::size_t min_x = x + bw, max_x = 0, min_y = y + bh, max_y = 0;
  for (std::size_t py = y; py < y + bh; ++py)
    for (std::size_t px = x; px < x + bw; ++px) {
      double cx = px + 0.5, cy = py + 0.5;
      bool in = false;
      switch (kind) {
        case ShapeKind::rectangle: in = true; break;
        case ShapeKind::ellipse:
          in = inside_ellipse(cx, cy, x, y, bw, bh);
          break;
        case ShapeKind::triangle:
          in = inside_triangle(cx, cy, x, y, bw, bh);
          break;
      }
      if (!in) continue;
      p.pixels.emplace_back(px, py);
      min_x = std::min(min_x, px);
      max_x = std::max(max_x, px);
      min_y = std::min(min_y, py);
      max_y = std::max(max_y, py);
    }
  if (!p.pixels.empty())
    p.bounds = Box{static_cast<double>(min_x), static_cast<double>(min_y),
                   static_cast<double>(max_x - min_x + 1),
                   static_cast<double>(max_y - min_y + 1)};
  return p;
}

void validate_spec(const SceneSpec& spec) {
  if (spec.width < 16 || spec.height < 16)
    throw std::invalid_argument("scene spec: image must be at least 16x16");
  if (spec.min_objects > spec.max_objects)
    throw std::invalid_argument("scene spec: min_objects > max_objects");
  if (spec.kinds.empty())
    throw std::invalid_argument("scene spec: no shape kinds");
  if (spec.background < 0.0 || spec.background > 1.0 || spec.noise < 0.0)
    throw std::invalid_argument("scene spec: bad background parameters");
}

Box uniform_box(double image_w, double image_h, Rng& rng) {
  double w = rng.uniform(2.0, image_w);
  double h = rng.uniform(2.0, image_h);
  return Box{rng.uniform(0.0, image_w - w), rng.uniform(0.0, image_h - h), w, h};
}

}  // namespace

std::string shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::triangle: return "triangle";
  }
  throw std::invalid_argument("unknown shape kind");
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "rectangle") return ShapeKind::rectangle;
  if (name == "ellipse") return ShapeKind::ellipse;
  if (name == "triangle") return ShapeKind::triangle;
  throw std::invalid_argument("unknown shape kind: " + name);
}

Scene generate_scene(const SceneSpec& spec, Rng& rng) {
  validate_spec(spec);
  Scene scene;
  scene.image = Tensor({spec.height, spec.width, 1});
  for (double& v : scene.image.v)
    v = std::clamp(spec.background + rng.uniform(-spec.noise, spec.noise), 0.0,
                   1.0);

  std::size_t count =
      spec.min_objects +
      rng.uniform_index(spec.max_objects - spec.min_objects + 1);
  std::size_t min_dim = 4;
  std::size_t max_w = std::max(min_dim, spec.width / 2);
  std::size_t max_h = std::max(min_dim, spec.height / 2);

  for (std::size_t i = 0; i < count; ++i) {
    double intensity =
        kMinIntensity +
        (1.0 - kMinIntensity) * (static_cast<double>(i) + rng.u01()) /
            static_cast<double>(count);
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kPlacementTries; ++attempt) {
      ShapeKind kind = spec.kinds[rng.uniform_index(spec.kinds.size())];
      std::size_t bw = min_dim + rng.uniform_index(max_w - min_dim + 1);
      std::size_t bh = min_dim + rng.uniform_index(max_h - min_dim + 1);
      std::size_t x = rng.uniform_index(spec.width - bw + 1);
      std::size_t y = rng.uniform_index(spec.height - bh + 1);
      Placement p = rasterize(kind, x, y, bw, bh);
      if (p.pixels.empty()) continue;
      bool overlaps = false;
      for (const Box& g : scene.gt_boxes)
        if (iou(p.bounds, g) > kMaxPairwiseIou) overlaps = true;
      if (overlaps) continue;
      for (auto [px, py] : p.pixels) scene.image.at3(py, px, 0) = intensity;
      scene.gt_boxes.push_back(p.bounds);
      placed = true;
      break;
    }
    if (!placed)
      throw std::runtime_error("scene generation: no non-overlapping placement found");
  }
  return scene;
}

std::vector<ScoredProposal> generate_proposals(std::span<const Box> gt_boxes,
                                               double image_w, double image_h,
                                               std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("generate_proposals: n must be >= 1");
  std::vector<ScoredProposal> out;
  out.reserve(n);

  // Guaranteed near-optimal proposal per GT, mirroring the assumption that
  // the upstream generator produces at least one good box per object.
  if (!gt_boxes.empty() && n >= 10 * gt_boxes.size()) {
    AugmentLimits tight{0.03, 0.03};
    for (const Box& g : gt_boxes) {
      Box cand = g;
      for (int attempt = 0; attempt < 20; ++attempt) {
        Box jittered = augment_box(g, image_w, image_h, tight, rng);
        if (iou(jittered, g) >= 0.8) {
          cand = jittered;
          break;
        }
      }
      out.push_back(ScoredProposal{cand, 0.0, out.size()});
    }
  }

  AugmentLimits loose{0.4, 0.4};
  while (out.size() < n) {
    Box cand;
    if (!gt_boxes.empty() && rng.u01() < 0.6) {
      const Box& g = gt_boxes[rng.uniform_index(gt_boxes.size())];
      cand = augment_box(g, image_w, image_h, loose, rng);
    } else {
      cand = uniform_box(image_w, image_h, rng);
    }
    out.push_back(ScoredProposal{cand, 0.0, out.size()});
  }

  for (ScoredProposal& p : out) {
    double best = 0.0;
    for (const Box& g : gt_boxes) best = std::max(best, iou(p.box, g));
    p.score =
        std::clamp(best + rng.uniform(-kScoreNoise, kScoreNoise), 0.0, 1.0);
  }
  return out;
}

}  // namespace oa
