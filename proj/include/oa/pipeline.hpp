#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "oa/ingest.hpp"
#include "oa/metrics.hpp"
#include "oa/model.hpp"
#include "oa/ranking.hpp"
#include "oa/scoring.hpp"
#include "oa/synth.hpp"
#include "oa/tensor.hpp"

namespace oa {

// Whole-file IO; throws std::runtime_error naming the path on failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

enum class ScreenRule { accept_all, min_generator_score };

struct ScreenConfig {
  ScreenRule rule = ScreenRule::accept_all;
  double tau = 0.5;  // min_generator_score: best generator score must reach tau
};

struct HarvestOptions {
  ScreenConfig screen;
  double min_score = 0.5;
  double pre_nms_iou = 0.7;
  double post_nms_iou = 0.5;
  std::size_t top_k = 50;
  // Optional custom per-image screen; overrides `screen` when set.
  std::function<bool(const std::string& id, std::span<const ScoredProposal>)>
      screen_hook;
};

struct HarvestConfig {
  HarvestOptions options;
  std::string input_dir;        // <id>.pgm images + proposals.jsonl, or
                                // annotations.jsonl for stub generation
  std::string checkpoint_path;
  std::string manifest_path;    // empty: skip writing
  std::size_t stub_proposals = 100;  // per image, when generating via stub
  std::uint64_t seed = 1;            // stub generation seed
};

struct HarvestInput {
  std::string id;
  Tensor image;
  std::vector<ScoredProposal> proposals;  // generator scores, file order
};

// Survivor counts after each pipeline stage; each is a non-increasing
// function of the previous within a run.
struct StageCounts {
  std::size_t images_seen = 0;
  std::size_t images_accepted = 0;  // passed the screen
  std::size_t proposals_loaded = 0;
  std::size_t after_pre_nms = 0;
  std::size_t after_min_score = 0;
  std::size_t after_top_k = 0;
  std::size_t after_post_nms = 0;
};

struct HarvestResult {
  std::vector<ObjectRecord> records;
  StageCounts counts;
};

// Per image (processed in id-sorted order): screen, NMS at pre_nms_iou on
// the generator ranking, model scoring, min_score filter, top_k cap, NMS at
// post_nms_iou, then manifest records with 1-based ranks. Deterministic.
HarvestResult harvest_images(const Model& model,
                             std::vector<HarvestInput> inputs,
                             const HarvestOptions& options);

// Directory front end: loads the checkpoint and the input dir (PNM images
// plus proposals.jsonl, or annotations.jsonl to run the stub generator) and
// writes the manifest. An empty input dir yields an empty manifest.
HarvestResult harvest(const HarvestConfig& cfg);

struct EvalOptions {
  std::size_t k_max = 10;
  double iou_threshold = 0.7;
  ScoringConfig scoring;
};

// Evaluates proposals in generator-score order against annotations. Every
// proposal image id must resolve to an annotation record (error lists the
// id); annotated images without proposals still count toward recall.
EvalCurves evaluate_proposals(std::span<const ProposalRecord> proposals,
                              std::span<const AnnotationRecord> annotations,
                              const EvalOptions& opt);

// Same, but proposals are re-ranked by model predictions; `images` must
// supply a tensor per image id.
EvalCurves evaluate_reranked(const Model& model,
                             const std::map<std::string, Tensor>& images,
                             std::span<const ProposalRecord> proposals,
                             std::span<const AnnotationRecord> annotations,
                             const EvalOptions& opt);

struct SweepImage {
  std::string id;
  Tensor image;
  std::vector<Box> proposals;
  std::vector<Box> gt_boxes;
};

struct SweepOptions {
  ModelConfig model;
  TrainConfig train;        // k_folds >= 2; fold 0 is the sweep's validation
  ScoringConfig scoring;    // w is overridden per candidate
  std::size_t k_max = 10;
  double iou_threshold = 0.7;
  std::size_t edge_pretrain_steps = 200;
  double edge_pretrain_lr = 0.02;
};

struct SweepEntry {
  double w;
  double precision_auc;
};

struct SweepResult {
  double best_w = 0.0;
  std::vector<SweepEntry> table;  // candidate order
};

// For each candidate w: recompute ground-truth scores, train a model from a
// shared initialization, and measure precision AUC of the re-ranked
// validation fold. Best w is the highest AUC, ties going to the smaller w.
SweepResult sweep_weight(std::span<const double> candidates,
                         const std::vector<SweepImage>& data,
                         const SweepOptions& opt);

}  // namespace oa
