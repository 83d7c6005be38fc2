#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "oa/nn.hpp"
#include "oa/rng.hpp"
#include "oa/scoring.hpp"
#include "oa/tensor.hpp"

namespace oa {

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t stream_count = 2;
  std::size_t stages_per_stream = 3;
  std::vector<std::size_t> channels = {8, 16, 16};  // per stage
  std::vector<std::size_t> roi_scales = {0, 1, 2};  // stage indices feeding ROI pooling
  std::size_t roi_grid = 3;
  std::vector<std::size_t> fc_widths = {64, 64};
  double dropout_rate = 0.5;
  bool freeze_streams = true;
};

// Throws std::invalid_argument describing the first violated constraint.
void validate_config(const ModelConfig& config);

// Flattened ROI feature length after concatenating all streams and scales.
std::size_t concat_width(const ModelConfig& config);

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t max_proposals_per_batch = 256;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  std::size_t k_folds = 5;  // 1 disables the held-out validation fold
};

struct ConvStage {
  nn::Param kernels;  // k x k x Cin x Cout
};

struct Stream {
  std::vector<ConvStage> stages;
};

struct FcLayer {
  nn::Param weights;
  nn::Param bias;
  nn::Param bn_gamma;
  nn::Param bn_beta;
  Tensor run_mean;
  Tensor run_var;
};

struct Model {
  ModelConfig config;
  std::vector<Stream> streams;
  std::vector<FcLayer> head;  // hidden fc layers plus the width-1 output layer

  // Head parameters always train; stream kernels only when not frozen.
  std::vector<nn::Param*> trainable_params(bool include_streams);
};

Model build(const ModelConfig& config, Rng& rng);

// Per-stream, per-stage feature maps (the stage outputs after pooling).
using StreamFeatures = std::vector<std::vector<Tensor>>;

StreamFeatures stream_features(const Model& model, const Tensor& image);

// One flattened ROI feature row per box, shape |boxes| x concat_width.
Tensor roi_feature_matrix(const Model& model, const StreamFeatures& feats,
                          std::span<const Box> boxes);

// Scores in [0, 1], one per box, inference mode. Boxes must lie inside the
// image; the image must match the configured size (HxWx1).
std::vector<double> predict(const Model& model, const Tensor& image,
                            std::span<const Box> boxes);

struct TrainSample {
  Box box;
  double target;  // precomputed ground-truth objectness score
};

struct TrainImage {
  std::string id;
  Tensor image;
  std::vector<TrainSample> samples;
};

struct EpochStats {
  double train_loss;
  double val_loss;  // NaN when no validation fold is held out
};

using TrainHistory = std::vector<EpochStats>;

// One mini-batch per image (all of its samples, capped at
// max_proposals_per_batch by per-epoch random subsampling). With k_folds >= 2
// the first fold of a seeded image split is held out for validation and the
// best-validation parameters are restored at the end; k_folds == 1 trains on
// everything and keeps the final parameters. Images with fewer than two
// samples are skipped (batch norm needs a batch).
TrainHistory train(Model& model, const std::vector<TrainImage>& dataset,
                   const TrainConfig& tc);

// CSV: header "epoch,train_loss,val_loss", one row per epoch, 6 decimals.
void write_history_csv(const TrainHistory& history, std::ostream& out);

// Fits stream 1's convolutions to regress Sobel edge magnitude (downsampled
// to the last stage's resolution) through a throwaway 1x1 head, cycling over
// the given images. Returns the per-step losses. Gives the second stream an
// edge-oriented role before it is frozen.
std::vector<double> pretrain_edge_stream(Model& model,
                                         std::span<const Tensor> images,
                                         std::size_t steps, double lr,
                                         Rng& rng);

void save_model(const Model& model, std::ostream& out);
Model load_model(std::istream& in);

}  // namespace oa
