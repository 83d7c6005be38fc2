#include "oa/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "json.hpp"
#include "oa/dataprep.hpp"

namespace oa {

namespace {

constexpr std::size_t kKernelSize = 3;
constexpr std::size_t kConvPad = (kKernelSize - 1) / 2;
constexpr std::size_t kPoolWindow = 2;
constexpr double kBnEps = 1e-5;
constexpr char kCheckpointFormat[] = "oa-checkpoint-v1";

double gauss(Rng& rng) {
  double u1 = std::max(rng.u01(), 1e-300);
  double u2 = rng.u01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

Tensor he_conv(std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
  Tensor t({k, k, cin, cout});
  double stddev = std::sqrt(2.0 / static_cast<double>(k * k * cin));
  for (double& v : t.v) v = stddev * gauss(rng);
  return t;
}

Tensor he_fc(std::size_t m, std::size_t n, Rng& rng) {
  Tensor t({m, n});
  double stddev = std::sqrt(2.0 / static_cast<double>(n));
  for (double& v : t.v) v = stddev * gauss(rng);
  return t;
}

Tensor ones(std::size_t n) {
  Tensor t({n});
  std::fill(t.v.begin(), t.v.end(), 1.0);
  return t;
}

double stage_scale(std::size_t stage) {
  return 1.0 / static_cast<double>(std::size_t{1} << (stage + 1));
}

void accum(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.v[i] += src.v[i];
}

void check_image(const ModelConfig& cfg, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_size ||
      image.dim(1) != cfg.image_size || image.dim(2) != 1)
    throw std::invalid_argument("model: image does not match configured size");
}

void check_box_inside(const ModelConfig& cfg, const Box& b) {
  double s = static_cast<double>(cfg.image_size);
  if (!(b.w > 0.0) || !(b.h > 0.0) || b.x < 0.0 || b.y < 0.0 || b.x2() > s ||
      b.y2() > s)
    throw std::invalid_argument("model: box outside image");
}

// rng == nullptr builds a zero-parameter skeleton (checkpoint loading).
Model make_model(const ModelConfig& config, Rng* rng) {
  validate_config(config);
  Model m;
  m.config = config;
  for (std::size_t si = 0; si < config.stream_count; ++si) {
    Stream stream;
    std::size_t cin = 1;
    for (std::size_t s = 0; s < config.stages_per_stream; ++s) {
      std::size_t cout = config.channels[s];
      Tensor k = rng ? he_conv(kKernelSize, cin, cout, *rng)
                     : Tensor({kKernelSize, kKernelSize, cin, cout});
      stream.stages.push_back(ConvStage{nn::Param(std::move(k))});
      cin = cout;
    }
    m.streams.push_back(std::move(stream));
  }
  std::size_t in = concat_width(config);
  std::vector<std::size_t> widths = config.fc_widths;
  widths.push_back(1);
  for (std::size_t w : widths) {
    FcLayer layer{
        nn::Param(rng ? he_fc(w, in, *rng) : Tensor({w, in})),
        nn::Param(Tensor({w})),
        nn::Param(ones(w)),
        nn::Param(Tensor({w})),
        Tensor({w}),
        ones(w),
    };
    m.head.push_back(std::move(layer));
    in = w;
  }
  return m;
}

struct LayerTrace {
  Tensor input;    // fc input, BxN
  Tensor fc_out;   // BxM
  nn::BatchNormStats stats;  // training mode only
  Tensor bn_out;
  Tensor out;      // layer output (post relu, post dropout if any)
  Tensor mask;     // dropout mask; empty when unused
};

struct HeadTrace {
  nn::Mode mode = nn::Mode::inference;
  std::vector<LayerTrace> layers;
};

// Forward through the FC head. Final layer has no dropout; its post-ReLU
// output is returned unclamped (predict clamps, training does not).
std::vector<double> head_forward(Model& m, Tensor x, nn::Mode mode,
                                 Rng* drop_rng, bool update_running,
                                 HeadTrace& trace) {
  trace.mode = mode;
  trace.layers.clear();
  const std::size_t layer_count = m.head.size();
  for (std::size_t li = 0; li < layer_count; ++li) {
    FcLayer& layer = m.head[li];
    LayerTrace t;
    t.input = std::move(x);
    t.fc_out = nn::fully_connected(t.input, layer.weights.value, layer.bias.value);
    if (mode == nn::Mode::training) {
      t.bn_out = nn::batch_norm_train(t.fc_out, layer.bn_gamma.value,
                                      layer.bn_beta.value, kBnEps, t.stats);
      if (update_running)
        nn::batch_norm_update_running(t.stats, 0.9, layer.run_mean, layer.run_var);
    } else {
      t.bn_out = nn::batch_norm_infer(t.fc_out, layer.bn_gamma.value,
                                      layer.bn_beta.value, layer.run_mean,
                                      layer.run_var, kBnEps);
    }
    t.out = nn::relu(t.bn_out);
    bool last = li + 1 == layer_count;
    if (!last && mode == nn::Mode::training && m.config.dropout_rate > 0.0) {
      t.mask = nn::dropout_mask(t.out.shape, m.config.dropout_rate, *drop_rng);
      t.out = nn::apply_mask(t.out, t.mask);
    }
    x = t.out;
    trace.layers.push_back(std::move(t));
  }
  return x.v;  // Bx1 squeezed
}

// Inference batch norm is an affine map with constant running stats.
nn::BatchNormGrad bn_infer_backward(const Tensor& input, const Tensor& gamma,
                                    const Tensor& running_mean,
                                    const Tensor& running_var, double epsilon,
                                    const Tensor& grad_out) {
  const std::size_t B = input.dim(0), D = input.dim(1);
  nn::BatchNormGrad g{input.zeros_like(), Tensor({D}), Tensor({D})};
  for (std::size_t d = 0; d < D; ++d) {
    double inv = 1.0 / std::sqrt(running_var.v[d] + epsilon);
    for (std::size_t b = 0; b < B; ++b) {
      double gy = grad_out.at2(b, d);
      double xhat = (input.at2(b, d) - running_mean.v[d]) * inv;
      g.input.at2(b, d) = gy * gamma.v[d] * inv;
      g.gamma.v[d] += gy * xhat;
      g.beta.v[d] += gy;
    }
  }
  return g;
}

// Accumulates head parameter gradients; returns the gradient w.r.t. the
// head's input feature matrix.
Tensor head_backward(Model& m, const HeadTrace& trace,
                     std::span<const double> grad_pred) {
  Tensor grad({grad_pred.size(), 1},
              std::vector<double>(grad_pred.begin(), grad_pred.end()));
  for (std::size_t li = m.head.size(); li-- > 0;) {
    FcLayer& layer = m.head[li];
    const LayerTrace& t = trace.layers[li];
    if (t.mask.size() > 0) grad = nn::apply_mask(grad, t.mask);
    grad = nn::relu_backward(t.bn_out, grad);
    nn::BatchNormGrad bg =
        trace.mode == nn::Mode::training
            ? nn::batch_norm_backward(t.fc_out, layer.bn_gamma.value, kBnEps,
                                      t.stats, grad)
            : bn_infer_backward(t.fc_out, layer.bn_gamma.value, layer.run_mean,
                                layer.run_var, kBnEps, grad);
    accum(layer.bn_gamma.grad, bg.gamma);
    accum(layer.bn_beta.grad, bg.beta);
    nn::FcGrad fg =
        nn::fully_connected_backward(t.input, layer.weights.value, bg.input);
    accum(layer.weights.grad, fg.weights);
    accum(layer.bias.grad, fg.bias);
    grad = std::move(fg.input);
  }
  return grad;
}

struct StageTrace {
  Tensor conv_out, relu_out, pool_out;
};

std::vector<StageTrace> stream_forward_trace(const Model& m, std::size_t si,
                                             const Tensor& image) {
  std::vector<StageTrace> trace;
  const Tensor* in = &image;
  for (const ConvStage& stage : m.streams[si].stages) {
    StageTrace t;
    t.conv_out = nn::conv2d(*in, stage.kernels.value, kConvPad, 1);
    t.relu_out = nn::relu(t.conv_out);
    t.pool_out = nn::max_pool(t.relu_out, kPoolWindow, kPoolWindow);
    trace.push_back(std::move(t));
    in = &trace.back().pool_out;
  }
  return trace;
}

// grad_stage_out[s] holds the gradient w.r.t. stage s's pooled output; the
// pass adds the carried gradient for earlier stages into it.
void stream_backward(Model& m, std::size_t si, const Tensor& image,
                     const std::vector<StageTrace>& trace,
                     std::vector<Tensor>& grad_stage_out) {
  for (std::size_t s = trace.size(); s-- > 0;) {
    Tensor g_relu = nn::max_pool_backward(trace[s].relu_out, kPoolWindow,
                                          kPoolWindow, grad_stage_out[s]);
    Tensor g_conv = nn::relu_backward(trace[s].conv_out, g_relu);
    const Tensor& in = s == 0 ? image : trace[s - 1].pool_out;
    nn::Conv2dGrad cg = nn::conv2d_backward(
        in, m.streams[si].stages[s].kernels.value, kConvPad, 1, g_conv);
    accum(m.streams[si].stages[s].kernels.grad, cg.kernels);
    if (s > 0) accum(grad_stage_out[s - 1], cg.input);
  }
}

// Per-segment layout of a flattened ROI feature row: stream-major, then the
// configured roi_scales order, each segment grid*grid*channels long.
void roi_row(const Model& m, const StreamFeatures& feats, const Box& box,
             double* row) {
  std::size_t offset = 0;
  for (std::size_t si = 0; si < m.config.stream_count; ++si) {
    for (std::size_t s : m.config.roi_scales) {
      Tensor pooled =
          nn::roi_pool(feats[si][s], box, stage_scale(s), m.config.roi_grid);
      std::copy(pooled.v.begin(), pooled.v.end(), row + offset);
      offset += pooled.size();
    }
  }
}

std::vector<std::pair<std::string, nn::Param*>> named_params(Model& m) {
  std::vector<std::pair<std::string, nn::Param*>> out;
  for (std::size_t si = 0; si < m.streams.size(); ++si)
    for (std::size_t s = 0; s < m.streams[si].stages.size(); ++s)
      out.emplace_back("stream" + std::to_string(si) + ".stage" +
                           std::to_string(s) + ".kernels",
                       &m.streams[si].stages[s].kernels);
  for (std::size_t li = 0; li < m.head.size(); ++li) {
    std::string base = "head" + std::to_string(li) + ".";
    out.emplace_back(base + "weights", &m.head[li].weights);
    out.emplace_back(base + "bias", &m.head[li].bias);
    out.emplace_back(base + "bn_gamma", &m.head[li].bn_gamma);
    out.emplace_back(base + "bn_beta", &m.head[li].bn_beta);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> named_buffers(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t li = 0; li < m.head.size(); ++li) {
    std::string base = "head" + std::to_string(li) + ".";
    out.emplace_back(base + "run_mean", &m.head[li].run_mean);
    out.emplace_back(base + "run_var", &m.head[li].run_var);
  }
  return out;
}

std::vector<Tensor> snapshot_state(Model& m) {
  std::vector<Tensor> out;
  for (auto& [name, p] : named_params(m)) out.push_back(p->value);
  for (auto& [name, b] : named_buffers(m)) out.push_back(*b);
  return out;
}

void restore_state(Model& m, const std::vector<Tensor>& snap) {
  std::size_t i = 0;
  for (auto& [name, p] : named_params(m)) p->value = snap[i++];
  for (auto& [name, b] : named_buffers(m)) *b = snap[i++];
}

std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void validate_config(const ModelConfig& c) {
  if (c.stream_count != 1 && c.stream_count != 2)
    throw std::invalid_argument("model config: stream_count must be 1 or 2");
  if (c.stages_per_stream < 1)
    throw std::invalid_argument("model config: need at least one stage");
  if (c.channels.size() != c.stages_per_stream)
    throw std::invalid_argument("model config: channels must list one count per stage");
  for (std::size_t ch : c.channels)
    if (ch < 1) throw std::invalid_argument("model config: zero channel count");
  if (c.roi_scales.empty())
    throw std::invalid_argument("model config: roi_scales must be non-empty");
  for (std::size_t s : c.roi_scales)
    if (s >= c.stages_per_stream)
      throw std::invalid_argument("model config: roi scale outside stage range");
  if (c.roi_grid < 1)
    throw std::invalid_argument("model config: roi_grid must be >= 1");
  if (c.dropout_rate < 0.0 || c.dropout_rate > 1.0)
    throw std::invalid_argument("model config: dropout_rate must be in [0,1]");
  std::size_t divisor = std::size_t{1} << c.stages_per_stream;
  if (c.image_size == 0 || c.image_size % divisor != 0)
    throw std::invalid_argument(
        "model config: image_size must be divisible by 2^stages");
  if (c.image_size / divisor == 0)
    throw std::invalid_argument("model config: image too small for stage count");
}

std::size_t concat_width(const ModelConfig& c) {
  std::size_t per_stream = 0;
  for (std::size_t s : c.roi_scales)
    per_stream += c.channels[s] * c.roi_grid * c.roi_grid;
  return per_stream * c.stream_count;
}

std::vector<nn::Param*> Model::trainable_params(bool include_streams) {
  std::vector<nn::Param*> out;
  if (include_streams)
    for (Stream& s : streams)
      for (ConvStage& st : s.stages) out.push_back(&st.kernels);
  for (FcLayer& l : head) {
    out.push_back(&l.weights);
    out.push_back(&l.bias);
    out.push_back(&l.bn_gamma);
    out.push_back(&l.bn_beta);
  }
  return out;
}

Model build(const ModelConfig& config, Rng& rng) {
  return make_model(config, &rng);
}

StreamFeatures stream_features(const Model& model, const Tensor& image) {
  check_image(model.config, image);
  StreamFeatures feats;
  for (std::size_t si = 0; si < model.config.stream_count; ++si) {
    std::vector<Tensor> maps;
    auto trace = stream_forward_trace(model, si, image);
    for (StageTrace& t : trace) maps.push_back(std::move(t.pool_out));
    feats.push_back(std::move(maps));
  }
  return feats;
}

Tensor roi_feature_matrix(const Model& model, const StreamFeatures& feats,
                          std::span<const Box> boxes) {
  const std::size_t width = concat_width(model.config);
  Tensor x({boxes.size(), width});
  for (std::size_t b = 0; b < boxes.size(); ++b)
    roi_row(model, feats, boxes[b], &x.v[b * width]);
  return x;
}

std::vector<double> predict(const Model& model, const Tensor& image,
                            std::span<const Box> boxes) {
  check_image(model.config, image);
  for (const Box& b : boxes) check_box_inside(model.config, b);
  if (boxes.empty()) return {};
  StreamFeatures feats = stream_features(model, image);
  Tensor x = roi_feature_matrix(model, feats, boxes);
  HeadTrace trace;
  // Head forward mutates nothing in inference mode; const_cast keeps one code path.
  std::vector<double> scores = head_forward(
      const_cast<Model&>(model), std::move(x), nn::Mode::inference, nullptr,
      false, trace);
  for (double& s : scores) s = std::clamp(s, 0.0, 1.0);
  return scores;
}

namespace {

void validate_train_config(const TrainConfig& tc) {
  if (!(tc.lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (tc.momentum < 0.0 || tc.weight_decay < 0.0)
    throw std::invalid_argument("train config: negative momentum or weight decay");
  if (tc.max_proposals_per_batch < 1)
    throw std::invalid_argument("train config: max_proposals_per_batch must be >= 1");
  if (tc.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (tc.k_folds < 1) throw std::invalid_argument("train config: k_folds must be >= 1");
}

// Mean per-proposal loss over a set of images in inference mode.
double eval_loss(Model& m, const std::vector<TrainImage>& dataset,
                 std::span<const std::size_t> indices,
                 const std::vector<Tensor>& roi_cache) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t idx : indices) {
    const TrainImage& img = dataset[idx];
    if (img.samples.empty()) continue;
    Tensor x;
    if (!roi_cache.empty()) {
      x = roi_cache[idx];
    } else {
      std::vector<Box> boxes;
      for (const TrainSample& s : img.samples) boxes.push_back(s.box);
      x = roi_feature_matrix(m, stream_features(m, img.image), boxes);
    }
    HeadTrace trace;
    std::vector<double> pred =
        head_forward(m, std::move(x), nn::Mode::inference, nullptr, false, trace);
    std::vector<double> target;
    for (const TrainSample& s : img.samples) target.push_back(s.target);
    auto [loss, grad] = nn::mse_loss(pred, target);
    total += loss * static_cast<double>(pred.size());
    count += pred.size();
  }
  return count == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : total / static_cast<double>(count);
}

}  // namespace

TrainHistory train(Model& model, const std::vector<TrainImage>& dataset,
                   const TrainConfig& tc) {
  validate_train_config(tc);
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const TrainImage& img : dataset) {
    check_image(model.config, img.image);
    for (const TrainSample& s : img.samples)
      check_box_inside(model.config, s.box);
  }

  Rng root(tc.seed);
  Rng fold_rng = root.fork(Rng::hash_id("folds"));
  Rng shuffle_rng = root.fork(Rng::hash_id("shuffle"));
  Rng dropout_rng = root.fork(Rng::hash_id("dropout"));

  std::vector<std::size_t> train_idx, val_idx;
  if (tc.k_folds >= 2) {
    std::vector<std::size_t> ids(dataset.size());
    std::iota(ids.begin(), ids.end(), 0);
    auto folds = kfold_split(std::move(ids), tc.k_folds, fold_rng);
    val_idx = folds[0];
    for (std::size_t f = 1; f < folds.size(); ++f)
      train_idx.insert(train_idx.end(), folds[f].begin(), folds[f].end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
  } else {
    train_idx.resize(dataset.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);
  }

  bool any_batch = false;
  for (std::size_t idx : train_idx)
    if (std::min(dataset[idx].samples.size(), tc.max_proposals_per_batch) >= 2)
      any_batch = true;
  if (!any_batch)
    throw std::invalid_argument(
        "train: no image yields a batch of at least two proposals");

  // With frozen streams the ROI features never change; compute them once.
  std::vector<Tensor> roi_cache;
  if (model.config.freeze_streams) {
    roi_cache.resize(dataset.size());
    for (std::size_t idx = 0; idx < dataset.size(); ++idx) {
      const TrainImage& img = dataset[idx];
      std::vector<Box> boxes;
      for (const TrainSample& s : img.samples) boxes.push_back(s.box);
      roi_cache[idx] =
          roi_feature_matrix(model, stream_features(model, img.image), boxes);
    }
  }

  auto params = model.trainable_params(!model.config.freeze_streams);
  const std::size_t width = concat_width(model.config);

  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state;

  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double total_loss = 0.0;
    std::size_t total_n = 0;
    for (std::size_t idx : order) {
      const TrainImage& img = dataset[idx];
      std::vector<std::size_t> pick(img.samples.size());
      std::iota(pick.begin(), pick.end(), 0);
      shuffle_rng.shuffle(pick);
      std::size_t batch = std::min(pick.size(), tc.max_proposals_per_batch);
      if (batch < 2) continue;
      pick.resize(batch);

      Tensor x({batch, width});
      std::vector<double> target(batch);
      std::vector<StageTrace> stream_traces[2];
      StreamFeatures feats;
      if (!roi_cache.empty()) {
        for (std::size_t b = 0; b < batch; ++b) {
          const double* row = &roi_cache[idx].v[pick[b] * width];
          std::copy(row, row + width, &x.v[b * width]);
          target[b] = img.samples[pick[b]].target;
        }
      } else {
        for (std::size_t si = 0; si < model.config.stream_count; ++si) {
          stream_traces[si] = stream_forward_trace(model, si, img.image);
          std::vector<Tensor> maps;
          for (const StageTrace& t : stream_traces[si])
            maps.push_back(t.pool_out);
          feats.push_back(std::move(maps));
        }
        for (std::size_t b = 0; b < batch; ++b) {
          roi_row(model, feats, img.samples[pick[b]].box, &x.v[b * width]);
          target[b] = img.samples[pick[b]].target;
        }
      }

      HeadTrace trace;
      std::vector<double> pred = head_forward(model, std::move(x),
                                              nn::Mode::training, &dropout_rng,
                                              true, trace);
      auto [loss, grad] = nn::mse_loss(pred, target);
      for (nn::Param* p : params) p->zero_grad();
      Tensor dx = head_backward(model, trace, grad);

      if (roi_cache.empty()) {
        std::vector<std::vector<Tensor>> grad_maps;
        for (std::size_t si = 0; si < model.config.stream_count; ++si) {
          std::vector<Tensor> g;
          for (const StageTrace& t : stream_traces[si])
            g.push_back(t.pool_out.zeros_like());
          grad_maps.push_back(std::move(g));
        }
        for (std::size_t b = 0; b < batch; ++b) {
          const Box& box = img.samples[pick[b]].box;
          std::size_t offset = b * width;
          for (std::size_t si = 0; si < model.config.stream_count; ++si)
            for (std::size_t s : model.config.roi_scales) {
              std::size_t seg = model.config.channels[s] *
                                model.config.roi_grid * model.config.roi_grid;
              Tensor g({model.config.roi_grid, model.config.roi_grid,
                        model.config.channels[s]},
                       std::vector<double>(dx.v.begin() + offset,
                                           dx.v.begin() + offset + seg));
              nn::roi_pool_backward_accum(feats[si][s], box, stage_scale(s),
                                          model.config.roi_grid, g,
                                          grad_maps[si][s]);
              offset += seg;
            }
        }
        for (std::size_t si = 0; si < model.config.stream_count; ++si)
          stream_backward(model, si, img.image, stream_traces[si],
                          grad_maps[si]);
      }

      nn::sgd_momentum_step(params, tc.lr, tc.momentum, tc.weight_decay);
      total_loss += loss * static_cast<double>(batch);
      total_n += batch;
    }

    EpochStats stats;
    stats.train_loss =
        total_n == 0 ? std::numeric_limits<double>::quiet_NaN()
                     : total_loss / static_cast<double>(total_n);
    stats.val_loss = val_idx.empty()
                         ? std::numeric_limits<double>::quiet_NaN()
                         : eval_loss(model, dataset, val_idx, roi_cache);
    history.push_back(stats);
    if (!val_idx.empty() && stats.val_loss < best_val) {
      best_val = stats.val_loss;
      best_state = snapshot_state(model);
    }
  }

  if (!best_state.empty()) restore_state(model, best_state);
  return history;
}

void write_history_csv(const TrainHistory& history, std::ostream& out) {
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    out << (i + 1) << ',' << fmt6(history[i].train_loss) << ','
        << fmt6(history[i].val_loss) << '\n';
  if (!out) throw std::runtime_error("history write failed");
}

std::vector<double> pretrain_edge_stream(Model& model,
                                         std::span<const Tensor> images,
                                         std::size_t steps, double lr,
                                         Rng& rng) {
  if (model.config.stream_count != 2)
    throw std::invalid_argument("edge pretraining needs two streams");
  if (images.empty())
    throw std::invalid_argument("edge pretraining needs at least one image");
  for (const Tensor& img : images) check_image(model.config, img);

  const std::size_t si = 1;  // edge stream
  const std::size_t stages = model.config.stages_per_stream;
  const std::size_t pool_win = std::size_t{1} << stages;

  Tensor sobel_x({3, 3, 1, 1}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
  Tensor sobel_y({3, 3, 1, 1}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
  const double norm = 4.0 * std::sqrt(2.0);

  nn::Param head(he_conv(1, model.config.channels.back(), 1, rng));
  std::vector<nn::Param*> params;
  for (ConvStage& st : model.streams[si].stages) params.push_back(&st.kernels);
  params.push_back(&head);

  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    const Tensor& img = images[step % images.size()];
    Tensor gx = nn::conv2d(img, sobel_x, 1, 1);
    Tensor gy = nn::conv2d(img, sobel_y, 1, 1);
    Tensor mag = gx.zeros_like();
    for (std::size_t i = 0; i < mag.size(); ++i)
      mag.v[i] = std::sqrt(gx.v[i] * gx.v[i] + gy.v[i] * gy.v[i]) / norm;
    Tensor target = nn::max_pool(mag, pool_win, pool_win);

    auto trace = stream_forward_trace(model, si, img);
    Tensor pred = nn::conv2d(trace.back().pool_out, head.value, 0, 1);
    auto [loss, grad] = nn::mse_loss(pred.v, target.v);
    losses.push_back(loss);

    for (nn::Param* p : params) p->zero_grad();
    Tensor g_pred(pred.shape, std::move(grad));
    nn::Conv2dGrad hg =
        nn::conv2d_backward(trace.back().pool_out, head.value, 0, 1, g_pred);
    accum(head.grad, hg.kernels);
    std::vector<Tensor> grad_stage_out;
    for (const StageTrace& t : trace)
      grad_stage_out.push_back(t.pool_out.zeros_like());
    accum(grad_stage_out.back(), hg.input);
    stream_backward(model, si, img, trace, grad_stage_out);
    nn::sgd_momentum_step(params, lr, 0.9, 0.0);
  }
  return losses;
}

namespace {

nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape}, {"values", t.v}};
}

Tensor tensor_from_json(const nlohmann::json& j, const std::string& name) {
  std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
  std::vector<double> values = j.at("values").get<std::vector<double>>();
  Tensor t(std::move(shape), std::move(values));  // validates numel
  (void)name;
  return t;
}

}  // namespace

void save_model(const Model& model, std::ostream& out) {
  Model& m = const_cast<Model&>(model);
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["config"] = {
      {"image_size", m.config.image_size},
      {"stream_count", m.config.stream_count},
      {"stages_per_stream", m.config.stages_per_stream},
      {"channels", m.config.channels},
      {"roi_scales", m.config.roi_scales},
      {"roi_grid", m.config.roi_grid},
      {"fc_widths", m.config.fc_widths},
      {"dropout_rate", m.config.dropout_rate},
      {"freeze_streams", m.config.freeze_streams},
  };
  nlohmann::json params = nlohmann::json::object();
  for (auto& [name, p] : named_params(m)) params[name] = tensor_to_json(p->value);
  j["params"] = std::move(params);
  nlohmann::json buffers = nlohmann::json::object();
  for (auto& [name, b] : named_buffers(m)) buffers[name] = tensor_to_json(*b);
  j["buffers"] = std::move(buffers);
  out << j.dump();
  if (!out) throw std::runtime_error("checkpoint write failed");
}

Model load_model(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint parse error: ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
      throw std::runtime_error("unsupported checkpoint format");
    const nlohmann::json& c = j.at("config");
    ModelConfig cfg;
    cfg.image_size = c.at("image_size").get<std::size_t>();
    cfg.stream_count = c.at("stream_count").get<std::size_t>();
    cfg.stages_per_stream = c.at("stages_per_stream").get<std::size_t>();
    cfg.channels = c.at("channels").get<std::vector<std::size_t>>();
    cfg.roi_scales = c.at("roi_scales").get<std::vector<std::size_t>>();
    cfg.roi_grid = c.at("roi_grid").get<std::size_t>();
    cfg.fc_widths = c.at("fc_widths").get<std::vector<std::size_t>>();
    cfg.dropout_rate = c.at("dropout_rate").get<double>();
    cfg.freeze_streams = c.at("freeze_streams").get<bool>();

    Model m = make_model(cfg, nullptr);
    const nlohmann::json& params = j.at("params");
    for (auto& [name, p] : named_params(m)) {
      Tensor t = tensor_from_json(params.at(name), name);
      if (t.shape != p->value.shape)
        throw std::runtime_error("checkpoint shape mismatch for " + name);
      p->value = std::move(t);
      p->grad = p->value.zeros_like();
      p->velocity = p->value.zeros_like();
    }
    const nlohmann::json& buffers = j.at("buffers");
    for (auto& [name, b] : named_buffers(m)) {
      Tensor t = tensor_from_json(buffers.at(name), name);
      if (t.shape != b->shape)
        throw std::runtime_error("checkpoint shape mismatch for " + name);
      *b = std::move(t);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace oa
