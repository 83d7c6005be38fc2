#include "oa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oa::nn {

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& kernels,
                       std::size_t stride) {
  if (input.rank() != 3)
    throw std::invalid_argument("conv2d: input must be HxWxC");
  if (kernels.rank() != 4 || kernels.dim(0) != kernels.dim(1))
    throw std::invalid_argument("conv2d: kernels must be kxkxCxF");
  if (kernels.dim(0) % 2 == 0)
    throw std::invalid_argument("conv2d: kernel size must be odd");
  if (kernels.dim(2) != input.dim(2))
    throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
}

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t pad,
                         std::size_t stride) {
  std::size_t padded = in + 2 * pad;
  if (padded < k) throw std::invalid_argument("conv2d: kernel larger than input");
  return (padded - k) / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t pad,
              std::size_t stride) {
  check_conv_shapes(input, kernels, stride);
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t K = kernels.dim(0), F = kernels.dim(3);
  const std::size_t OH = conv_out_dim(H, K, pad, stride);
  const std::size_t OW = conv_out_dim(W, K, pad, stride);

  Tensor out({OH, OW, F});
  for (std::size_t oy = 0; oy < OH; ++oy) {
    for (std::size_t ox = 0; ox < OW; ++ox) {
      double* out_px = &out.v[(oy * OW + ox) * F];
      for (std::size_t ky = 0; ky < K; ++ky) {
        std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                            static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                              static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* in_px = &input.v[(iy * W + ix) * C];
          const double* ker_px = &kernels.v[((ky * K + kx) * C) * F];
          for (std::size_t c = 0; c < C; ++c) {
            double xv = in_px[c];
            const double* kc = ker_px + c * F;
            for (std::size_t f = 0; f < F; ++f) out_px[f] += xv * kc[f];
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrad conv2d_backward(const Tensor& input, const Tensor& kernels,
                           std::size_t pad, std::size_t stride,
                           const Tensor& grad_out) {
  check_conv_shapes(input, kernels, stride);
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t K = kernels.dim(0), F = kernels.dim(3);
  const std::size_t OH = conv_out_dim(H, K, pad, stride);
  const std::size_t OW = conv_out_dim(W, K, pad, stride);
  if (grad_out.shape != std::vector<std::size_t>{OH, OW, F})
    throw std::invalid_argument("conv2d_backward: grad_out shape mismatch");

  Conv2dGrad g{input.zeros_like(), kernels.zeros_like()};
  for (std::size_t oy = 0; oy < OH; ++oy) {
    for (std::size_t ox = 0; ox < OW; ++ox) {
      const double* go_px = &grad_out.v[(oy * OW + ox) * F];
      for (std::size_t ky = 0; ky < K; ++ky) {
        std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                            static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < K; ++kx) {
          std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                              static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const double* in_px = &input.v[(iy * W + ix) * C];
          double* gin_px = &g.input.v[(iy * W + ix) * C];
          for (std::size_t c = 0; c < C; ++c) {
            const double* kc = &kernels.v[(((ky * K + kx) * C) + c) * F];
            double* gkc = &g.kernels.v[(((ky * K + kx) * C) + c) * F];
            double xv = in_px[c];
            double acc = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
              acc += kc[f] * go_px[f];
              gkc[f] += xv * go_px[f];
            }
            gin_px[c] += acc;
          }
        }
      }
    }
  }
  return g;
}

Tensor max_pool(const Tensor& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 3)
    throw std::invalid_argument("max_pool: input must be HxWxC");
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  if (window < 1 || window > H || window > W)
    throw std::invalid_argument("max_pool: window larger than input");
  if (stride < 1) throw std::invalid_argument("max_pool: stride must be >= 1");
  const std::size_t OH = (H - window) / stride + 1;
  const std::size_t OW = (W - window) / stride + 1;

  Tensor out({OH, OW, C});
  for (std::size_t oy = 0; oy < OH; ++oy)
    for (std::size_t ox = 0; ox < OW; ++ox)
      for (std::size_t c = 0; c < C; ++c) {
        double best = input.at3(oy * stride, ox * stride, c);
        for (std::size_t wy = 0; wy < window; ++wy)
          for (std::size_t wx = 0; wx < window; ++wx)
            best = std::max(best, input.at3(oy * stride + wy, ox * stride + wx, c));
        out.at3(oy, ox, c) = best;
      }
  return out;
}

Tensor max_pool_backward(const Tensor& input, std::size_t window,
                         std::size_t stride, const Tensor& grad_out) {
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t OH = (H - window) / stride + 1;
  const std::size_t OW = (W - window) / stride + 1;
  if (grad_out.shape != std::vector<std::size_t>{OH, OW, C})
    throw std::invalid_argument("max_pool_backward: grad_out shape mismatch");

  Tensor grad_in = input.zeros_like();
  for (std::size_t oy = 0; oy < OH; ++oy)
    for (std::size_t ox = 0; ox < OW; ++ox)
      for (std::size_t c = 0; c < C; ++c) {
        // First occurrence in row-major order wins on ties.
        std::size_t by = oy * stride, bx = ox * stride;
        double best = input.at3(by, bx, c);
        for (std::size_t wy = 0; wy < window; ++wy)
          for (std::size_t wx = 0; wx < window; ++wx) {
            double val = input.at3(oy * stride + wy, ox * stride + wx, c);
            if (val > best) {
              best = val;
              by = oy * stride + wy;
              bx = ox * stride + wx;
            }
          }
        grad_in.at3(by, bx, c) += grad_out.at3(oy, ox, c);
      }
  return grad_in;
}

namespace {

struct RoiSpan {
  std::size_t x0, x1, y0, y1;  // feature-cell bounds, half-open
};

RoiSpan project_roi(const Tensor& featmap, const Box& box,
                    double spatial_scale) {
  const auto H = static_cast<std::ptrdiff_t>(featmap.dim(0));
  const auto W = static_cast<std::ptrdiff_t>(featmap.dim(1));
  auto clamp_cell = [](std::ptrdiff_t v, std::ptrdiff_t hi) {
    return std::clamp<std::ptrdiff_t>(v, 0, hi);
  };
  std::ptrdiff_t x0 = clamp_cell(static_cast<std::ptrdiff_t>(
                                     std::floor(box.x * spatial_scale)), W);
  std::ptrdiff_t x1 = clamp_cell(static_cast<std::ptrdiff_t>(
                                     std::ceil(box.x2() * spatial_scale)), W);
  std::ptrdiff_t y0 = clamp_cell(static_cast<std::ptrdiff_t>(
                                     std::floor(box.y * spatial_scale)), H);
  std::ptrdiff_t y1 = clamp_cell(static_cast<std::ptrdiff_t>(
                                     std::ceil(box.y2() * spatial_scale)), H);
  if (x1 <= x0 || y1 <= y0)
    throw std::invalid_argument("roi_pool: projected box misses the feature map");
  return {static_cast<std::size_t>(x0), static_cast<std::size_t>(x1),
          static_cast<std::size_t>(y0), static_cast<std::size_t>(y1)};
}

// Half-open span of feature cells backing grid cell i of G over extent n.
std::pair<std::size_t, std::size_t> roi_cell_span(std::size_t i, std::size_t G,
                                                  std::size_t n) {
  std::size_t lo = i * n / G;
  std::size_t hi = std::max(lo + 1, ((i + 1) * n + G - 1) / G);  // ceil
  return {lo, hi};
}

}  // namespace

Tensor roi_pool(const Tensor& featmap, const Box& box, double spatial_scale,
                std::size_t grid) {
  if (featmap.rank() != 3)
    throw std::invalid_argument("roi_pool: feature map must be HxWxC");
  if (grid < 1) throw std::invalid_argument("roi_pool: grid must be >= 1");
  RoiSpan roi = project_roi(featmap, box, spatial_scale);
  const std::size_t C = featmap.dim(2);
  const std::size_t bh = roi.y1 - roi.y0, bw = roi.x1 - roi.x0;

  Tensor out({grid, grid, C});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    auto [r0, r1] = roi_cell_span(gy, grid, bh);
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto [c0, c1] = roi_cell_span(gx, grid, bw);
      for (std::size_t c = 0; c < C; ++c) {
        double best = featmap.at3(roi.y0 + r0, roi.x0 + c0, c);
        for (std::size_t y = r0; y < r1; ++y)
          for (std::size_t x = c0; x < c1; ++x)
            best = std::max(best, featmap.at3(roi.y0 + y, roi.x0 + x, c));
        out.at3(gy, gx, c) = best;
      }
    }
  }
  return out;
}

void roi_pool_backward_accum(const Tensor& featmap, const Box& box,
                             double spatial_scale, std::size_t grid,
                             const Tensor& grad_out, Tensor& grad_featmap) {
  if (!grad_featmap.same_shape(featmap))
    throw std::invalid_argument("roi_pool_backward: grad accumulator shape mismatch");
  if (grad_out.shape != std::vector<std::size_t>{grid, grid, featmap.dim(2)})
    throw std::invalid_argument("roi_pool_backward: grad_out shape mismatch");
  RoiSpan roi = project_roi(featmap, box, spatial_scale);
  const std::size_t C = featmap.dim(2);
  const std::size_t bh = roi.y1 - roi.y0, bw = roi.x1 - roi.x0;

  for (std::size_t gy = 0; gy < grid; ++gy) {
    auto [r0, r1] = roi_cell_span(gy, grid, bh);
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto [c0, c1] = roi_cell_span(gx, grid, bw);
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t by = roi.y0 + r0, bx = roi.x0 + c0;
        double best = featmap.at3(by, bx, c);
        for (std::size_t y = r0; y < r1; ++y)
          for (std::size_t x = c0; x < c1; ++x) {
            double val = featmap.at3(roi.y0 + y, roi.x0 + x, c);
            if (val > best) {
              best = val;
              by = roi.y0 + y;
              bx = roi.x0 + x;
            }
          }
        grad_featmap.at3(by, bx, c) += grad_out.at3(gy, gx, c);
      }
    }
  }
}

Tensor roi_pool_backward(const Tensor& featmap, const Box& box,
                         double spatial_scale, std::size_t grid,
                         const Tensor& grad_out) {
  Tensor grad = featmap.zeros_like();
  roi_pool_backward_accum(featmap, box, spatial_scale, grid, grad_out, grad);
  return grad;
}

namespace {

// Views a rank-1 tensor as a single-row batch.
std::pair<std::size_t, std::size_t> fc_batch_dims(const Tensor& input) {
  if (input.rank() == 1) return {1, input.dim(0)};
  if (input.rank() == 2) return {input.dim(0), input.dim(1)};
  throw std::invalid_argument("fully_connected: input must be N or BxN");
}

}  // namespace

Tensor fully_connected(const Tensor& input, const Tensor& weights,
                       const Tensor& bias) {
  auto [B, N] = fc_batch_dims(input);
  if (weights.rank() != 2 || weights.dim(1) != N)
    throw std::invalid_argument("fully_connected: weights must be MxN");
  const std::size_t M = weights.dim(0);
  if (bias.rank() != 1 || bias.dim(0) != M)
    throw std::invalid_argument("fully_connected: bias must have M entries");

  Tensor out(input.rank() == 1 ? std::vector<std::size_t>{M}
                               : std::vector<std::size_t>{B, M});
  for (std::size_t b = 0; b < B; ++b) {
    const double* x = &input.v[b * N];
    double* y = &out.v[b * M];
    for (std::size_t m = 0; m < M; ++m) {
      const double* w = &weights.v[m * N];
      double acc = bias.v[m];
      for (std::size_t n = 0; n < N; ++n) acc += w[n] * x[n];
      y[m] = acc;
    }
  }
  return out;
}

FcGrad fully_connected_backward(const Tensor& input, const Tensor& weights,
                                const Tensor& grad_out) {
  auto [B, N] = fc_batch_dims(input);
  const std::size_t M = weights.dim(0);
  if (grad_out.size() != B * M)
    throw std::invalid_argument("fully_connected_backward: grad_out shape mismatch");

  FcGrad g{input.zeros_like(), weights.zeros_like(), Tensor({M})};
  for (std::size_t b = 0; b < B; ++b) {
    const double* x = &input.v[b * N];
    const double* gy = &grad_out.v[b * M];
    double* gx = &g.input.v[b * N];
    for (std::size_t m = 0; m < M; ++m) {
      const double* w = &weights.v[m * N];
      double* gw = &g.weights.v[m * N];
      double gm = gy[m];
      g.bias.v[m] += gm;
      for (std::size_t n = 0; n < N; ++n) {
        gx[n] += gm * w[n];
        gw[n] += gm * x[n];
      }
    }
  }
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& x : out.v) x = std::max(0.0, x);
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (!input.same_shape(grad_out))
    throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (input.v[i] <= 0.0) grad.v[i] = 0.0;
  return grad;
}

namespace {

void check_bn_shapes(const Tensor& input, const Tensor& gamma,
                     const Tensor& beta) {
  if (input.rank() != 2)
    throw std::invalid_argument("batch_norm: input must be BxD");
  const std::size_t D = input.dim(1);
  if (gamma.size() != D || beta.size() != D)
    throw std::invalid_argument("batch_norm: gamma/beta must have D entries");
}

}  // namespace

Tensor batch_norm_train(const Tensor& input, const Tensor& gamma,
                        const Tensor& beta, double epsilon,
                        BatchNormStats& saved) {
  check_bn_shapes(input, gamma, beta);
  const std::size_t B = input.dim(0), D = input.dim(1);
  if (B < 2)
    throw std::invalid_argument("batch_norm: training batch must have >= 2 rows");

  saved.mean = Tensor({D});
  saved.var = Tensor({D});
  for (std::size_t d = 0; d < D; ++d) {
    double m = 0.0;
    for (std::size_t b = 0; b < B; ++b) m += input.at2(b, d);
    m /= B;
    double v = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      double diff = input.at2(b, d) - m;
      v += diff * diff;
    }
    saved.mean.v[d] = m;
    saved.var.v[d] = v / B;
  }

  Tensor out({B, D});
  for (std::size_t d = 0; d < D; ++d) {
    double inv = 1.0 / std::sqrt(saved.var.v[d] + epsilon);
    for (std::size_t b = 0; b < B; ++b)
      out.at2(b, d) =
          gamma.v[d] * (input.at2(b, d) - saved.mean.v[d]) * inv + beta.v[d];
  }
  return out;
}

Tensor batch_norm_infer(const Tensor& input, const Tensor& gamma,
                        const Tensor& beta, const Tensor& running_mean,
                        const Tensor& running_var, double epsilon) {
  check_bn_shapes(input, gamma, beta);
  const std::size_t B = input.dim(0), D = input.dim(1);
  Tensor out({B, D});
  for (std::size_t d = 0; d < D; ++d) {
    double inv = 1.0 / std::sqrt(running_var.v[d] + epsilon);
    for (std::size_t b = 0; b < B; ++b)
      out.at2(b, d) =
          gamma.v[d] * (input.at2(b, d) - running_mean.v[d]) * inv + beta.v[d];
  }
  return out;
}

void batch_norm_update_running(const BatchNormStats& stats, double momentum,
                               Tensor& running_mean, Tensor& running_var) {
  for (std::size_t d = 0; d < stats.mean.size(); ++d) {
    running_mean.v[d] = momentum * running_mean.v[d] + (1.0 - momentum) * stats.mean.v[d];
    running_var.v[d] = momentum * running_var.v[d] + (1.0 - momentum) * stats.var.v[d];
  }
}

BatchNormGrad batch_norm_backward(const Tensor& input, const Tensor& gamma,
                                  double epsilon, const BatchNormStats& saved,
                                  const Tensor& grad_out) {
  const std::size_t B = input.dim(0), D = input.dim(1);
  BatchNormGrad g{input.zeros_like(), Tensor({D}), Tensor({D})};
  for (std::size_t d = 0; d < D; ++d) {
    double inv = 1.0 / std::sqrt(saved.var.v[d] + epsilon);
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      double xhat = (input.at2(b, d) - saved.mean.v[d]) * inv;
      double gy = grad_out.at2(b, d);
      sum_gy += gy;
      sum_gy_xhat += gy * xhat;
    }
    g.beta.v[d] = sum_gy;
    g.gamma.v[d] = sum_gy_xhat;
    double mean_gy = sum_gy / B;
    double mean_gy_xhat = sum_gy_xhat / B;
    for (std::size_t b = 0; b < B; ++b) {
      double xhat = (input.at2(b, d) - saved.mean.v[d]) * inv;
      g.input.at2(b, d) =
          gamma.v[d] * inv *
          (grad_out.at2(b, d) - mean_gy - xhat * mean_gy_xhat);
    }
  }
  return g;
}

Tensor dropout_mask(const std::vector<std::size_t>& shape, double rate,
                    Rng& rng) {
  if (rate < 0.0 || rate > 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1]");
  Tensor mask(shape);
  if (rate >= 1.0) return mask;  // all zeros
  double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.v) m = rng.u01() < rate ? 0.0 : keep_scale;
  return mask;
}

Tensor apply_mask(const Tensor& input, const Tensor& mask) {
  if (!input.same_shape(mask))
    throw std::invalid_argument("apply_mask: shape mismatch");
  Tensor out = input;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= mask.v[i];
  return out;
}

std::pair<double, std::vector<double>> mse_loss(
    std::span<const double> pred, std::span<const double> target) {
  if (pred.empty() || pred.size() != target.size())
    throw std::invalid_argument("mse_loss: prediction/target length mismatch");
  const std::size_t n = pred.size();
  double loss = 0.0;
  std::vector<double> grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    double diff = pred[i] - target[i];
    loss += diff * diff;
    grad[i] = diff / n;
  }
  return {loss / (2.0 * n), std::move(grad)};
}

void sgd_momentum_step(Param& p, double lr, double momentum,
                       double weight_decay) {
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    p.velocity.v[i] = momentum * p.velocity.v[i] -
                      lr * (p.grad.v[i] + weight_decay * p.value.v[i]);
    p.value.v[i] += p.velocity.v[i];
  }
}

void sgd_momentum_step(std::span<Param* const> params, double lr,
                       double momentum, double weight_decay) {
  for (Param* p : params) sgd_momentum_step(*p, lr, momentum, weight_decay);
}

}  // namespace oa::nn
