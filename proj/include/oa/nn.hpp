#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "oa/rng.hpp"
#include "oa/scoring.hpp"
#include "oa/tensor.hpp"

namespace oa::nn {

enum class Mode { training, inference };

// A trainable tensor with its gradient and SGD momentum velocity.
struct Param {
  Tensor value, grad, velocity;

  Param() = default;
  explicit Param(Tensor v)
      : value(std::move(v)), grad(value.zeros_like()),
        velocity(value.zeros_like()) {}

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

// --- convolution -----------------------------------------------------------
// input HxWxC, kernels kxkxCxF (k odd), zero padding, cross-correlation.

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t pad,
              std::size_t stride);

struct Conv2dGrad {
  Tensor input;
  Tensor kernels;
};
Conv2dGrad conv2d_backward(const Tensor& input, const Tensor& kernels,
                           std::size_t pad, std::size_t stride,
                           const Tensor& grad_out);

// --- max pooling -----------------------------------------------------------
// Floor convention on output dims; gradient routes to the first-occurrence
// argmax in row-major order.

Tensor max_pool(const Tensor& input, std::size_t window, std::size_t stride);
Tensor max_pool_backward(const Tensor& input, std::size_t window,
                         std::size_t stride, const Tensor& grad_out);

// --- ROI pooling ------------------------------------------------------------
// Projects box by spatial_scale, quantizes to feature cells (floor on the min
// edge, ceil on the max edge, clamped to the map), and max-pools a GxG grid
// per channel. Each grid cell spans at least one feature cell.
// Throws std::invalid_argument if the projected box misses the map entirely.

Tensor roi_pool(const Tensor& featmap, const Box& box, double spatial_scale,
                std::size_t grid);
Tensor roi_pool_backward(const Tensor& featmap, const Box& box,
                         double spatial_scale, std::size_t grid,
                         const Tensor& grad_out);
// Accumulating variant used when many boxes share one feature map.
void roi_pool_backward_accum(const Tensor& featmap, const Box& box,
                             double spatial_scale, std::size_t grid,
                             const Tensor& grad_out, Tensor& grad_featmap);

// --- fully connected --------------------------------------------------------
// weights MxN, bias M. Input is a vector (N) or a batch (BxN).

Tensor fully_connected(const Tensor& input, const Tensor& weights,
                       const Tensor& bias);

struct FcGrad {
  Tensor input, weights, bias;
};
FcGrad fully_connected_backward(const Tensor& input, const Tensor& weights,
                                const Tensor& grad_out);

// --- relu -------------------------------------------------------------------

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// --- batch normalization ----------------------------------------------------
// Input BxD, normalized per feature with the in-batch population variance.

struct BatchNormStats {
  Tensor mean, var;  // per feature, population variance
};

// Training-mode forward; fills `saved` for the backward pass.
// Throws std::invalid_argument if the batch has fewer than 2 rows.
Tensor batch_norm_train(const Tensor& input, const Tensor& gamma,
                        const Tensor& beta, double epsilon,
                        BatchNormStats& saved);

Tensor batch_norm_infer(const Tensor& input, const Tensor& gamma,
                        const Tensor& beta, const Tensor& running_mean,
                        const Tensor& running_var, double epsilon);

// running <- momentum * running + (1 - momentum) * batch_stat
void batch_norm_update_running(const BatchNormStats& stats, double momentum,
                               Tensor& running_mean, Tensor& running_var);

struct BatchNormGrad {
  Tensor input, gamma, beta;
};
BatchNormGrad batch_norm_backward(const Tensor& input, const Tensor& gamma,
                                  double epsilon, const BatchNormStats& saved,
                                  const Tensor& grad_out);

// --- dropout ----------------------------------------------------------------
// Inverted dropout; mask entries are 0 or 1/(1-rate) (all 0 when rate = 1).
// Forward/backward both multiply by the same mask.

Tensor dropout_mask(const std::vector<std::size_t>& shape, double rate,
                    Rng& rng);
Tensor apply_mask(const Tensor& input, const Tensor& mask);

// --- loss and optimizer -----------------------------------------------------

// L = 1/(2N) * sum (pred - target)^2, gradient w.r.t. predictions.
std::pair<double, std::vector<double>> mse_loss(std::span<const double> pred,
                                                std::span<const double> target);

// v <- momentum*v - lr*(g + weight_decay*w); w <- w + v
void sgd_momentum_step(Param& p, double lr, double momentum,
                       double weight_decay);
void sgd_momentum_step(std::span<Param* const> params, double lr,
                       double momentum, double weight_decay);

// --- gradient checking ------------------------------------------------------
// Central differences against the analytic gradient of eval_loss with respect
// to x. Returns the max relative error with denominator max(|a|,|n|,1e-8).
template <typename LossFn>
double finite_diff_check(std::span<double> x,
                         std::span<const double> analytic_grad,
                         LossFn&& eval_loss, double epsilon) {
  double max_rel = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double saved = x[i];
    x[i] = saved + epsilon;
    double up = eval_loss();
    x[i] = saved - epsilon;
    double down = eval_loss();
    x[i] = saved;
    double numeric = (up - down) / (2.0 * epsilon);
    double analytic = analytic_grad[i];
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
  }
  return max_rel;
}

}  // namespace oa::nn
