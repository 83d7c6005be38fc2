#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "oa/nn.hpp"
#include "oa/rng.hpp"
#include "oa/tensor.hpp"

using oa::Box;
using oa::Rng;
using oa::Tensor;
namespace nn = oa::nn;

namespace {

constexpr double kEps = 1e-5;
constexpr double kGradTol = 1e-4;

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

// Values spread at least 0.01 apart and at least 0.05 from zero, so pooling
// argmaxes and relu signs survive the finite-difference nudges.
Tensor well_separated(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t.v[i] = (0.05 + 0.01 * static_cast<double>(i)) * (i % 2 ? 1.0 : -1.0);
  rng.shuffle(t.v);
  return t;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& x : t.v) x = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_SUITE("nnkit") {

TEST_CASE("conv2d hand examples") {
  Tensor input({2, 2, 1}, {1, 2, 3, 4});
  Tensor doubler({1, 1, 1, 1}, {2});
  auto out = nn::conv2d(input, doubler, 0, 1);
  CHECK(out.shape == std::vector<std::size_t>{2, 2, 1});
  CHECK(out.v == std::vector<double>{2, 4, 6, 8});

  Rng rng(1);
  Tensor img = random_tensor({4, 4, 1}, rng);
  Tensor identity({3, 3, 1, 1});
  identity.at4(1, 1, 0, 0) = 1.0;
  auto same = nn::conv2d(img, identity, 1, 1);
  CHECK(same.shape == img.shape);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(same.v[i] == doctest::Approx(img.v[i]).epsilon(1e-15));

  Tensor zero({3, 3, 1, 1});
  for (double v : nn::conv2d(img, zero, 1, 1).v) CHECK(v == 0.0);
}

TEST_CASE("conv2d shapes and validation") {
  Rng rng(2);
  Tensor input = random_tensor({5, 5, 2}, rng);
  auto out = nn::conv2d(input, random_tensor({3, 3, 2, 4}, rng), 1, 1);
  CHECK(out.shape == std::vector<std::size_t>{5, 5, 4});

  auto strided = nn::conv2d(input, random_tensor({3, 3, 2, 4}, rng), 0, 2);
  CHECK(strided.shape == std::vector<std::size_t>{2, 2, 4});

  CHECK_THROWS_AS(nn::conv2d(input, random_tensor({2, 2, 2, 1}, rng), 0, 1),
                  std::invalid_argument);  // even kernel
  CHECK_THROWS_AS(nn::conv2d(input, random_tensor({3, 3, 3, 1}, rng), 0, 1),
                  std::invalid_argument);  // channel mismatch
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(3);
  const std::pair<std::size_t, std::size_t> cases[] = {{1, 1}, {0, 1}, {0, 2}};
  for (auto [pad, stride] : cases) {
    Tensor input = random_tensor({5, 5, 2}, rng);
    Tensor kernels = random_tensor({3, 3, 2, 3}, rng);
    Tensor weights = random_tensor(
        nn::conv2d(input, kernels, pad, stride).shape, rng);

    auto grads = nn::conv2d_backward(input, kernels, pad, stride, weights);
    auto loss = [&] { return dot(nn::conv2d(input, kernels, pad, stride), weights); };
    CHECK(nn::finite_diff_check(input.v, grads.input.v, loss, kEps) < kGradTol);
    CHECK(nn::finite_diff_check(kernels.v, grads.kernels.v, loss, kEps) <
          kGradTol);
  }
}

TEST_CASE("max pool forward") {
  Tensor input({2, 2, 1}, {1, 2, 3, 4});
  auto out = nn::max_pool(input, 2, 2);
  CHECK(out.shape == std::vector<std::size_t>{1, 1, 1});
  CHECK(out.v[0] == 4.0);

  Tensor constant({4, 4, 2});
  for (double& v : constant.v) v = 0.7;
  for (double v : nn::max_pool(constant, 2, 2).v) CHECK(v == 0.7);

  CHECK_THROWS_AS(nn::max_pool(input, 3, 1), std::invalid_argument);
}

TEST_CASE("max pool backward routes to the first argmax") {
  Tensor input({2, 2, 1}, {1, 2, 3, 4});
  Tensor grad_out({1, 1, 1}, {1.0});
  auto grad = nn::max_pool_backward(input, 2, 2, grad_out);
  CHECK(grad.v == std::vector<double>{0, 0, 0, 1});

  Tensor ties({2, 2, 1}, {5, 5, 5, 5});
  auto tied = nn::max_pool_backward(ties, 2, 2, grad_out);
  CHECK(tied.v == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("max pool gradient matches finite differences") {
  Rng rng(4);
  Tensor input = well_separated({6, 6, 2}, rng);
  Tensor weights = random_tensor({3, 3, 2}, rng);
  auto grad = nn::max_pool_backward(input, 2, 2, weights);
  auto loss = [&] { return dot(nn::max_pool(input, 2, 2), weights); };
  CHECK(nn::finite_diff_check(input.v, grad.v, loss, kEps) < kGradTol);
}

TEST_CASE("roi pool hand examples") {
  std::vector<double> seq(16);
  for (int i = 0; i < 16; ++i) seq[i] = i + 1;
  Tensor map({4, 4, 1}, seq);

  auto grid2 = nn::roi_pool(map, Box{0, 0, 4, 4}, 1.0, 2);
  CHECK(grid2.shape == std::vector<std::size_t>{2, 2, 1});
  CHECK(grid2.v == std::vector<double>{6, 8, 14, 16});

  auto grid1 = nn::roi_pool(map, Box{0, 0, 4, 4}, 1.0, 1);
  CHECK(grid1.v == std::vector<double>{16});

  // A one-cell box replicates its value across the whole grid.
  auto single = nn::roi_pool(map, Box{1, 1, 1, 1}, 1.0, 2);
  CHECK(single.v == std::vector<double>{6, 6, 6, 6});

  // Cells are at least one feature cell wide; a 2x2 region under a 3x3 grid
  // repeats the trailing row/column.
  Tensor small({2, 2, 1}, {1, 2, 3, 4});
  auto grid3 = nn::roi_pool(small, Box{0, 0, 2, 2}, 1.0, 3);
  CHECK(grid3.v == std::vector<double>{1, 2, 2, 3, 4, 4, 3, 4, 4});

  // Projection by spatial scale: image box (0,0,8,8) on the 4x4 map at 0.5.
  auto scaled = nn::roi_pool(map, Box{0, 0, 8, 8}, 0.5, 2);
  CHECK(scaled.v == grid2.v);

  CHECK_THROWS_AS(nn::roi_pool(map, Box{10, 10, 2, 2}, 1.0, 2),
                  std::invalid_argument);
}

TEST_CASE("roi pool output shape is fixed") {
  Rng rng(5);
  Tensor map = random_tensor({8, 8, 3}, rng);
  for (const Box& b : {Box{0, 0, 1, 1}, Box{2.3, 1.7, 4.1, 5.2},
                       Box{0, 0, 16, 16}}) {
    auto out = nn::roi_pool(map, b, 0.5, 3);
    CHECK(out.shape == std::vector<std::size_t>{3, 3, 3});
  }
}

TEST_CASE("roi pool gradient matches finite differences") {
  Rng rng(6);
  Tensor map = well_separated({8, 8, 2}, rng);
  Box box{2.3, 1.7, 8.9, 10.4};
  Tensor weights = random_tensor({3, 3, 2}, rng);
  auto grad = nn::roi_pool_backward(map, box, 0.5, 3, weights);
  auto loss = [&] { return dot(nn::roi_pool(map, box, 0.5, 3), weights); };
  CHECK(nn::finite_diff_check(map.v, grad.v, loss, kEps) < kGradTol);

  Tensor accum = map.zeros_like();
  nn::roi_pool_backward_accum(map, box, 0.5, 3, weights, accum);
  nn::roi_pool_backward_accum(map, box, 0.5, 3, weights, accum);
  for (std::size_t i = 0; i < accum.size(); ++i)
    CHECK(accum.v[i] == doctest::Approx(2.0 * grad.v[i]).epsilon(1e-12));
}

TEST_CASE("fully connected hand examples") {
  Tensor w({1, 2}, {1, 1});
  Tensor x({2}, {2, 3});
  Tensor b({1}, {1});
  CHECK(nn::fully_connected(x, w, b).v == std::vector<double>{6});

  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor v({3}, {4, 5, 6});
  Tensor zero3({3});
  CHECK(nn::fully_connected(v, eye, zero3).v == std::vector<double>{4, 5, 6});

  Tensor zx({3});
  Tensor bias({3}, {7, 8, 9});
  CHECK(nn::fully_connected(zx, eye, bias).v == std::vector<double>{7, 8, 9});

  Tensor batch({2, 2}, {1, 0, 0, 1});
  auto out = nn::fully_connected(batch, w, b);
  CHECK(out.shape == std::vector<std::size_t>{2, 1});
  CHECK(out.v == std::vector<double>{2, 2});

  Tensor bad({4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(nn::fully_connected(bad, w, b), std::invalid_argument);
}

TEST_CASE("fully connected gradients match finite differences") {
  Rng rng(7);
  for (std::vector<std::size_t> in_shape :
       {std::vector<std::size_t>{6}, std::vector<std::size_t>{3, 6}}) {
    Tensor x = random_tensor(in_shape, rng);
    Tensor w = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor weights = random_tensor(nn::fully_connected(x, w, b).shape, rng);

    auto grads = nn::fully_connected_backward(x, w, weights);
    auto loss = [&] { return dot(nn::fully_connected(x, w, b), weights); };
    CHECK(nn::finite_diff_check(x.v, grads.input.v, loss, kEps) < kGradTol);
    CHECK(nn::finite_diff_check(w.v, grads.weights.v, loss, kEps) < kGradTol);
    CHECK(nn::finite_diff_check(b.v, grads.bias.v, loss, kEps) < kGradTol);
  }
}

TEST_CASE("relu") {
  Tensor x({3}, {-1, 0, 2});
  CHECK(nn::relu(x).v == std::vector<double>{0, 0, 2});

  Tensor neg({3}, {-5, -0.1, -2});
  CHECK(nn::relu(neg).v == std::vector<double>{0, 0, 0});

  Tensor grad_out({3}, {1, 1, 1});
  CHECK(nn::relu_backward(x, grad_out).v == std::vector<double>{0, 0, 1});

  Rng rng(8);
  Tensor input = well_separated({20}, rng);
  Tensor weights = random_tensor({20}, rng);
  auto grad = nn::relu_backward(input, weights);
  auto loss = [&] { return dot(nn::relu(input), weights); };
  CHECK(nn::finite_diff_check(input.v, grad.v, loss, kEps) < kGradTol);
}

TEST_CASE("batch norm forward") {
  Tensor input({2, 1}, {1, 3});
  Tensor gamma({1}, {1});
  Tensor beta({1}, {0});
  nn::BatchNormStats saved;
  auto out = nn::batch_norm_train(input, gamma, beta, 1e-5, saved);
  CHECK(out.v[0] == doctest::Approx(-0.999995).epsilon(1e-6));
  CHECK(out.v[1] == doctest::Approx(0.999995).epsilon(1e-6));
  CHECK(saved.mean.v[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(saved.var.v[0] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor gamma0({1}, {0});
  Tensor beta7({1}, {7});
  auto shifted = nn::batch_norm_train(input, gamma0, beta7, 1e-5, saved);
  CHECK(shifted.v == std::vector<double>{7, 7});

  Tensor run_mean({1}), run_var({1});
  run_var.v[0] = 1.0;
  auto infer = nn::batch_norm_infer(input, gamma, beta, run_mean, run_var, 0.0);
  CHECK(infer.v[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(infer.v[1] == doctest::Approx(3.0).epsilon(1e-12));

  Tensor single({1, 1}, {5});
  CHECK_THROWS_AS(nn::batch_norm_train(single, gamma, beta, 1e-5, saved),
                  std::invalid_argument);
}

TEST_CASE("batch norm running statistics") {
  nn::BatchNormStats stats;
  stats.mean = Tensor({1}, {10});
  stats.var = Tensor({1}, {4});
  Tensor run_mean({1}, {1});
  Tensor run_var({1}, {2});
  nn::batch_norm_update_running(stats, 0.9, run_mean, run_var);
  CHECK(run_mean.v[0] == doctest::Approx(0.9 * 1 + 0.1 * 10).epsilon(1e-12));
  CHECK(run_var.v[0] == doctest::Approx(0.9 * 2 + 0.1 * 4).epsilon(1e-12));
}

TEST_CASE("batch norm gradients match finite differences") {
  Rng rng(9);
  Tensor input = random_tensor({5, 3}, rng);
  Tensor gamma = random_tensor({3}, rng);
  Tensor beta = random_tensor({3}, rng);
  Tensor weights = random_tensor({5, 3}, rng);

  nn::BatchNormStats saved;
  nn::batch_norm_train(input, gamma, beta, 1e-5, saved);
  auto grads = nn::batch_norm_backward(input, gamma, 1e-5, saved, weights);

  auto loss = [&] {
    nn::BatchNormStats fresh;
    return dot(nn::batch_norm_train(input, gamma, beta, 1e-5, fresh), weights);
  };
  CHECK(nn::finite_diff_check(input.v, grads.input.v, loss, kEps) < kGradTol);
  CHECK(nn::finite_diff_check(gamma.v, grads.gamma.v, loss, kEps) < kGradTol);
  CHECK(nn::finite_diff_check(beta.v, grads.beta.v, loss, kEps) < kGradTol);
}

TEST_CASE("dropout") {
  Rng rng(10);
  auto zero_mask = nn::dropout_mask({100}, 0.0, rng);
  for (double v : zero_mask.v) CHECK(v == 1.0);

  auto full_mask = nn::dropout_mask({100}, 1.0, rng);
  for (double v : full_mask.v) CHECK(v == 0.0);

  auto mask = nn::dropout_mask({10000}, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : mask.v) {
    bool valid = v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12;
    CHECK(valid);
    if (v == 0.0) ++zeros;
  }
  CHECK(zeros > 2000);
  CHECK(zeros < 3000);

  Rng a(11), b(11);
  CHECK(nn::dropout_mask({64}, 0.5, a).v == nn::dropout_mask({64}, 0.5, b).v);

  CHECK_THROWS_AS(nn::dropout_mask({4}, -0.1, rng), std::invalid_argument);
  CHECK_THROWS_AS(nn::dropout_mask({4}, 1.5, rng), std::invalid_argument);

  Tensor x({4}, {1, 2, 3, 4});
  Tensor m({4}, {0, 2, 0, 2});
  CHECK(nn::apply_mask(x, m).v == std::vector<double>{0, 4, 0, 8});
}

TEST_CASE("mse loss") {
  std::vector<double> p1 = {1, 0}, t1 = {0, 0};
  auto [l1, g1] = nn::mse_loss(p1, t1);
  CHECK(l1 == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(g1 == std::vector<double>{0.5, 0});

  auto [l2, g2] = nn::mse_loss(t1, t1);
  CHECK(l2 == 0.0);
  CHECK(g2 == std::vector<double>{0, 0});

  std::vector<double> p3 = {2}, t3 = {0};
  auto [l3, g3] = nn::mse_loss(p3, t3);
  CHECK(l3 == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(g3 == std::vector<double>{2});

  std::vector<double> short_t = {0};
  CHECK_THROWS_AS(nn::mse_loss(p1, short_t), std::invalid_argument);

  // The reported gradient is the true derivative of the reported loss.
  Rng rng(12);
  std::vector<double> pred(7), target(7);
  for (auto& x : pred) x = rng.uniform(-1, 1);
  for (auto& x : target) x = rng.uniform(-1, 1);
  auto [loss0, grad] = nn::mse_loss(pred, target);
  auto loss = [&] { return nn::mse_loss(pred, target).first; };
  CHECK(nn::finite_diff_check(pred, grad, loss, kEps) < kGradTol);
}

TEST_CASE("sgd momentum step") {
  nn::Param p(Tensor({1}, {1.0}));
  p.grad.v[0] = 1.0;
  nn::sgd_momentum_step(p, 0.1, 0.9, 0.0);
  CHECK(p.velocity.v[0] == doctest::Approx(-0.1).epsilon(1e-15));
  CHECK(p.value.v[0] == doctest::Approx(0.9).epsilon(1e-15));

  // Second step folds the previous velocity in.
  p.grad.v[0] = 1.0;
  nn::sgd_momentum_step(p, 0.1, 0.9, 0.0);
  CHECK(p.velocity.v[0] == doctest::Approx(-0.19).epsilon(1e-12));
  CHECK(p.value.v[0] == doctest::Approx(0.71).epsilon(1e-12));

  nn::Param idle(Tensor({1}, {3.0}));
  nn::sgd_momentum_step(idle, 0.1, 0.9, 0.0);
  CHECK(idle.value.v[0] == 3.0);

  nn::Param decayed(Tensor({1}, {1.0}));
  nn::sgd_momentum_step(decayed, 0.1, 0.9, 0.5);
  CHECK(decayed.velocity.v[0] == doctest::Approx(-0.05).epsilon(1e-15));
  CHECK(decayed.value.v[0] == doctest::Approx(0.95).epsilon(1e-15));

  nn::Param a(Tensor({1}, {1.0})), b(Tensor({1}, {2.0}));
  a.grad.v[0] = 1.0;
  b.grad.v[0] = 2.0;
  std::vector<nn::Param*> params = {&a, &b};
  nn::sgd_momentum_step(params, 0.1, 0.9, 0.0);
  CHECK(a.value.v[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(b.value.v[0] == doctest::Approx(1.8).epsilon(1e-15));
}

TEST_CASE("finite difference checker calibration") {
  std::vector<double> x = {3.0};
  std::vector<double> analytic = {6.0};
  auto square = [&] { return x[0] * x[0]; };
  CHECK(nn::finite_diff_check(x, analytic, square, kEps) < 1e-9);

  std::vector<double> y = {0.7};
  std::vector<double> slope = {3.0};
  auto line = [&] { return 3.0 * y[0] + 1.0; };
  CHECK(nn::finite_diff_check(y, slope, line, kEps) < 1e-7);

  std::vector<double> wrong = {5.9};
  CHECK(nn::finite_diff_check(x, wrong, square, kEps) > 1e-3);
}

}  // TEST_SUITE
