#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "rrt/layers.hpp"
#include "rrt/rng.hpp"

using namespace rrt;

namespace {

Tensor random_tensor(std::vector<Eigen::Index> shape, Xoshiro256ss& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Central-difference check of layer_backward against a scalar probe loss
// L = sum(output * probe). Kink-prone coordinates are nudged first.
void check_layer_gradients(const LayerSpec& spec, std::vector<Tensor> params, Tensor input,
                           Xoshiro256ss& rng, double tol, double h = 1e-3) {
  std::vector<const Tensor*> param_ptrs;
  for (const Tensor& p : params) param_ptrs.push_back(&p);

  const Tensor out = layer_forward(spec, param_ptrs, input);
  Tensor probe(out.shape());
  for (Eigen::Index i = 0; i < probe.numel(); ++i) probe[i] = rng.uniform(-1.0, 1.0);

  auto loss = [&]() {
    const Tensor y = layer_forward(spec, param_ptrs, input);
    return (y.array() * probe.array()).sum();
  };
  auto rel_err = [](double analytic, double fd) {
    return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1.0});
  };

  const LayerGrads grads = layer_backward(spec, param_ptrs, input, probe);

  for (Eigen::Index i = 0; i < input.numel(); ++i) {
    const double keep = input[i];
    input[i] = keep + h;
    const double up = loss();
    input[i] = keep - h;
    const double down = loss();
    input[i] = keep;
    CHECK(rel_err(grads.input[i], (up - down) / (2 * h)) <= tol);
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params[p].numel(); ++i) {
      const double keep = params[p][i];
      params[p][i] = keep + h;
      const double up = loss();
      params[p][i] = keep - h;
      const double down = loss();
      params[p][i] = keep;
      CHECK(rel_err(grads.params[p][i], (up - down) / (2 * h)) <= tol);
    }
  }
}

// Moves every input coordinate out of the |x - kink| < margin bands so the
// finite-difference stencil stays on one smooth piece.
void nudge_away_from(Tensor& t, const std::vector<double>& kinks, double margin) {
  for (Eigen::Index i = 0; i < t.numel(); ++i)
    for (double kink : kinks)
      if (std::abs(t[i] - kink) < margin) t[i] = kink + (t[i] >= kink ? margin : -margin);
}

}  // namespace

TEST_CASE("dense: identity map") {
  const LayerSpec spec = LayerSpec::Dense(2, 2);
  const Tensor w({2, 2}, {1, 0, 0, 1});
  const Tensor b({2}, {0, 0});
  const Tensor x({1, 2}, {3, -2});
  const Tensor* params[] = {&w, &b};
  const Tensor y = layer_forward(spec, params, x);
  CHECK(y[0] == 3.0);
  CHECK(y[1] == -2.0);

  const Tensor g({1, 2}, {1, 1});
  const LayerGrads grads = layer_backward(spec, params, x, g);
  CHECK(grads.input[0] == 1.0);
  CHECK(grads.input[1] == 1.0);
}

TEST_CASE("dense: bias and batch") {
  const LayerSpec spec = LayerSpec::Dense(2, 1);
  const Tensor w({1, 2}, {2, 3});
  const Tensor b({1}, {0.5});
  const Tensor x({2, 2}, {1, 1, 2, -1});
  const Tensor* params[] = {&w, &b};
  const Tensor y = layer_forward(spec, params, x);
  CHECK(y[0] == doctest::Approx(5.5));
  CHECK(y[1] == doctest::Approx(1.5));
}

TEST_CASE("conv2d: 1x1 kernel scales") {
  const LayerSpec spec = LayerSpec::Conv2d(1, 1, 1, 1);
  const Tensor w({1, 1, 1, 1}, {2});
  const Tensor b({1}, {0});
  const Tensor x = Tensor::constant({1, 1, 3, 3}, 1.0);
  const Tensor* params[] = {&w, &b};
  const Tensor y = layer_forward(spec, params, x);
  CHECK(y.shape() == std::vector<Eigen::Index>{1, 1, 3, 3});
  for (Eigen::Index i = 0; i < y.numel(); ++i) CHECK(y[i] == 2.0);
}

TEST_CASE("conv2d: hand-checked 2x2 kernel") {
  // Single channel 3x3 input, valid 2x2 kernel of ones: each output cell is
  // the window sum.
  const LayerSpec spec = LayerSpec::Conv2d(1, 1, 2, 2);
  const Tensor w({1, 1, 2, 2}, {1, 1, 1, 1});
  const Tensor b({1}, {0});
  const Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor* params[] = {&w, &b};
  const Tensor y = layer_forward(spec, params, x);
  CHECK(y.shape() == std::vector<Eigen::Index>{1, 1, 2, 2});
  CHECK(y[0] == 12.0);  // 1+2+4+5
  CHECK(y[1] == 16.0);
  CHECK(y[2] == 24.0);
  CHECK(y[3] == 28.0);
}

TEST_CASE("maxpool2d: reduces window to max") {
  const LayerSpec spec = LayerSpec::MaxPool2d(2, 2);
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = layer_forward(spec, {}, x);
  CHECK(y.numel() == 1);
  CHECK(y[0] == 4.0);
}

TEST_CASE("avgpool2d: uniform backward jacobian") {
  const LayerSpec spec = LayerSpec::AvgPool2d(2, 2);
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor g({1, 1, 1, 1}, {1});
  const LayerGrads grads = layer_backward(spec, {}, x, g);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(grads.input[i] == 0.25);
}

TEST_CASE("flatten: round trip") {
  const LayerSpec spec = LayerSpec::Flatten();
  const Tensor x({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor y = layer_forward(spec, {}, x);
  CHECK(y.shape() == std::vector<Eigen::Index>{2, 4});
  const LayerGrads grads = layer_backward(spec, {}, x, y);
  CHECK(grads.input.shape() == x.shape());
}

TEST_CASE("shape errors are reported") {
  const LayerSpec dense = LayerSpec::Dense(3, 2);
  const Tensor w({2, 3});
  const Tensor b({2});
  const Tensor* params[] = {&w, &b};
  CHECK_THROWS_AS(layer_forward(dense, params, Tensor({1, 4})), shape_error);
  const Tensor ok({1, 3});
  CHECK_THROWS_AS(layer_backward(dense, params, ok, Tensor({1, 3})), shape_error);
}

TEST_CASE("oracle: backward matches finite differences, 100 instances per kind") {
  Xoshiro256ss rng(0xFD);
  const double tol = 1e-4;

  for (int instance = 0; instance < 100; ++instance) {
    // dense
    {
      const int in = 1 + static_cast<int>(rng.below(5));
      const int out = 1 + static_cast<int>(rng.below(4));
      const int batch = 1 + static_cast<int>(rng.below(3));
      check_layer_gradients(LayerSpec::Dense(in, out),
                            {random_tensor({out, in}, rng), random_tensor({out}, rng)},
                            random_tensor({batch, in}, rng), rng, tol);
    }
    // conv2d
    {
      const int c = 1 + static_cast<int>(rng.below(2));
      const int oc = 1 + static_cast<int>(rng.below(2));
      const int k = 1 + static_cast<int>(rng.below(3));
      const int stride = 1 + static_cast<int>(rng.below(2));
      const int pad = static_cast<int>(rng.below(2));
      const int h = k + static_cast<int>(rng.below(3));
      const int w = k + static_cast<int>(rng.below(3));
      check_layer_gradients(LayerSpec::Conv2d(c, oc, k, k, stride, pad),
                            {random_tensor({oc, c, k, k}, rng), random_tensor({oc}, rng)},
                            random_tensor({2, c, h, w}, rng), rng, tol);
    }
    // pools: pairwise-separated values keep max selection stable under the
    // finite-difference stencil
    {
      const int stride = 1 + static_cast<int>(rng.below(2));
      Tensor x({2, 2, 4, 4});
      std::vector<double> levels(static_cast<std::size_t>(x.numel()));
      for (std::size_t i = 0; i < levels.size(); ++i)
        levels[i] = -8.0 + 0.25 * static_cast<double>(i) + 0.25 * rng.uniform(0.1, 0.9);
      shuffle_in_place(levels, rng);
      for (Eigen::Index i = 0; i < x.numel(); ++i) x[i] = levels[static_cast<std::size_t>(i)];
      check_layer_gradients(LayerSpec::MaxPool2d(2, stride), {}, x, rng, tol);
      check_layer_gradients(LayerSpec::AvgPool2d(2, stride), {}, x, rng, tol);
    }
    // activations
    {
      Tensor x = random_tensor({2, 5}, rng, -2.0, 4.0);
      nudge_away_from(x, {0.0}, 0.05);
      check_layer_gradients(LayerSpec::Activation(ActivationKind::relu), {}, x, rng, tol);

      const double lambda = rng.uniform(0.5, 3.0);
      Tensor xc = x;
      nudge_away_from(xc, {0.0, lambda}, 0.05);
      check_layer_gradients(LayerSpec::Activation(ActivationKind::clipped_relu),
                            {Tensor({1}, {lambda})}, xc, rng, tol);

      LayerSpec smooth = LayerSpec::Activation(ActivationKind::hyrelu);
      smooth.slope_k = rng.uniform(1.0, 15.0);
      Tensor lambdas({5});
      for (Eigen::Index i = 0; i < 5; ++i) lambdas[i] = rng.uniform(0.5, 3.0);
      check_layer_gradients(smooth, {lambdas}, x, rng, tol);
      check_layer_gradients(smooth, {Tensor({1}, {lambda})}, x, rng, tol);
    }
  }
}

TEST_CASE("softmax_temperature: reference values") {
  const Tensor z({2}, {0, 0});
  const Tensor p = softmax_temperature(z, 1.0);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  const Tensor z2({2}, {std::log(2.0), 0.0});
  const Tensor p2 = softmax_temperature(z2, 1.0);
  CHECK(p2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const Tensor z3({2}, {5, 1});
  const Tensor p3 = softmax_temperature(z3, 1e6);
  CHECK(std::abs(p3[0] - 0.5) <= 1e-5);
  CHECK(std::abs(p3[1] - 0.5) <= 1e-5);
}

TEST_CASE("softmax_temperature: rejects non-positive T") {
  CHECK_THROWS_AS(softmax_temperature(Tensor({2}, {1, 2}), 0.0), value_error);
  CHECK_THROWS_AS(softmax_temperature(Tensor({2}, {1, 2}), -1.0), value_error);
}

TEST_CASE("property: softmax rows sum to 1 and shift invariance") {
  Xoshiro256ss rng(0x50F);
  for (int i = 0; i < 200; ++i) {
    const double T = rng.uniform(0.25, 8.0);
    Tensor z = random_tensor({4, 7}, rng, -30.0, 30.0);
    const Tensor p = softmax_temperature(z, T);
    for (Eigen::Index r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (Eigen::Index c = 0; c < 7; ++c) {
        sum += p[r * 7 + c];
        CHECK(p[r * 7 + c] > 0.0);
        CHECK(p[r * 7 + c] <= 1.0);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    Tensor shifted = z;
    const double c0 = rng.uniform(-5.0, 5.0);
    shifted.array() += c0;
    const Tensor p2 = softmax_temperature(shifted, T);
    for (Eigen::Index e = 0; e < p.numel(); ++e)
      CHECK(p2[e] == doctest::Approx(p[e]).epsilon(1e-12));
  }
}

TEST_CASE("property: forward is bit-deterministic") {
  Xoshiro256ss rng(0xDE7);
  const LayerSpec spec = LayerSpec::Conv2d(2, 3, 3, 3, 1, 1);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor x = random_tensor({4, 2, 6, 6}, rng);
  const Tensor* params[] = {&w, &b};
  const Tensor y1 = layer_forward(spec, params, x);
  const Tensor y2 = layer_forward(spec, params, x);
  CHECK((y1.array() == y2.array()).all());
}
