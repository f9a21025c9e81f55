#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "rrt/activation.hpp"
#include "rrt/rng.hpp"

using namespace rrt;

TEST_CASE("relu basics") {
  CHECK(relu(-3.0) == 0.0);
  CHECK(relu(0.0) == 0.0);
  CHECK(relu(7.5) == 7.5);
}

TEST_CASE("clipped_relu: pass band and clip band") {
  CHECK(clipped_relu(1.5, 2.0) == 1.5);
  CHECK(clipped_relu(3.0, 2.0) == 0.0);
  CHECK(clipped_relu(-1.0, 2.0) == 0.0);
  CHECK(clipped_relu(2.0, 2.0) == 2.0);  // boundary passes
  CHECK_THROWS_AS(clipped_relu(1.0, 0.0), value_error);
  CHECK_THROWS_AS(clipped_relu(1.0, -2.0), value_error);
}

TEST_CASE("hyrelu: reference points") {
  // At x = lambda the sigmoid sits at 1/2, so the output is lambda/2.
  CHECK(hyrelu(2.0, 2.0, 10.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hyrelu(0.0, 2.0, 10.0) == 0.0);
  CHECK(hyrelu(-5.0, 2.0, 10.0) == 0.0);
  // 4 * sigmoid(-20), about 8.24e-9.
  CHECK(hyrelu(4.0, 2.0, 10.0) == doctest::Approx(4.0 / (1.0 + std::exp(20.0))).epsilon(1e-12));
  CHECK_THROWS_AS(hyrelu(1.0, -1.0, 10.0), value_error);
  CHECK_THROWS_AS(hyrelu(1.0, 2.0, 0.0), value_error);
}

TEST_CASE("hyrelu_grad: closed-form point and zero region") {
  const auto g = hyrelu_grad(2.0, 2.0, 10.0);
  CHECK(g.d_dlambda == doctest::Approx(5.0).epsilon(1e-12));  // 2 * 10 * 0.25
  const auto g0 = hyrelu_grad(0.0, 2.0, 10.0);
  CHECK(g0.d_dx == 0.0);
  CHECK(g0.d_dlambda == 0.0);
  const auto gn = hyrelu_grad(-1.0, 2.0, 10.0);
  CHECK(gn.d_dx == 0.0);
  CHECK(gn.d_dlambda == 0.0);
}

TEST_CASE("oracle: hyrelu_grad matches central differences, 100 instances") {
  Xoshiro256ss rng(0xA11);
  const double h = 1e-6, tol = 1e-6;
  auto rel_err = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
  };
  for (int i = 0; i < 100; ++i) {
    double x = rng.uniform(-5.0, 5.0);
    if (std::abs(x) < 1e-2) x = 1e-2;  // stay off the max(0,.) kink
    const double lambda = rng.uniform(0.5, 3.0);
    const double k = rng.uniform(1.0, 20.0);
    const auto g = hyrelu_grad(x, lambda, k);
    const double fd_x = (hyrelu(x + h, lambda, k) - hyrelu(x - h, lambda, k)) / (2 * h);
    const double fd_l = (hyrelu(x, lambda + h, k) - hyrelu(x, lambda - h, k)) / (2 * h);
    CHECK(rel_err(g.d_dx, fd_x) <= tol);
    CHECK(rel_err(g.d_dlambda, fd_l) <= tol);
  }
}

TEST_CASE("property: hard-clip limit at k = 1e4") {
  // Away from the transition band the smooth clip agrees with the hard clip.
  const double lambda = 2.0, k = 1e4;
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double x = -10.0 + 20.0 * i / 1999.0;
    if (std::abs(x - lambda) < 0.05) continue;
    worst = std::max(worst, std::abs(hyrelu(x, lambda, k) - clipped_relu(x, lambda)));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("property: monotone suppression in lambda") {
  Xoshiro256ss rng(0xA12);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(0.01, 6.0);
    const double k = rng.uniform(0.5, 30.0);
    double l1 = rng.uniform(0.1, 5.0), l2 = rng.uniform(0.1, 5.0);
    if (l1 > l2) std::swap(l1, l2);
    CHECK(hyrelu(x, l1, k) <= hyrelu(x, l2, k) + 1e-15);
  }
}

TEST_CASE("property: large faulty inputs are attenuated") {
  Xoshiro256ss rng(0xA13);
  for (int i = 0; i < 500; ++i) {
    const double lambda = rng.uniform(0.5, 4.0);
    const double k = rng.uniform(1.0, 50.0);
    const double x = lambda + 10.0 / k + rng.uniform(0.0, 1e4);
    CHECK(hyrelu(x, lambda, k) <= 4.6e-5 * x);
  }
}

TEST_CASE("ThresholdSet: validation") {
  ThresholdSet th;
  th.last_layer = 3;
  th.per_layer[1] = 2.0;
  th.per_neuron[3] = Eigen::Vector3d(1.0, 2.0, 3.0);
  th.validate();

  ThresholdSet bad = th;
  bad.per_layer[1] = 0.0;
  CHECK_THROWS_AS(bad.validate(), value_error);

  ThresholdSet overlap = th;
  overlap.per_layer[3] = 1.0;  // both granularities on one layer
  CHECK_THROWS_AS(overlap.validate(), value_error);

  CHECK(th.value_count() == 4);
  const Eigen::VectorXd flat = th.flattened();
  CHECK(flat.size() == 4);
  CHECK(flat[0] == 2.0);
  CHECK(flat[3] == 3.0);
}

TEST_CASE("ThresholdSet: JSON round trip") {
  ThresholdSet th;
  th.slope_k = 12.5;
  th.kind = ActivationKind::hyrelu;
  th.last_layer = 10;
  th.per_layer[1] = 0.75;
  th.per_layer[4] = 2.25;
  th.per_neuron[10] = Eigen::Vector4d(0.5, 1.5, 2.5, 3.5);

  const std::string text = th.to_json_string();
  const ThresholdSet back = ThresholdSet::from_json_string(text);
  CHECK(back.slope_k == th.slope_k);
  CHECK(back.kind == th.kind);
  CHECK(back.last_layer == th.last_layer);
  CHECK(back.per_layer == th.per_layer);
  CHECK(back.per_neuron.at(10) == th.per_neuron.at(10));
  // Re-serialization is byte-identical.
  CHECK(back.to_json_string() == text);

  // Neuron-wise extension layers ride in "per_neuron".
  ThresholdSet nw = th;
  nw.per_neuron[1] = Eigen::Vector2d(1.0, 2.0);
  nw.per_layer.erase(1);
  const ThresholdSet back2 = ThresholdSet::from_json_string(nw.to_json_string());
  CHECK(back2.per_neuron.at(1) == nw.per_neuron.at(1));

  CHECK_THROWS_AS(ThresholdSet::from_json_string("{"), io_error);
  CHECK_THROWS_AS(ThresholdSet::from_json_string("{\"k\": 1.0}"), io_error);
}

TEST_CASE("ThresholdSet: file round trip") {
  ThresholdSet th;
  th.last_layer = 2;
  th.per_layer[0] = 1.0;
  th.per_neuron[2] = Eigen::Vector2d(2.0, 4.0);
  const auto path = std::filesystem::temp_directory_path() / "rrt_test_thresholds.json";
  th.save(path);
  const ThresholdSet back = ThresholdSet::load(path);
  CHECK(back.per_layer == th.per_layer);
  CHECK(back.per_neuron.at(2) == th.per_neuron.at(2));
  std::filesystem::remove(path);
}
