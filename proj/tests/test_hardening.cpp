#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rrt/hardening.hpp"
#include "rrt/metrics.hpp"
#include "rrt/rng.hpp"

using namespace rrt;

namespace {

// conv(1->2,3x3) . act . maxpool . flatten . dense(8->5) . act . dense(5->3)
Network small_conv_net(std::uint64_t seed) {
  Network net;
  net.name = "small";
  net.input_shape = {1, 6, 6};
  net.class_count = 3;
  net.layers = {LayerSpec::Conv2d(1, 2, 3, 3), LayerSpec::Activation(),
                LayerSpec::MaxPool2d(2, 2),    LayerSpec::Flatten(),
                LayerSpec::Dense(8, 5),        LayerSpec::Activation(),
                LayerSpec::Dense(5, 3)};
  net.params.resize(net.layers.size());
  init_params(net, seed);
  return net;
}

Dataset random_images(Eigen::Index n, std::vector<Eigen::Index> sample_shape, int classes,
                      std::uint64_t seed) {
  Dataset data;
  std::vector<Eigen::Index> shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  data.images = Tensor(shape);
  data.class_count = classes;
  Xoshiro256ss rng(seed);
  for (Eigen::Index i = 0; i < data.images.numel(); ++i)
    data.images[i] = rng.uniform(0.0, 1.0);
  data.labels.resize(static_cast<std::size_t>(n));
  for (auto& label : data.labels) label = static_cast<int>(rng.below(classes));
  return data;
}

// Feature 0 decides the class, feature 1 only sets the profiled maximum.
// Accuracy is 1 iff lambda >= 1.5, and the activation peak is 3.
struct FtFixture {
  Network net;
  Dataset data;
};

FtFixture ft_fixture() {
  FtFixture f;
  f.net.name = "ft";
  f.net.input_shape = {2};
  f.net.class_count = 2;
  f.net.layers = {LayerSpec::Dense(2, 2), LayerSpec::Activation(), LayerSpec::Dense(2, 2)};
  f.net.params.resize(3);
  f.net.params[0] = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0})};
  f.net.params[2] = {Tensor({2, 2}, {1, 0, -1, 0}), Tensor({2}, {-1, 1})};
  f.net.check_consistent();

  f.data.images = Tensor({3, 2}, {0.5, 0, 1.5, 0, 0, 3});
  f.data.labels = {1, 0, 1};
  f.data.class_count = 2;
  return f;
}

}  // namespace

TEST_CASE("profile_max: single sample through identity dense net") {
  Network net;
  net.input_shape = {2};
  net.class_count = 2;
  net.layers = {LayerSpec::Dense(2, 2), LayerSpec::Activation(), LayerSpec::Dense(2, 2)};
  net.params.resize(3);
  net.params[0] = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0})};
  net.params[2] = {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0})};

  Dataset data;
  data.images = Tensor({1, 2}, {3, -2});
  data.labels = {0};
  const ProfileReport report = profile_max(net, data);
  CHECK(report.layer_max.at(1) == 3.0);
  CHECK(report.neuron_max.at(1)(0) == 3.0);
  CHECK(report.neuron_max.at(1)(1) == 0.0);
  CHECK(report.sample_count == 1);
}

TEST_CASE("profile_max: constant zero stream gives zero maxima") {
  Network net = small_conv_net(1);
  Dataset data;
  data.images = Tensor({4, 1, 6, 6});
  data.labels = {0, 1, 2, 0};
  // Zero the biases so activations are exactly zero.
  net.params[0][1] = Tensor({2});
  net.params[4][1] = Tensor({5});
  const ProfileReport report = profile_max(net, data);
  for (const auto& [l, m] : report.layer_max) CHECK(m == 0.0);
}

TEST_CASE("oracle: profile_max equals dump-then-max") {
  const Network net = small_conv_net(2);
  const Dataset data = random_images(40, {1, 6, 6}, 3, 3);

  std::map<int, Eigen::VectorXd> oracle;
  const ForwardTrace trace = forward_trace(net, nullptr, data.batch(0, data.size()));
  for (const auto& [l, acts] : trace.activations) {
    const Eigen::Index width = acts.numel() / data.size();
    Eigen::VectorXd m = Eigen::VectorXd::Constant(width, 0.0);
    for (Eigen::Index b = 0; b < data.size(); ++b)
      m = m.cwiseMax(Eigen::Map<const Eigen::VectorXd>(acts.data() + b * width, width));
    oracle[l] = m;
  }

  const ProfileReport report = profile_max(net, data, true);
  for (const auto& [l, m] : oracle) {
    CHECK(report.layer_max.at(l) == m.maxCoeff());
    CHECK(report.neuron_max.at(l) == m);
  }
  // Batched scan matches the single-pass scan exactly.
  const ProfileReport batched = profile_max(net, data, true, 7);
  for (const auto& [l, m] : oracle) CHECK(batched.neuron_max.at(l) == m);
}

TEST_CASE("harden_ranger: thresholds equal profiled maxima") {
  const Network net = small_conv_net(4);
  const Dataset data = random_images(30, {1, 6, 6}, 3, 5);
  const ProfileReport report = profile_max(net, data, true);

  const ThresholdSet layer_th = harden_ranger(net, report, Granularity::layer);
  CHECK(layer_th.kind == ActivationKind::clipped_relu);
  for (int l : net.activation_layers())
    CHECK(layer_th.per_layer.at(l) == std::max(report.layer_max.at(l), kLambdaFloor));

  const ThresholdSet neuron_th = harden_ranger(net, report, Granularity::neuron);
  for (int l : net.activation_layers())
    CHECK(neuron_th.per_neuron.at(l) == report.neuron_max.at(l).cwiseMax(kLambdaFloor));

  // Hard clip at the observed maxima never binds on the profiling set.
  CHECK(top1_accuracy(net, &layer_th, data) == top1_accuracy(net, nullptr, data));
  CHECK(top1_accuracy(net, &neuron_th, data) == top1_accuracy(net, nullptr, data));
}

TEST_CASE("harden_ranger: neuron granularity needs a neuron-wise report") {
  const Network net = small_conv_net(6);
  const Dataset data = random_images(10, {1, 6, 6}, 3, 7);
  const ProfileReport report = profile_max(net, data, false);
  CHECK_THROWS_AS(harden_ranger(net, report, Granularity::neuron), value_error);
}

TEST_CASE("search_ftclipact: picks the smallest admissible point above lambda*") {
  const FtFixture f = ft_fixture();
  FtClipActConfig cfg;
  cfg.grid_size = 20;
  cfg.fi_budget = 0;
  const ThresholdSet th = search_ftclipact(f.net, f.data, cfg);
  // Peak activation is 3, so the grid steps by 0.15; the smallest candidate
  // preserving accuracy is exactly 1.5.
  CHECK(th.per_layer.at(1) == doctest::Approx(1.5));
  CHECK(th.kind == ActivationKind::clipped_relu);
}

TEST_CASE("search_ftclipact: full tolerance selects the smallest grid point") {
  const FtFixture f = ft_fixture();
  FtClipActConfig cfg;
  cfg.grid_size = 20;
  cfg.fi_budget = 0;
  cfg.accuracy_tolerance = 1.0;
  const ThresholdSet th = search_ftclipact(f.net, f.data, cfg);
  CHECK(th.per_layer.at(1) == doctest::Approx(0.15));
}

TEST_CASE("search_ftclipact: selection never exceeds the profiled max") {
  const FtFixture f = ft_fixture();
  FtClipActConfig cfg;
  cfg.grid_size = 8;
  cfg.fi_budget = 2;
  cfg.ber = 1e-4;
  const ThresholdSet th = search_ftclipact(f.net, f.data, cfg);
  CHECK(th.per_layer.at(1) <= 3.0);
  CHECK(th.per_layer.at(1) > 0.0);
  CHECK_THROWS_AS(search_ftclipact(f.net, f.data, FtClipActConfig{.grid_size = 0}),
                  value_error);
}

TEST_CASE("kd_loss: identical models with a hard margin give exactly zero") {
  const Tensor logits({2, 3}, {1000, 0, 0, 0, 1000, 0});
  const std::vector<int> labels = {0, 1};
  const auto result = kd_loss(logits, logits, labels, Eigen::VectorXd::Zero(0), 4.0, 0.0);
  CHECK(result.kl == 0.0);
  CHECK(result.ce == 0.0);
  CHECK(result.loss == 0.0);
  // Eigen's vectorized exp clamps instead of flushing to zero, so the
  // gradient may carry subnormal dust where IEEE exp would underflow.
  CHECK((result.grad_logits.array().abs() <= 1e-300).all());
}

TEST_CASE("kd_loss: regularizer arithmetic") {
  const Tensor logits({1, 2}, {1000, 0});
  Eigen::VectorXd lambdas(2);
  lambdas << 2, 3;
  const auto result = kd_loss(logits, logits, {0}, lambdas, 1.0, 1.0);
  CHECK(result.reg == 13.0);
  CHECK(result.loss == 13.0);
}

TEST_CASE("kd_loss: error contracts") {
  const Tensor a({1, 3});
  const Tensor b({1, 2});
  CHECK_THROWS_AS(kd_loss(a, b, {0}, Eigen::VectorXd::Zero(0), 1.0, 0.0), shape_error);
  CHECK_THROWS_AS(kd_loss(a, a, {0}, Eigen::VectorXd::Zero(0), 0.0, 0.0), value_error);
  CHECK_THROWS_AS(kd_loss(a, a, {0, 1}, Eigen::VectorXd::Zero(0), 1.0, 0.0), shape_error);
}

TEST_CASE("oracle: kd_loss gradient matches finite differences") {
  Xoshiro256ss rng(0x4D);
  const double h = 1e-5, tol = 1e-5;
  for (int instance = 0; instance < 100; ++instance) {
    Tensor student({4, 5});
    Tensor teacher({4, 5});
    for (Eigen::Index i = 0; i < student.numel(); ++i) {
      student[i] = rng.uniform(-3.0, 3.0);
      teacher[i] = rng.uniform(-3.0, 3.0);
    }
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.below(5));
    const double T = rng.uniform(0.5, 6.0);
    Eigen::VectorXd lambdas = Eigen::VectorXd::Constant(3, 1.5);

    const auto result = kd_loss(student, teacher, labels, lambdas, T, 0.1);
    for (Eigen::Index i = 0; i < student.numel(); ++i) {
      const double keep = student[i];
      student[i] = keep + h;
      const double up = kd_loss(student, teacher, labels, lambdas, T, 0.1).loss;
      student[i] = keep - h;
      const double down = kd_loss(student, teacher, labels, lambdas, T, 0.1).loss;
      student[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double analytic = result.grad_logits[i];
      CHECK(std::abs(analytic - fd) /
                std::max({std::abs(analytic), std::abs(fd), 1.0}) <= tol);
    }
  }
}

TEST_CASE("property: kd loss dominates its CE term (KL >= 0)") {
  Xoshiro256ss rng(0x4B);
  for (int i = 0; i < 300; ++i) {
    Tensor student({2, 4});
    Tensor teacher({2, 4});
    for (Eigen::Index e = 0; e < student.numel(); ++e) {
      student[e] = rng.uniform(-5.0, 5.0);
      teacher[e] = rng.uniform(-5.0, 5.0);
    }
    const std::vector<int> labels = {static_cast<int>(rng.below(4)),
                                     static_cast<int>(rng.below(4))};
    const auto result = kd_loss(student, teacher, labels, Eigen::VectorXd::Ones(2),
                                rng.uniform(0.5, 8.0), rng.uniform(0.0, 1.0));
    CHECK(result.kl >= -1e-15);
    CHECK(result.loss >= result.ce - 1e-12);
  }
}

TEST_CASE("oracle: full-network threshold gradient matches finite differences") {
  const Network net = small_conv_net(8);
  const Dataset data = random_images(3, {1, 6, 6}, 3, 9);
  const Tensor batch = data.batch(0, 3);

  ThresholdSet th;
  th.kind = ActivationKind::hyrelu;
  th.slope_k = 8.0;
  th.last_layer = net.last_hidden_activation();
  th.per_layer[1] = 0.8;
  th.per_neuron[5] = (Eigen::VectorXd(5) << 0.5, 1.0, 1.5, 0.7, 1.2).finished();

  const double T = 4.0, gamma = 0.3;
  auto loss_value = [&]() {
    const Tensor student = forward(net, &th, batch);
    const Tensor teacher = forward(net, nullptr, batch);
    return kd_loss(student, teacher, data.labels, th.flattened(), T, gamma).loss;
  };

  const ForwardTape tape = forward_tape(net, &th, batch);
  const Tensor teacher_logits = forward(net, nullptr, batch);
  const auto kd = kd_loss(tape.logits, teacher_logits, data.labels, th.flattened(), T, gamma);
  BackwardOptions options;
  options.want_param_grads = false;
  const BackwardResult back = backward(net, &th, tape, kd.grad_logits, options);

  const double h = 1e-4, tol = 1e-4;
  auto check_fd = [&](double& lambda, double analytic_plus_reg) {
    const double keep = lambda;
    lambda = keep + h;
    const double up = loss_value();
    lambda = keep - h;
    const double down = loss_value();
    lambda = keep;
    const double fd = (up - down) / (2 * h);
    CHECK(std::abs(analytic_plus_reg - fd) /
              std::max({std::abs(analytic_plus_reg), std::abs(fd), 1.0}) <= tol);
  };

  check_fd(th.per_layer.at(1), back.lambda_grads.at(1)[0] + 2 * gamma * th.per_layer.at(1));
  for (Eigen::Index i = 0; i < 5; ++i)
    check_fd(th.per_neuron.at(5)(i),
             back.lambda_grads.at(5)[i] + 2 * gamma * th.per_neuron.at(5)(i));
}

TEST_CASE("train_proact: zero epochs returns the hybrid initialization bit-exactly") {
  const Network net = small_conv_net(10);
  const Dataset data = random_images(24, {1, 6, 6}, 3, 11);
  TrainConfig cfg;
  cfg.epochs_last_layer = 0;
  cfg.epochs_other_layers = 0;

  const ThresholdSet th = train_proact(net, net, data, cfg);
  const ProfileReport report = profile_max(net, data, false, cfg.batch_size);
  CHECK(th.kind == ActivationKind::hyrelu);
  CHECK(th.last_layer == 5);
  CHECK(th.per_layer.size() == 1);
  CHECK(th.per_layer.at(1) == std::max(report.layer_max.at(1), kLambdaFloor));
  CHECK(th.per_neuron.size() == 1);
  CHECK(th.per_neuron.at(5) == report.neuron_max.at(5).cwiseMax(kLambdaFloor));
}

TEST_CASE("train_fitact: zero epochs returns the neuron-wise initialization bit-exactly") {
  const Network net = small_conv_net(12);
  const Dataset data = random_images(24, {1, 6, 6}, 3, 13);
  TrainConfig cfg;
  cfg.epochs_last_layer = 0;

  const ThresholdSet th = train_fitact(net, net, data, cfg);
  const ProfileReport report = profile_max(net, data, true, cfg.batch_size);
  CHECK(th.kind == ActivationKind::fitact_neuronwise);
  CHECK(th.per_layer.empty());
  for (int l : net.activation_layers())
    CHECK(th.per_neuron.at(l) == report.neuron_max.at(l).cwiseMax(kLambdaFloor));
}

TEST_CASE("granularity contract: hybrid vs all-neuron threshold counts") {
  const Network net = small_conv_net(14);
  const Dataset data = random_images(16, {1, 6, 6}, 3, 15);
  TrainConfig cfg;
  cfg.epochs_last_layer = 1;
  cfg.epochs_other_layers = 1;

  const ThresholdSet proact = train_proact(net, net, data, cfg);
  CHECK(proact.per_layer.size() == net.activation_layers().size() - 1);
  CHECK(proact.per_neuron.size() == 1);
  CHECK(proact.value_count() ==
        net.activation_layers().size() - 1 +
            static_cast<std::size_t>(net.activation_width(net.last_hidden_activation())));

  const ThresholdSet fitact = train_fitact(net, net, data, cfg);
  std::size_t expected = 0;
  for (int l : net.activation_layers())
    expected += static_cast<std::size_t>(net.activation_width(l));
  CHECK(fitact.value_count() == expected);
}

TEST_CASE("progressive isolation: untrained layers stay bit-identical") {
  const Network net = small_conv_net(16);
  const Dataset data = random_images(32, {1, 6, 6}, 3, 17);

  TrainConfig last_only;
  last_only.epochs_last_layer = 3;
  last_only.epochs_other_layers = 0;
  const ThresholdSet base = train_proact(net, net, data, TrainConfig{.epochs_last_layer = 0,
                                                                     .epochs_other_layers = 0});
  const ThresholdSet trained = train_proact(net, net, data, last_only);
  CHECK(trained.per_layer.at(1) == base.per_layer.at(1));       // untouched
  CHECK(trained.per_neuron.at(5) != base.per_neuron.at(5));     // trained

  TrainConfig others_only;
  others_only.epochs_last_layer = 0;
  others_only.epochs_other_layers = 3;
  const ThresholdSet trained2 = train_proact(net, net, data, others_only);
  CHECK(trained2.per_neuron.at(5) == base.per_neuron.at(5));    // untouched
  CHECK(trained2.per_layer.at(1) != base.per_layer.at(1));      // trained
}

TEST_CASE("strong regularization shrinks thresholds") {
  const Network net = small_conv_net(18);
  const Dataset data = random_images(32, {1, 6, 6}, 3, 19);
  TrainConfig cfg;
  cfg.epochs_last_layer = 5;
  cfg.gamma = 1e3;

  const ThresholdSet init = train_fitact(net, net, data, TrainConfig{.epochs_last_layer = 0});
  const ThresholdSet trained = train_fitact(net, net, data, cfg);
  CHECK(trained.flattened().mean() < init.flattened().mean());
}

TEST_CASE("fitact: loss decreases over training on average") {
  const Network net = small_conv_net(20);
  const Dataset data = random_images(64, {1, 6, 6}, 3, 21);
  TrainConfig cfg;
  cfg.epochs_last_layer = 8;
  TrainLog log;
  train_fitact(net, net, data, cfg, &log);
  REQUIRE(log.size() == 8);
  CHECK(log.back().loss <= log.front().loss + 1e-12);
  for (const auto& row : log) CHECK(row.layer_index == -1);
}

TEST_CASE("threshold training error contracts") {
  const Network net = small_conv_net(22);
  Network other = small_conv_net(23);  // different weights
  const Dataset data = random_images(8, {1, 6, 6}, 3, 24);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_proact(net, other, data, cfg), value_error);

  Dataset poisoned = data;
  poisoned.images[0] = std::nan("");
  TrainConfig one;
  one.epochs_last_layer = 1;
  one.epochs_other_layers = 1;
  CHECK_THROWS_AS(train_proact(net, net, poisoned, one), divergence_error);
}

TEST_CASE("train log CSV format") {
  TrainLog log;
  log.push_back({0, 5, 1.5, 0.5, 0.75, 0.25, 2.0});
  const auto path = std::filesystem::temp_directory_path() / "rrt_test_trainlog.csv";
  write_train_log_csv(log, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,layer_index,loss,kl_term,ce_term,reg_term,mean_lambda");
  CHECK(row == "0,5,1.5,0.5,0.75,0.25,2");
  std::filesystem::remove(path);
}
