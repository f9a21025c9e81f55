#pragma once

#include <cstdint>
#include <string>

#include "rrt/errors.hpp"

namespace rrt {

/// Shared knobs for baseline weight training and threshold training.
/// Threshold training runs 50 epochs on the neuron-wise final layer and 20
/// on each layer-wise block, Adam(0.9, 0.999, 1e-8), learning rate halved
/// every 10 epochs, batches of 128.
struct TrainConfig {
  int epochs = 5;  // baseline weight training
  int epochs_last_layer = 50;
  int epochs_other_layers = 20;
  double learning_rate = 0.01;
  int lr_halve_every = 10;
  int batch_size = 128;
  double temperature = 4.0;
  double gamma = 1e-4;   // threshold l2-regularization weight
  double slope_k = 10.0; // smooth-clip slope
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  std::string optimizer = "sgd";  // baseline training: "sgd" or "adam"
  double momentum = 0.9;          // baseline sgd only

  double lr_at_epoch(int epoch) const {
    double lr = learning_rate;
    for (int e = lr_halve_every; e <= epoch; e += lr_halve_every) lr *= 0.5;
    return lr;
  }

  void validate() const {
    if (epochs < 0 || epochs_last_layer < 0 || epochs_other_layers < 0)
      throw value_error("TrainConfig: epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw value_error("TrainConfig: learning rate must be positive");
    if (lr_halve_every <= 0) throw value_error("TrainConfig: lr_halve_every must be positive");
    if (batch_size <= 0) throw value_error("TrainConfig: batch size must be positive");
    if (!(temperature > 0.0)) throw value_error("TrainConfig: temperature must be positive");
    if (gamma < 0.0) throw value_error("TrainConfig: gamma must be >= 0");
    if (!(slope_k > 0.0)) throw value_error("TrainConfig: slope must be positive");
    if (optimizer != "sgd" && optimizer != "adam")
      throw value_error("TrainConfig: optimizer must be sgd or adam");
  }
};

}  // namespace rrt
