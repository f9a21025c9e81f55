#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rrt/config.hpp"
#include "rrt/dataset.hpp"
#include "rrt/layers.hpp"

namespace rrt {

/// An ordered feed-forward stack. Parameters live in floating point; their
/// Q15.16 images exist only inside the fault injector. Weights produced by
/// the builders and the trainer are snapped to float32 precision so the
/// float32 model file round-trips bit-exactly.
struct Network {
  std::string name;
  std::vector<Eigen::Index> input_shape;  // per sample
  int class_count = 0;
  std::vector<LayerSpec> layers;
  std::vector<std::vector<Tensor>> params;  // parallel to layers

  /// Indices of activation layers, in order.
  std::vector<int> activation_layers() const;
  /// L: the last activation layer before the classifier.
  int last_hidden_activation() const;
  /// Per-sample element count of layer `index`'s output.
  Eigen::Index activation_width(int index) const;
  std::vector<Eigen::Index> layer_output_shape(int index) const;
  Eigen::Index param_count() const;
  void check_consistent() const;
};

/// Plain inference. Null thresholds run every activation layer as ReLU
/// (teacher mode); with thresholds, each covered layer applies the set's
/// activation kind and its scalar or per-neuron lambda, and uncovered
/// layers stay ReLU.
Tensor forward(const Network& net, const ThresholdSet* thresholds, const Tensor& batch);

/// Forward pass that additionally records each layer's input, so gradients
/// can be chained backwards.
struct ForwardTape {
  std::vector<Tensor> inputs;  // inputs[i] feeds layers[i]
  Tensor logits;
};
ForwardTape forward_tape(const Network& net, const ThresholdSet* thresholds,
                         const Tensor& batch);

/// Forward pass that captures every activation layer's output (profiling,
/// activation distance, histograms).
struct ForwardTrace {
  Tensor logits;
  std::map<int, Tensor> activations;
};
ForwardTrace forward_trace(const Network& net, const ThresholdSet* thresholds,
                           const Tensor& batch);

struct BackwardOptions {
  bool want_param_grads = true;
  const std::set<int>* lambda_layers = nullptr;  // null: every thresholded layer
  int stop_layer = 0;  // gradients are not propagated below this layer index
};
struct BackwardResult {
  std::vector<std::vector<Tensor>> param_grads;  // empty vectors when not requested
  std::map<int, Tensor> lambda_grads;            // activation layer -> dLoss/dLambda
};
BackwardResult backward(const Network& net, const ThresholdSet* thresholds,
                        const ForwardTape& tape, const Tensor& grad_logits,
                        const BackwardOptions& options = {});

/// Model container: `<stem>.rrtm` JSON manifest plus `<stem>.rrtb` raw
/// little-endian float32 blob. Any other extension writes the concatenated
/// single-file form: 8-byte magic "RRTMODL1", little-endian u64 manifest
/// size, manifest JSON, blob.
void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);

/// Classic 28x28 grayscale convnet: 2 conv/pool stages + 3 dense layers.
Network build_lenet5();
/// 3 conv + 2 dense stack shaped for 3x32x32 inputs.
Network build_minialex();
Network build_by_name(const std::string& arch);

/// He-uniform weights, zero biases, snapped to float32 precision.
void init_params(Network& net, std::uint64_t seed);

struct BaselineLog {
  std::vector<double> epoch_loss;
};

/// Mini-batch cross-entropy training of the plain-ReLU network; returns the
/// trained teacher. Throws divergence_error naming the epoch if the loss
/// leaves the reals, value_error on an empty dataset.
Network train_baseline(Network net, const Dataset& data, const TrainConfig& cfg,
                       BaselineLog* log = nullptr);

}  // namespace rrt
