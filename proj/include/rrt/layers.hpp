#pragma once

#include <span>
#include <vector>

#include "rrt/activation.hpp"
#include "rrt/tensor.hpp"

namespace rrt {

enum class LayerKind { dense, conv2d, maxpool2d, avgpool2d, flatten, activation };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One layer's hyperparameters. Batched inputs are (B, features) for dense
/// and (B, C, H, W) for the spatial kinds; conv2d is cross-correlation so
/// externally trained kernels import without flipping.
struct LayerSpec {
  LayerKind kind = LayerKind::flatten;

  int in_features = 0, out_features = 0;            // dense
  int in_channels = 0, out_channels = 0;            // conv2d
  int kernel_h = 0, kernel_w = 0, stride = 1, pad = 0;  // conv2d and pools

  ActivationKind act = ActivationKind::relu;  // activation layers
  double slope_k = 10.0;                      // smooth activation slope

  static LayerSpec Dense(int in, int out);
  static LayerSpec Conv2d(int in_c, int out_c, int kh, int kw, int stride = 1, int pad = 0);
  static LayerSpec MaxPool2d(int kernel, int stride);
  static LayerSpec AvgPool2d(int kernel, int stride);
  static LayerSpec Flatten();
  static LayerSpec Activation(ActivationKind kind = ActivationKind::relu);

  /// Output shape (without batch dimension) for the given per-sample input
  /// shape; throws shape_error when the input is incompatible.
  std::vector<Eigen::Index> output_shape(const std::vector<Eigen::Index>& in) const;

  /// Number of parameter tensors this layer owns (dense/conv2d: weight+bias).
  int param_tensor_count() const;
};

using TensorPtrs = std::span<const Tensor* const>;

/// Applies one layer to a batch. For activation layers, params may carry a
/// threshold tensor: shape (1) for a layer-wide scalar, shape (N) with N the
/// per-sample width for neuron-wise thresholds; no params means the bare
/// pointwise function (relu only).
Tensor layer_forward(const LayerSpec& spec, TensorPtrs params, const Tensor& input);

struct LayerGrads {
  Tensor input;                // dLoss/dInput
  std::vector<Tensor> params;  // dLoss/dParam, aligned with the layer's params
};

/// Chain-rule transpose of layer_forward: given dLoss/dOutput, returns
/// dLoss/dInput and dLoss/dParams. Pools and max selection recompute their
/// forward decisions from `input`.
LayerGrads layer_backward(const LayerSpec& spec, TensorPtrs params, const Tensor& input,
                          const Tensor& grad_out);

/// Row-wise softened probabilities exp(z_i/T) / sum_j exp(z_j/T), computed
/// with max subtraction. Accepts (B, K) batches or a single (K) vector.
Tensor softmax_temperature(const Tensor& logits, double temperature);

}  // namespace rrt
