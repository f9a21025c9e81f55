#pragma once

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>

#include "rrt/errors.hpp"

namespace rrt {

enum class ActivationKind { relu, clipped_relu, hyrelu, fitact_neuronwise };

std::string to_string(ActivationKind kind);
ActivationKind activation_kind_from_string(const std::string& name);

/// True for the sigmoid-smoothed clip variants.
inline bool is_smooth(ActivationKind kind) {
  return kind == ActivationKind::hyrelu || kind == ActivationKind::fitact_neuronwise;
}

/// Overflow-free logistic function.
template <typename S>
S stable_sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

template <typename S>
S relu(S x) {
  return x > S(0) ? x : S(0);
}

/// Hard range restriction: x passes iff 0 <= x <= lambda, else 0.
template <typename S>
S clipped_relu(S x, S lambda) {
  if (!(lambda > S(0))) throw value_error("clipped_relu: threshold must be positive");
  return (x >= S(0) && x <= lambda) ? x : S(0);
}

/// Sigmoid-smoothed clip: max(0, x * sigmoid(k * (lambda - x))). Positive
/// inputs below lambda pass nearly unchanged; inputs far above lambda are
/// driven smoothly to 0.
template <typename S>
S hyrelu(S x, S lambda, S k) {
  if (!(lambda > S(0))) throw value_error("hyrelu: threshold must be positive");
  if (!(k > S(0))) throw value_error("hyrelu: slope must be positive");
  if (x <= S(0)) return S(0);
  return x * stable_sigmoid(k * (lambda - x));
}

template <typename S>
struct HyreluGrad {
  S d_dx;
  S d_dlambda;
};

/// Analytic partials of hyrelu; both are 0 where the outer max selects 0
/// (subgradient convention at the kink).
template <typename S>
HyreluGrad<S> hyrelu_grad(S x, S lambda, S k) {
  if (!(lambda > S(0))) throw value_error("hyrelu_grad: threshold must be positive");
  if (!(k > S(0))) throw value_error("hyrelu_grad: slope must be positive");
  if (x <= S(0)) return {S(0), S(0)};
  const S s = stable_sigmoid(k * (lambda - x));
  const S bell = s * (S(1) - s);
  return {s - x * k * bell, x * k * bell};
}

/// Clipping thresholds for one network. Non-final activation layers normally
/// hold one scalar each; the final hidden activation layer L holds one value
/// per neuron. Neuron-wise entries on other layers are the documented
/// extension used by the neuron-wise profiling and FitAct paths.
struct ThresholdSet {
  double slope_k = 10.0;
  ActivationKind kind = ActivationKind::hyrelu;
  int last_layer = -1;  // network layer index of L; -1 when unset
  std::map<int, double> per_layer;
  std::map<int, Eigen::VectorXd> per_neuron;

  bool has(int layer) const {
    return per_layer.count(layer) > 0 || per_neuron.count(layer) > 0;
  }
  bool is_neuronwise(int layer) const { return per_neuron.count(layer) > 0; }
  bool empty() const { return per_layer.empty() && per_neuron.empty(); }

  /// Total stored threshold values (scalars plus vector entries).
  std::size_t value_count() const;

  /// All thresholds flattened in layer order; scalars first come from
  /// per_layer, vectors from per_neuron, interleaved by layer index.
  Eigen::VectorXd flattened() const;

  /// Enforces positivity and single granularity per layer.
  void validate() const;

  std::string to_json_string() const;
  static ThresholdSet from_json_string(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ThresholdSet load(const std::filesystem::path& path);
};

}  // namespace rrt
