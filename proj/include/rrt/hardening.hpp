#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <vector>

#include "rrt/config.hpp"
#include "rrt/dataset.hpp"
#include "rrt/network.hpp"

namespace rrt {

/// Lower clamp for trained/profiled thresholds: keeps dead neurons from
/// producing a non-positive lambda (clipping at 1e-6 is indistinguishable
/// from clipping at 0).
inline constexpr double kLambdaFloor = 1e-6;

/// Running maxima of post-ReLU activations over a profiling set.
struct ProfileReport {
  std::map<int, double> layer_max;              // every activation layer
  std::map<int, Eigen::VectorXd> neuron_max;    // layer L; all layers on request
  int last_layer = -1;
  Eigen::Index sample_count = 0;
};

/// Exact activation maxima of the plain-ReLU network over `data`. Always
/// collects per-neuron maxima for the final hidden layer; pass
/// `all_layers_neuronwise` for the neuron-wise Ranger / FitAct variants.
ProfileReport profile_max(const Network& net, const Dataset& data,
                          bool all_layers_neuronwise = false, int batch_size = 256);

enum class Granularity { layer, neuron };

/// Thresholds fixed at the profiled maxima, hard-clip policy.
ThresholdSet harden_ranger(const Network& net, const ProfileReport& report,
                           Granularity granularity);

/// Reconstruction knobs for the interval-search baseline; every default is
/// a documented choice of this artifact, not a published constant.
struct FtClipActConfig {
  int grid_size = 20;
  int fi_budget = 10;           // injection trials per candidate; 0 = fault-free only
  double ber = 1e-5;            // BER used while scoring candidates
  double accuracy_tolerance = 0.005;  // admissible fault-free drop (fraction)
  std::uint64_t seed = 1;
  int batch_size = 256;
};

/// Layer-by-layer (first to last) grid search for hard-clip thresholds:
/// among candidates within the fault-free tolerance, the best mean faulty
/// accuracy wins, ties toward the smaller lambda.
ThresholdSet search_ftclipact(const Network& net, const Dataset& data,
                              const FtClipActConfig& cfg);

struct KdLossResult {
  double loss = 0.0;  // kl + ce + reg
  double kl = 0.0;
  double ce = 0.0;
  double reg = 0.0;
  Tensor grad_logits;  // dLoss/dStudentLogits
};

/// Distillation objective: KL(softmax(student/T) || softmax(teacher/T)) +
/// cross-entropy of the student at temperature 1 + gamma * sum(lambda^2).
/// KL and CE are averaged over the batch; the regularizer is added once.
KdLossResult kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                     const std::vector<int>& labels, const Eigen::VectorXd& lambdas,
                     double temperature, double gamma);

struct EpochLogRow {
  int epoch;
  int layer_index;  // -1 when all layers train jointly
  double loss, kl, ce, reg, mean_lambda;
};
using TrainLog = std::vector<EpochLogRow>;

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path);

/// Progressive threshold training: hybrid initialization from profiled
/// maxima (neuron-wise at L, layer-wise elsewhere), then one Adam block per
/// layer from the last activation layer down to the first, weights frozen.
ThresholdSet train_proact(const Network& net, const Network& teacher, const Dataset& data,
                          const TrainConfig& cfg, TrainLog* log = nullptr);

/// Joint neuron-wise training over every activation layer, weights frozen;
/// the comparison baseline trained with the same objective.
ThresholdSet train_fitact(const Network& net, const Network& teacher, const Dataset& data,
                          const TrainConfig& cfg, TrainLog* log = nullptr);

}  // namespace rrt
