#include "rrt/hardening.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "rrt/faultinject.hpp"
#include "rrt/metrics.hpp"
#include "rrt/optim.hpp"
#include "rrt/rng.hpp"

namespace rrt {

namespace {

void require_same_structure(const Network& net, const Network& teacher) {
  bool same = net.layers.size() == teacher.layers.size() &&
              net.input_shape == teacher.input_shape && net.class_count == teacher.class_count;
  for (std::size_t i = 0; same && i < net.layers.size(); ++i) {
    same = net.layers[i].kind == teacher.layers[i].kind &&
           net.params[i].size() == teacher.params[i].size();
    for (std::size_t t = 0; same && t < net.params[i].size(); ++t)
      same = net.params[i][t].same_shape(teacher.params[i][t]) &&
             (net.params[i][t].array() == teacher.params[i][t].array()).all();
  }
  if (!same) throw value_error("teacher/student structure mismatch");
}

/// Flat Adam view over the thresholds of `layers` (ascending order):
/// scalars occupy one slot, neuron-wise layers one slot per neuron.
struct LambdaGroup {
  std::vector<int> layers;
  std::vector<Eigen::Index> offsets;
  Eigen::Index dim = 0;

  LambdaGroup(const ThresholdSet& th, std::vector<int> layer_list)
      : layers(std::move(layer_list)) {
    for (int l : layers) {
      offsets.push_back(dim);
      dim += th.is_neuronwise(l) ? th.per_neuron.at(l).size() : 1;
    }
  }

  Eigen::VectorXd gather(const ThresholdSet& th) const {
    Eigen::VectorXd x(dim);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const int l = layers[i];
      if (th.is_neuronwise(l))
        x.segment(offsets[i], th.per_neuron.at(l).size()) = th.per_neuron.at(l);
      else
        x[offsets[i]] = th.per_layer.at(l);
    }
    return x;
  }

  void scatter(const Eigen::VectorXd& x, ThresholdSet& th) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const int l = layers[i];
      if (th.is_neuronwise(l))
        th.per_neuron[l] = x.segment(offsets[i], th.per_neuron.at(l).size());
      else
        th.per_layer[l] = x[offsets[i]];
    }
  }

  Eigen::VectorXd gradient(const std::map<int, Tensor>& lambda_grads) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto it = lambda_grads.find(layers[i]);
      if (it == lambda_grads.end()) continue;
      const Tensor& t = it->second;
      g.segment(offsets[i], t.numel()) =
          Eigen::Map<const Eigen::VectorXd>(t.data(), t.numel());
    }
    return g;
  }
};

/// Runs `epochs` Adam epochs over the thresholds in `group`, all other
/// thresholds and every weight frozen. `stream_tag` keeps shuffle streams
/// of different phases independent.
void train_lambda_group(const Network& net, const Network& teacher, const Dataset& data,
                        const TrainConfig& cfg, ThresholdSet& th, const LambdaGroup& group,
                        int epochs, int log_layer_index, std::uint64_t stream_tag,
                        TrainLog* log) {
  if (epochs == 0 || group.dim == 0) return;
  if (data.size() == 0) throw value_error("threshold training: empty dataset");

  AdamState adam(group.dim);
  const std::set<int> trained(group.layers.begin(), group.layers.end());
  BackwardOptions options;
  options.want_param_grads = false;
  options.lambda_layers = &trained;
  options.stop_layer = *std::min_element(group.layers.begin(), group.layers.end());

  const Eigen::Index n = data.size();
  std::vector<std::uint64_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    Xoshiro256ss rng(stable_hash64({cfg.seed, stream_tag, static_cast<std::uint64_t>(epoch)}));
    shuffle_in_place(order, rng);

    double loss_sum = 0.0, kl_sum = 0.0, ce_sum = 0.0, reg_sum = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index first = 0; first < n; first += cfg.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n - first);
      std::vector<std::uint64_t> batch_idx(order.begin() + first, order.begin() + first + count);
      const Dataset batch_data = data.subset(batch_idx);
      const Tensor batch = batch_data.batch(0, count);

      const ForwardTape tape = forward_tape(net, &th, batch);
      const Tensor teacher_logits = forward(teacher, nullptr, batch);
      const KdLossResult kd = kd_loss(tape.logits, teacher_logits, batch_data.labels,
                                      th.flattened(), cfg.temperature, cfg.gamma);
      if (!std::isfinite(kd.loss))
        throw divergence_error("threshold training: non-finite loss at epoch " +
                               std::to_string(epoch) + " (layer " +
                               std::to_string(log_layer_index) + ")");

      const BackwardResult back = backward(net, &th, tape, kd.grad_logits, options);
      Eigen::ArrayXd x = group.gather(th).array();
      Eigen::ArrayXd grad = group.gradient(back.lambda_grads).array();
      grad += 2.0 * cfg.gamma * x;  // d(gamma * sum lambda^2)/dlambda
      adam.step(x, grad, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      x = x.max(kLambdaFloor);
      group.scatter(x.matrix(), th);

      loss_sum += kd.loss * static_cast<double>(count);
      kl_sum += kd.kl * static_cast<double>(count);
      ce_sum += kd.ce * static_cast<double>(count);
      reg_sum += kd.reg * static_cast<double>(count);
      seen += count;
    }
    if (log) {
      const Eigen::VectorXd x = group.gather(th);
      const double denom = static_cast<double>(seen);
      log->push_back({epoch, log_layer_index, loss_sum / denom, kl_sum / denom,
                      ce_sum / denom, reg_sum / denom, x.mean()});
    }
  }
}

}  // namespace

ProfileReport profile_max(const Network& net, const Dataset& data, bool all_layers_neuronwise,
                          int batch_size) {
  if (data.size() == 0) throw value_error("profile_max: empty dataset");
  if (batch_size <= 0) throw value_error("profile_max: batch size must be positive");
  ProfileReport report;
  report.last_layer = net.last_hidden_activation();
  report.sample_count = data.size();

  std::map<int, Eigen::VectorXd> maxima;
  for (int l : net.activation_layers())
    maxima[l] = Eigen::VectorXd::Constant(net.activation_width(l), 0.0);

  for (Eigen::Index first = 0; first < data.size(); first += batch_size) {
    const Eigen::Index count = std::min<Eigen::Index>(batch_size, data.size() - first);
    const ForwardTrace trace = forward_trace(net, nullptr, data.batch(first, count));
    for (auto& [l, acts] : trace.activations) {
      Eigen::VectorXd& m = maxima.at(l);
      const Eigen::Index width = m.size();
      for (Eigen::Index b = 0; b < count; ++b)
        m = m.cwiseMax(Eigen::Map<const Eigen::VectorXd>(acts.data() + b * width, width));
    }
  }
  for (auto& [l, m] : maxima) {
    report.layer_max[l] = m.maxCoeff();
    if (all_layers_neuronwise || l == report.last_layer) report.neuron_max[l] = m;
  }
  return report;
}

ThresholdSet harden_ranger(const Network& net, const ProfileReport& report,
                           Granularity granularity) {
  ThresholdSet th;
  th.kind = ActivationKind::clipped_relu;
  th.last_layer = report.last_layer;
  for (int l : net.activation_layers()) {
    if (granularity == Granularity::layer) {
      th.per_layer[l] = std::max(report.layer_max.at(l), kLambdaFloor);
    } else {
      auto it = report.neuron_max.find(l);
      if (it == report.neuron_max.end())
        throw value_error("harden_ranger: report lacks per-neuron maxima for layer " +
                          std::to_string(l) + "; profile with all_layers_neuronwise");
      th.per_neuron[l] = it->second.cwiseMax(kLambdaFloor);
    }
  }
  th.validate();
  return th;
}

ThresholdSet search_ftclipact(const Network& net, const Dataset& data,
                              const FtClipActConfig& cfg) {
  if (cfg.grid_size <= 0) throw value_error("search_ftclipact: empty candidate grid");
  if (cfg.fi_budget < 0) throw value_error("search_ftclipact: fi_budget must be >= 0");
  if (data.size() == 0) throw value_error("search_ftclipact: empty dataset");

  const ProfileReport report = profile_max(net, data, false, cfg.batch_size);
  const double baseline = top1_accuracy(net, nullptr, data, cfg.batch_size);

  ThresholdSet th;
  th.kind = ActivationKind::clipped_relu;
  th.last_layer = report.last_layer;

  for (int l : net.activation_layers()) {
    const double peak = report.layer_max.at(l);
    if (peak <= kLambdaFloor) {  // layer never fires on the search data
      th.per_layer[l] = kLambdaFloor;
      continue;
    }
    double best_lambda = peak;
    double best_score = -1.0;
    bool any_admissible = false;
    double fallback_lambda = peak;
    double fallback_acc = -1.0;
    for (int j = 1; j <= cfg.grid_size; ++j) {
      const double lambda = peak * static_cast<double>(j) / cfg.grid_size;
      th.per_layer[l] = lambda;
      const double acc_ff = top1_accuracy(net, &th, data, cfg.batch_size);
      if (acc_ff > fallback_acc) {
        fallback_acc = acc_ff;
        fallback_lambda = lambda;
      }
      if (acc_ff < baseline - cfg.accuracy_tolerance) continue;
      double score = 0.0;
      if (cfg.fi_budget > 0) {
        const FaultSpace space = FaultSpace::enumerate(net, &th);
        for (int trial = 0; trial < cfg.fi_budget; ++trial) {
          const std::uint64_t seed =
              stable_hash64({cfg.seed, 0xF7C11ULL, static_cast<std::uint64_t>(l),
                             static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(trial)});
          const FaultyModel faulty = apply_faults(net, &th, plan_faults(space, cfg.ber, seed));
          score += top1_accuracy(faulty.net, faulty.thresholds ? &*faulty.thresholds : nullptr,
                                 data, cfg.batch_size);
        }
        score /= cfg.fi_budget;
      }
      if (!any_admissible || score > best_score) {
        any_admissible = true;
        best_score = score;
        best_lambda = lambda;
      }
    }
    // No candidate within tolerance can happen when clipping earlier layers
    // raised this layer's activations past its unclipped profile; keep the
    // least harmful candidate.
    th.per_layer[l] = any_admissible ? best_lambda : fallback_lambda;
  }
  th.validate();
  return th;
}

KdLossResult kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                     const std::vector<int>& labels, const Eigen::VectorXd& lambdas,
                     double temperature, double gamma) {
  if (!student_logits.same_shape(teacher_logits))
    throw shape_error("kd_loss: student/teacher logits differ in shape");
  if (!(temperature > 0.0)) throw value_error("kd_loss: temperature must be positive");
  if (gamma < 0.0) throw value_error("kd_loss: gamma must be >= 0");
  const bool flat = student_logits.rank() == 1;
  const Eigen::Index rows = flat ? 1 : student_logits.dim(0);
  const Eigen::Index cols = student_logits.numel() / rows;
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw shape_error("kd_loss: label count does not match batch");

  KdLossResult out;
  out.grad_logits = Tensor(student_logits.shape());
  auto S = student_logits.matrix(rows, cols);
  auto T = teacher_logits.matrix(rows, cols);
  auto G = out.grad_logits.matrix(rows, cols);

  auto log_softmax = [](const Eigen::ArrayXd& z) -> Eigen::ArrayXd {
    const double m = z.maxCoeff();
    const Eigen::ArrayXd shifted = z - m;
    return shifted - std::log(shifted.exp().sum());
  };

  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::ArrayXd ls = log_softmax(S.row(r).array() / temperature);
    const Eigen::ArrayXd lt = log_softmax(T.row(r).array() / temperature);
    const Eigen::ArrayXd ps = ls.exp();
    const double kl_row = (ps * (ls - lt)).sum();
    out.kl += kl_row * inv_rows;

    const Eigen::ArrayXd ls1 = log_softmax(S.row(r).array());
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= cols) throw value_error("kd_loss: label out of range");
    out.ce += -ls1[label] * inv_rows;

    Eigen::ArrayXd grad = (ps * ((ls - lt) - kl_row)) / temperature;  // KL part
    grad += ls1.exp();                                                // CE part
    grad[label] -= 1.0;
    G.row(r) = (grad * inv_rows).matrix();
  }
  out.reg = gamma * lambdas.squaredNorm();
  out.loss = out.kl + out.ce + out.reg;
  return out;
}

void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "epoch,layer_index,loss,kl_term,ce_term,reg_term,mean_lambda\n";
  char line[256];
  for (const EpochLogRow& row : log) {
    std::snprintf(line, sizeof(line), "%d,%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", row.epoch,
                  row.layer_index, row.loss, row.kl, row.ce, row.reg, row.mean_lambda);
    out << line;
  }
  if (!out) throw io_error("write failure: " + path.string());
}

ThresholdSet train_proact(const Network& net, const Network& teacher, const Dataset& data,
                          const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  require_same_structure(net, teacher);
  if (data.size() == 0) throw value_error("train_proact: empty dataset");

  const ProfileReport report = profile_max(teacher, data, false, cfg.batch_size);
  ThresholdSet th;
  th.kind = ActivationKind::hyrelu;
  th.slope_k = cfg.slope_k;
  th.last_layer = report.last_layer;
  for (int l : net.activation_layers()) {
    if (l == report.last_layer)
      th.per_neuron[l] = report.neuron_max.at(l).cwiseMax(kLambdaFloor);
    else
      th.per_layer[l] = std::max(report.layer_max.at(l), kLambdaFloor);
  }
  th.validate();

  const std::vector<int> acts = net.activation_layers();
  for (auto it = acts.rbegin(); it != acts.rend(); ++it) {
    const int l = *it;
    const int epochs = l == report.last_layer ? cfg.epochs_last_layer : cfg.epochs_other_layers;
    train_lambda_group(net, teacher, data, cfg, th, LambdaGroup(th, {l}), epochs, l,
                       stable_hash64({0x980ACCULL, static_cast<std::uint64_t>(l)}), log);
  }
  return th;
}

ThresholdSet train_fitact(const Network& net, const Network& teacher, const Dataset& data,
                          const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  require_same_structure(net, teacher);
  if (data.size() == 0) throw value_error("train_fitact: empty dataset");

  const ProfileReport report = profile_max(teacher, data, true, cfg.batch_size);
  ThresholdSet th;
  th.kind = ActivationKind::fitact_neuronwise;
  th.slope_k = cfg.slope_k;
  th.last_layer = report.last_layer;
  for (int l : net.activation_layers())
    th.per_neuron[l] = report.neuron_max.at(l).cwiseMax(kLambdaFloor);
  th.validate();

  train_lambda_group(net, teacher, data, cfg, th, LambdaGroup(th, net.activation_layers()),
                     cfg.epochs_last_layer, -1, 0xF17ACCULL, log);
  return th;
}

}  // namespace rrt
