#include "rrt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace rrt {

namespace {

int argmax_row(const Tensor& logits, Eigen::Index row, Eigen::Index cols) {
  const double* z = logits.data() + row * cols;
  int best = 0;
  for (Eigen::Index c = 1; c < cols; ++c)
    if (z[c] > z[best]) best = static_cast<int>(c);
  return best;
}

}  // namespace

double top1_accuracy(const Network& net, const ThresholdSet* thresholds, const Dataset& data,
                     int batch_size) {
  if (data.size() == 0) throw value_error("top1_accuracy: empty dataset");
  if (batch_size <= 0) throw value_error("top1_accuracy: batch size must be positive");
  Eigen::Index correct = 0;
  for (Eigen::Index first = 0; first < data.size(); first += batch_size) {
    const Eigen::Index count = std::min<Eigen::Index>(batch_size, data.size() - first);
    const Tensor logits = forward(net, thresholds, data.batch(first, count));
    const Eigen::Index cols = logits.numel() / count;
    for (Eigen::Index r = 0; r < count; ++r)
      if (argmax_row(logits, r, cols) == data.labels[static_cast<std::size_t>(first + r)])
        ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double memory_overhead(const Network& net, const ThresholdSet& thresholds) {
  const Eigen::Index params = net.param_count();
  if (params == 0) throw value_error("memory_overhead: network has no parameters");
  return static_cast<double>(thresholds.value_count()) / static_cast<double>(params);
}

double l2_activation_distance(const Network& net, const ThresholdSet* thresholds,
                              const FaultPlan& plan, const Dataset& data, int batch_size) {
  if (data.size() == 0) throw value_error("l2_activation_distance: empty dataset");
  const FaultyModel faulty = apply_faults(net, thresholds, plan);
  const ThresholdSet* faulty_th = faulty.thresholds ? &*faulty.thresholds : nullptr;

  std::map<int, double> sum_sq;     // per activation layer
  std::map<int, Eigen::Index> n;    // elements accumulated per layer
  for (Eigen::Index first = 0; first < data.size(); first += batch_size) {
    const Eigen::Index count = std::min<Eigen::Index>(batch_size, data.size() - first);
    const Tensor batch = data.batch(first, count);
    const ForwardTrace golden = forward_trace(net, thresholds, batch);
    const ForwardTrace corrupted = forward_trace(faulty.net, faulty_th, batch);
    for (const auto& [layer, acts] : golden.activations) {
      const Tensor& z = corrupted.activations.at(layer);
      if (!z.same_shape(acts))
        throw shape_error("l2_activation_distance: faulty run changed activation shapes");
      sum_sq[layer] += (z.array() - acts.array()).square().sum();
      n[layer] += acts.numel();
    }
  }
  double layer_mean_sum = 0.0;
  for (const auto& [layer, sq] : sum_sq)
    layer_mean_sum += sq / static_cast<double>(n.at(layer));
  return sum_sq.empty() ? 0.0 : layer_mean_sum / static_cast<double>(sum_sq.size());
}

void dump_activation_histogram(const Network& net, const ThresholdSet* thresholds,
                               const FaultPlan* plan, const Dataset& data,
                               const HistogramConfig& cfg,
                               const std::filesystem::path& out_dir) {
  if (cfg.bins < 1) throw value_error("dump_activation_histogram: bins must be >= 1");
  if (!(cfg.range_split > 0.0))
    throw value_error("dump_activation_histogram: range split must be positive");
  if (data.size() == 0) throw value_error("dump_activation_histogram: empty dataset");

  const Network* model = &net;
  const ThresholdSet* th = thresholds;
  std::optional<FaultyModel> faulty;
  if (plan != nullptr) {
    faulty = apply_faults(net, thresholds, *plan);
    model = &faulty->net;
    th = faulty->thresholds ? &*faulty->thresholds : nullptr;
  }

  // Pass 1: per-layer maxima fix the tail binning.
  std::map<int, double> peak;
  for (Eigen::Index first = 0; first < data.size(); first += cfg.batch_size) {
    const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, data.size() - first);
    const ForwardTrace trace = forward_trace(*model, th, data.batch(first, count));
    for (const auto& [layer, acts] : trace.activations) {
      const double m = acts.array().maxCoeff();
      auto it = peak.find(layer);
      if (it == peak.end())
        peak[layer] = m;
      else
        it->second = std::max(it->second, m);
    }
  }

  const double split = cfg.range_split;
  std::map<int, std::vector<std::uint64_t>> counts;
  std::map<int, double> tail_hi;
  for (const auto& [layer, m] : peak) {
    counts[layer].assign(static_cast<std::size_t>(2 * cfg.bins), 0);
    tail_hi[layer] = std::max(m, split * 2.0);
  }

  for (Eigen::Index first = 0; first < data.size(); first += cfg.batch_size) {
    const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, data.size() - first);
    const ForwardTrace trace = forward_trace(*model, th, data.batch(first, count));
    for (const auto& [layer, acts] : trace.activations) {
      auto& c = counts.at(layer);
      const double hi = tail_hi.at(layer);
      const double low_width = split / cfg.bins;
      const double tail_width = (hi - split) / cfg.bins;
      for (Eigen::Index i = 0; i < acts.numel(); ++i) {
        const double v = acts[i];
        std::size_t bin;
        if (v <= split) {
          bin = std::min<std::size_t>(static_cast<std::size_t>(std::max(v, 0.0) / low_width),
                                      static_cast<std::size_t>(cfg.bins - 1));
        } else {
          bin = static_cast<std::size_t>(cfg.bins) +
                std::min<std::size_t>(static_cast<std::size_t>((v - split) / tail_width),
                                      static_cast<std::size_t>(cfg.bins - 1));
        }
        ++c[bin];
      }
    }
  }

  std::filesystem::create_directories(out_dir);
  for (const auto& [layer, c] : counts) {
    const std::filesystem::path path = out_dir / ("hist_layer" + std::to_string(layer) + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << "bin_lo,bin_hi,count\n";
    char line[128];
    const double hi = tail_hi.at(layer);
    for (int b = 0; b < 2 * cfg.bins; ++b) {
      double lo, bhi;
      if (b < cfg.bins) {
        lo = split * b / cfg.bins;
        bhi = split * (b + 1) / cfg.bins;
      } else {
        lo = split + (hi - split) * (b - cfg.bins) / cfg.bins;
        bhi = split + (hi - split) * (b - cfg.bins + 1) / cfg.bins;
      }
      std::snprintf(line, sizeof(line), "%.12g,%.12g,%llu\n", lo, bhi,
                    static_cast<unsigned long long>(c[static_cast<std::size_t>(b)]));
      out << line;
    }
    if (!out) throw io_error("write failure: " + path.string());
  }
}

void write_report_csv(std::span<const ResilienceSummary> summaries,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out << "method,ber,mean,drop\n";
  char line[256];
  for (const ResilienceSummary& s : summaries) {
    for (const BerSummary& b : s.per_ber) {
      std::snprintf(line, sizeof(line), "%s,%g,%.12g,%.12g\n", s.method.c_str(), b.ber, b.mean,
                    s.baseline_top1 - b.mean);
      out << line;
    }
  }
  if (!out) throw io_error("write failure: " + path.string());
}

}  // namespace rrt
