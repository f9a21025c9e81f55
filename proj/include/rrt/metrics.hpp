#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rrt/dataset.hpp"
#include "rrt/faultinject.hpp"
#include "rrt/network.hpp"

namespace rrt {

/// Fraction of samples whose argmax logit (smallest index on ties) equals
/// the label. Throws value_error on empty data.
double top1_accuracy(const Network& net, const ThresholdSet* thresholds, const Dataset& data,
                     int batch_size = 256);

/// Stored threshold values relative to the parameter count: for the hybrid
/// scheme this is (#layer-wise thresholds + #neurons of the final hidden
/// layer) / #parameters, reported as a raw ratio.
double memory_overhead(const Network& net, const ThresholdSet& thresholds);

/// Mean squared gap between faulty and fault-free activations: per
/// activation layer the mean over samples and neurons, then averaged across
/// layers. The golden run is the same model without the plan applied.
double l2_activation_distance(const Network& net, const ThresholdSet* thresholds,
                              const FaultPlan& plan, const Dataset& data,
                              int batch_size = 256);

struct HistogramConfig {
  int bins = 50;
  double range_split = 1.0;  // boundary between the dense low range and the tail
  int batch_size = 256;
};

/// Writes hist_layer<idx>.csv (bin_lo,bin_hi,count) per activation layer:
/// `bins` bins covering [0, range_split] and `bins` more covering
/// (range_split, observed max]. With a plan, the faulty model is dumped.
void dump_activation_histogram(const Network& net, const ThresholdSet* thresholds,
                               const FaultPlan* plan, const Dataset& data,
                               const HistogramConfig& cfg,
                               const std::filesystem::path& out_dir);

/// One hardening method's campaign rolled up against its fault-free accuracy.
struct ResilienceSummary {
  std::string method;
  double baseline_top1 = 0.0;
  std::vector<BerSummary> per_ber;
};

/// report.csv: method,ber,mean,drop with drop = baseline - mean.
void write_report_csv(std::span<const ResilienceSummary> summaries,
                      const std::filesystem::path& path);

}  // namespace rrt
