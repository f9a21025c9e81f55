#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rrt/dataset.hpp"
#include "rrt/network.hpp"

namespace rrt {

/// Deterministic enumeration of every 32-bit parameter word that faults may
/// hit: for each layer its weights then biases (flat order), then clipping
/// thresholds in layer order. A network without thresholds enumerates a
/// prefix of the same network's thresholded space, so plans drawn on the
/// bare space apply to both.
struct FaultSpace {
  enum class TargetKind { weight, bias, threshold };
  struct Segment {
    TargetKind kind;
    int layer;
    Eigen::Index words;
  };
  std::vector<Segment> segments;

  Eigen::Index total_words() const;
  std::uint64_t total_bits() const { return static_cast<std::uint64_t>(total_words()) * 32; }
  static FaultSpace enumerate(const Network& net, const ThresholdSet* thresholds);
};

/// The flips of one trial: distinct (word, bit) pairs, sorted.
struct FaultPlan {
  std::vector<std::pair<Eigen::Index, unsigned>> flips;
  std::uint64_t seed = 0;
  double ber = 0.0;
};

/// Draws Binomial(total_bits, ber) flips, then that many distinct bit
/// positions uniformly without replacement; fully determined by
/// (space, ber, seed). ber may be 0 (empty plan) or 1 (every bit).
FaultPlan plan_faults(const FaultSpace& space, double ber, std::uint64_t seed);

struct FaultyModel {
  Network net;
  std::optional<ThresholdSet> thresholds;
};

/// Copies the model, then for every planned flip encodes the target
/// parameter to Q15.16, flips the bit, and decodes back. Flips landing on
/// one word compose on the encoded word before the single decode.
FaultyModel apply_faults(const Network& net, const ThresholdSet* thresholds,
                         const FaultPlan& plan);

struct CampaignConfig {
  std::vector<double> bers = {1e-7, 3e-7, 1e-6, 3e-6, 1e-5, 3e-5};
  int trials = 500;
  std::uint64_t master_seed = 1;
  int workers = 1;
  int eval_batch = 256;
  void validate() const;
};

struct TrialRecord {
  double ber = 0.0;
  int trial = 0;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  std::string error;  // non-empty when the trial aborted
};

struct BerSummary {
  double ber = 0.0;
  double mean = 0.0, stddev = 0.0, ci95_lo = 0.0, ci95_hi = 0.0;
  int trials = 0;  // successful trials aggregated
};

struct CampaignResult {
  std::vector<TrialRecord> records;    // ordered by (ber index, trial)
  std::vector<BerSummary> summaries;   // one row per BER
};

/// Monte-Carlo resilience campaign. Trial t of BER index b uses seed
/// stable_hash64({master_seed, b, t}); trials are independent, so the result
/// is identical for any worker count.
CampaignResult run_campaign(const Network& net, const ThresholdSet* thresholds,
                            const CampaignConfig& cfg, const Dataset& data);

/// trials.csv: ber,trial,seed,top1 - summary.csv: ber,mean,std,ci95_lo,
/// ci95_hi,trials. Failed trials leave top1 empty and are listed in
/// errors.csv next to the trials file.
void write_campaign_csvs(const CampaignResult& result,
                         const std::filesystem::path& trials_csv,
                         const std::filesystem::path& summary_csv);

}  // namespace rrt
