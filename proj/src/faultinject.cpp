#include "rrt/faultinject.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "rrt/fixedpoint.hpp"
#include "rrt/metrics.hpp"
#include "rrt/rng.hpp"

namespace rrt {

namespace {

/// Mutable view of the word at `index` inside a corrupted model copy.
double* resolve_word(FaultyModel& model, const FaultSpace& space, Eigen::Index index) {
  for (const FaultSpace::Segment& seg : space.segments) {
    if (index >= seg.words) {
      index -= seg.words;
      continue;
    }
    switch (seg.kind) {
      case FaultSpace::TargetKind::weight:
        return model.net.params[static_cast<std::size_t>(seg.layer)][0].data() + index;
      case FaultSpace::TargetKind::bias:
        return model.net.params[static_cast<std::size_t>(seg.layer)][1].data() + index;
      case FaultSpace::TargetKind::threshold: {
        ThresholdSet& th = *model.thresholds;
        if (auto it = th.per_neuron.find(seg.layer); it != th.per_neuron.end())
          return it->second.data() + index;
        return &th.per_layer.at(seg.layer);
      }
    }
  }
  throw std::out_of_range("fault plan index outside the fault space");
}

double aggregate_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

Eigen::Index FaultSpace::total_words() const {
  Eigen::Index n = 0;
  for (const Segment& s : segments) n += s.words;
  return n;
}

FaultSpace FaultSpace::enumerate(const Network& net, const ThresholdSet* thresholds) {
  FaultSpace space;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.params[i].size() < 2) continue;
    space.segments.push_back(
        {TargetKind::weight, static_cast<int>(i), net.params[i][0].numel()});
    space.segments.push_back(
        {TargetKind::bias, static_cast<int>(i), net.params[i][1].numel()});
  }
  if (thresholds != nullptr) {
    // Scalars and neuron vectors interleaved by layer index.
    auto scalar_it = thresholds->per_layer.begin();
    auto vector_it = thresholds->per_neuron.begin();
    while (scalar_it != thresholds->per_layer.end() ||
           vector_it != thresholds->per_neuron.end()) {
      const bool take_scalar =
          vector_it == thresholds->per_neuron.end() ||
          (scalar_it != thresholds->per_layer.end() && scalar_it->first < vector_it->first);
      if (take_scalar) {
        space.segments.push_back({TargetKind::threshold, scalar_it->first, 1});
        ++scalar_it;
      } else {
        space.segments.push_back(
            {TargetKind::threshold, vector_it->first, vector_it->second.size()});
        ++vector_it;
      }
    }
  }
  return space;
}

FaultPlan plan_faults(const FaultSpace& space, double ber, std::uint64_t seed) {
  if (ber < 0.0 || ber > 1.0) throw value_error("plan_faults: BER outside [0,1]");
  FaultPlan plan;
  plan.seed = seed;
  plan.ber = ber;
  Xoshiro256ss rng(seed);
  const std::uint64_t bits = space.total_bits();
  const std::uint64_t flips = binomial_draw(rng, bits, ber);
  const auto positions = sample_without_replacement(bits, flips, rng);
  plan.flips.reserve(positions.size());
  for (std::uint64_t pos : positions)
    plan.flips.emplace_back(static_cast<Eigen::Index>(pos >> 5),
                            static_cast<unsigned>(pos & 31));
  return plan;
}

FaultyModel apply_faults(const Network& net, const ThresholdSet* thresholds,
                         const FaultPlan& plan) {
  FaultyModel model{net, thresholds ? std::optional<ThresholdSet>(*thresholds) : std::nullopt};
  const FaultSpace space = FaultSpace::enumerate(model.net, thresholds ? &*model.thresholds : nullptr);
  const Eigen::Index words = space.total_words();

  // Flips are sorted, so same-word flips are adjacent and compose on the
  // encoded word before the single decode.
  for (std::size_t i = 0; i < plan.flips.size();) {
    const Eigen::Index word = plan.flips[i].first;
    if (word < 0 || word >= words)
      throw std::out_of_range("fault plan word index outside the fault space");
    FixedCode code = encode_q15_16(*resolve_word(model, space, word));
    std::size_t j = i;
    for (; j < plan.flips.size() && plan.flips[j].first == word; ++j)
      code = flip_bit(code, plan.flips[j].second);
    *resolve_word(model, space, word) = decode_q15_16(code);
    i = j;
  }
  return model;
}

void CampaignConfig::validate() const {
  if (bers.empty()) throw value_error("campaign: BER list is empty");
  for (double ber : bers)
    if (ber < 0.0 || ber > 1.0) throw value_error("campaign: BER outside [0,1]");
  if (trials < 1) throw value_error("campaign: trials must be >= 1");
  if (workers < 1) throw value_error("campaign: workers must be >= 1");
  if (eval_batch < 1) throw value_error("campaign: eval batch must be >= 1");
}

CampaignResult run_campaign(const Network& net, const ThresholdSet* thresholds,
                            const CampaignConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (data.size() == 0) throw value_error("run_campaign: empty evaluation dataset");

  const FaultSpace space = FaultSpace::enumerate(net, thresholds);
  const std::size_t total = cfg.bers.size() * static_cast<std::size_t>(cfg.trials);

  CampaignResult result;
  result.records.resize(total);

  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (std::size_t at = cursor.fetch_add(1); at < total; at = cursor.fetch_add(1)) {
      const std::size_t ber_index = at / static_cast<std::size_t>(cfg.trials);
      const int trial = static_cast<int>(at % static_cast<std::size_t>(cfg.trials));
      TrialRecord& rec = result.records[at];
      rec.ber = cfg.bers[ber_index];
      rec.trial = trial;
      rec.seed = stable_hash64({cfg.master_seed, static_cast<std::uint64_t>(ber_index),
                                static_cast<std::uint64_t>(trial)});
      try {
        const FaultPlan plan = plan_faults(space, rec.ber, rec.seed);
        const FaultyModel faulty = apply_faults(net, thresholds, plan);
        rec.top1 = top1_accuracy(faulty.net, faulty.thresholds ? &*faulty.thresholds : nullptr,
                                 data, cfg.eval_batch);
      } catch (const std::exception& e) {
        rec.top1 = std::nan("");
        rec.error = e.what();
      }
    }
  };

  if (cfg.workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(cfg.workers));
    for (int w = 0; w < cfg.workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Deterministic reduce in (ber, trial) order.
  for (std::size_t b = 0; b < cfg.bers.size(); ++b) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(cfg.trials));
    for (int t = 0; t < cfg.trials; ++t) {
      const TrialRecord& rec = result.records[b * static_cast<std::size_t>(cfg.trials) +
                                              static_cast<std::size_t>(t)];
      if (rec.error.empty()) values.push_back(rec.top1);
    }
    BerSummary s;
    s.ber = cfg.bers[b];
    s.trials = static_cast<int>(values.size());
    s.mean = aggregate_mean(values);
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(sq / static_cast<double>(values.size() - 1)) : 0.0;
    const double half =
        values.empty() ? 0.0
                       : 1.96 * s.stddev / std::sqrt(static_cast<double>(values.size()));
    s.ci95_lo = s.mean - half;
    s.ci95_hi = s.mean + half;
    result.summaries.push_back(s);
  }
  return result;
}

void write_campaign_csvs(const CampaignResult& result, const std::filesystem::path& trials_csv,
                         const std::filesystem::path& summary_csv) {
  std::ofstream trials(trials_csv, std::ios::binary);
  if (!trials) throw io_error("cannot open for writing: " + trials_csv.string());
  trials << "ber,trial,seed,top1\n";
  char line[256];
  bool any_error = false;
  for (const TrialRecord& rec : result.records) {
    if (rec.error.empty()) {
      std::snprintf(line, sizeof(line), "%g,%d,%llu,%.12g\n", rec.ber, rec.trial,
                    static_cast<unsigned long long>(rec.seed), rec.top1);
      trials << line;
    } else {
      std::snprintf(line, sizeof(line), "%g,%d,%llu,\n", rec.ber, rec.trial,
                    static_cast<unsigned long long>(rec.seed));
      trials << line;
      any_error = true;
    }
  }
  if (!trials) throw io_error("write failure: " + trials_csv.string());

  if (any_error) {
    std::filesystem::path errors_csv = trials_csv;
    errors_csv.replace_filename("errors.csv");
    std::ofstream errors(errors_csv, std::ios::binary);
    errors << "ber,trial,seed,error\n";
    for (const TrialRecord& rec : result.records)
      if (!rec.error.empty())
        errors << rec.ber << ',' << rec.trial << ',' << rec.seed << ",\"" << rec.error
               << "\"\n";
  }

  std::ofstream summary(summary_csv, std::ios::binary);
  if (!summary) throw io_error("cannot open for writing: " + summary_csv.string());
  summary << "ber,mean,std,ci95_lo,ci95_hi,trials\n";
  for (const BerSummary& s : result.summaries) {
    std::snprintf(line, sizeof(line), "%g,%.12g,%.12g,%.12g,%.12g,%d\n", s.ber, s.mean,
                  s.stddev, s.ci95_lo, s.ci95_hi, s.trials);
    summary << line;
  }
  if (!summary) throw io_error("write failure: " + summary_csv.string());
}

}  // namespace rrt
