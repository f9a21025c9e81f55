// rrt: train a small baseline network, harden its activations, and measure
// bit-flip resilience with deterministic fault-injection campaigns.
//
// Subcommands: train-baseline, profile, harden, inject, report, dump-hist.
// All outputs land under --out with fixed filenames (see README). Exit
// codes: 0 success, 2 usage/config error, 3 numerical divergence,
// 4 I/O or format error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rrt/faultinject.hpp"
#include "rrt/hardening.hpp"
#include "rrt/metrics.hpp"
#include "rrt/network.hpp"
#include "rrt/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string out;
  std::uint64_t seed = 1;
};

fs::path resolve_existing(const fs::path& dir, const std::string& name) {
  for (const auto& candidate : {dir / name, dir / (name + ".gz")}) {
    if (fs::exists(candidate)) return candidate;
  }
  throw rrt::io_error("dataset file not found: " + (dir / name).string() + "[.gz]");
}

rrt::Dataset load_dataset(const std::string& kind, const fs::path& dir, bool test_split) {
  if (kind == "mnist") {
    const std::string stem = test_split ? "t10k" : "train";
    return rrt::load_idx(resolve_existing(dir, stem + "-images-idx3-ubyte"),
                         resolve_existing(dir, stem + "-labels-idx1-ubyte"));
  }
  if (kind == "cifar10") {
    std::vector<fs::path> files;
    if (test_split) {
      files.push_back(resolve_existing(dir, "test_batch.bin"));
    } else {
      for (int i = 1; i <= 5; ++i)
        files.push_back(resolve_existing(dir, "data_batch_" + std::to_string(i) + ".bin"));
    }
    return rrt::load_cifar10_bin(files);
  }
  throw rrt::value_error("unknown dataset kind: " + kind);
}

rrt::Dataset head_subset(const rrt::Dataset& data, Eigen::Index n, std::uint64_t seed) {
  if (n <= 0 || n >= data.size()) return data;
  return rrt::split_validation(data, n, seed).first;
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw rrt::value_error("--out directory is required");
  fs::create_directories(out);
}

void echo_config(const CLI::App& app, const fs::path& out_dir) {
  std::ofstream cfg(out_dir / "effective_config.ini", std::ios::binary);
  cfg << app.config_to_str(true, false);
}

// Minimal CSV slurper for summary files produced by this tool.
std::vector<rrt::BerSummary> read_summary_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw rrt::io_error("cannot open: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "ber,mean,std,ci95_lo,ci95_hi,trials")
    throw rrt::io_error("unexpected summary header in " + path.string());
  std::vector<rrt::BerSummary> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw rrt::io_error("malformed summary row in " + path.string());
    rrt::BerSummary s;
    s.ber = std::stod(cells[0]);
    s.mean = std::stod(cells[1]);
    s.stddev = std::stod(cells[2]);
    s.ci95_lo = std::stod(cells[3]);
    s.ci95_hi = std::stod(cells[4]);
    s.trials = std::stoi(cells[5]);
    rows.push_back(s);
  }
  return rows;
}

int run(int argc, char** argv) {
  CLI::App app{"activation-restriction hardening and bit-flip resilience toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file; flags override it");

  // ---- train-baseline ----------------------------------------------------
  auto* train = app.add_subcommand("train-baseline", "train a plain-ReLU teacher model");
  std::string arch = "lenet5", dataset = "mnist", data_dir, optimizer = "sgd";
  CommonOpts tb;
  rrt::TrainConfig tb_cfg;
  int limit_train = 0;
  train->add_option("--arch", arch, "architecture: lenet5 or minialex")
      ->check(CLI::IsMember({"lenet5", "minialex"}));
  train->add_option("--dataset", dataset, "dataset kind")
      ->check(CLI::IsMember({"mnist", "cifar10"}));
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--epochs", tb_cfg.epochs, "training epochs");
  train->add_option("--batch", tb_cfg.batch_size, "batch size");
  train->add_option("--lr", tb_cfg.learning_rate, "initial learning rate (halved every 10 epochs)");
  train->add_option("--optimizer", optimizer, "sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}));
  train->add_option("--momentum", tb_cfg.momentum, "sgd momentum");
  train->add_option("--limit-train", limit_train, "train on a seeded subset (0 = all)");
  train->add_option("--seed", tb.seed, "master seed");
  train->add_option("--out", tb.out, "output directory")->required();

  // ---- profile -----------------------------------------------------------
  auto* profile = app.add_subcommand("profile", "record activation maxima on sample data");
  std::string pf_model;
  CommonOpts pf;
  int pf_samples = 3000;
  bool pf_neuronwise = false;
  std::string pf_dataset = "mnist", pf_data;
  profile->add_option("--model", pf_model, "model file (.rrtm)")->required();
  profile->add_option("--dataset", pf_dataset)->check(CLI::IsMember({"mnist", "cifar10"}));
  profile->add_option("--data", pf_data, "dataset directory")->required();
  profile->add_option("--samples", pf_samples, "profiling samples drawn from training data");
  profile->add_flag("--neuronwise", pf_neuronwise, "record per-neuron maxima for all layers");
  profile->add_option("--seed", pf.seed);
  profile->add_option("--out", pf.out)->required();

  // ---- harden ------------------------------------------------------------
  auto* harden = app.add_subcommand("harden", "derive clipping thresholds for a model");
  std::string hd_model, hd_method, hd_dataset = "mnist", hd_data;
  CommonOpts hd;
  rrt::TrainConfig hd_cfg;
  rrt::FtClipActConfig ft_cfg;
  int hd_samples = 3000;
  harden->add_option("--model", hd_model, "teacher model file")->required();
  harden->add_option("--method", hd_method, "ranger-lw, ranger-nw, ft-clipact, fitact, proact")
      ->required()
      ->check(CLI::IsMember({"ranger-lw", "ranger-nw", "ft-clipact", "fitact", "proact"}));
  harden->add_option("--dataset", hd_dataset)->check(CLI::IsMember({"mnist", "cifar10"}));
  harden->add_option("--data", hd_data, "training dataset directory")->required();
  harden->add_option("--train-samples", hd_samples,
                     "seeded subset used for profiling and threshold training (0 = all)");
  harden->add_option("--epochs-last", hd_cfg.epochs_last_layer, "epochs for the final layer");
  harden->add_option("--epochs-other", hd_cfg.epochs_other_layers, "epochs per earlier layer");
  harden->add_option("--lr", hd_cfg.learning_rate);
  harden->add_option("--batch", hd_cfg.batch_size);
  harden->add_option("--temperature", hd_cfg.temperature, "distillation temperature");
  harden->add_option("--gamma", hd_cfg.gamma, "threshold l2-regularization weight");
  harden->add_option("--slope-k", hd_cfg.slope_k, "smooth-clip slope");
  harden->add_option("--grid-size", ft_cfg.grid_size, "ft-clipact candidate grid size");
  harden->add_option("--fi-budget", ft_cfg.fi_budget, "ft-clipact injections per candidate");
  harden->add_option("--fi-ber", ft_cfg.ber, "ft-clipact scoring BER");
  harden->add_option("--ff-tolerance", ft_cfg.accuracy_tolerance,
                     "ft-clipact admissible fault-free drop");
  harden->add_option("--seed", hd.seed);
  harden->add_option("--out", hd.out)->required();

  // ---- inject ------------------------------------------------------------
  auto* inject = app.add_subcommand("inject", "run a fault-injection campaign");
  std::string in_model, in_thresholds, in_dataset = "mnist", in_data, in_label;
  std::string in_split = "test";
  CommonOpts in;
  rrt::CampaignConfig campaign;
  int eval_samples = 0;
  inject->add_option("--model", in_model)->required();
  inject->add_option("--thresholds", in_thresholds, "thresholds JSON (omit for unprotected)");
  inject->add_option("--dataset", in_dataset)->check(CLI::IsMember({"mnist", "cifar10"}));
  inject->add_option("--data", in_data, "dataset directory")->required();
  inject->add_option("--split", in_split, "evaluation split")
      ->check(CLI::IsMember({"train", "test"}));
  inject->add_option("--ber", campaign.bers, "BER list");
  inject->add_option("--trials", campaign.trials, "trials per BER");
  inject->add_option("--seed", campaign.master_seed, "campaign master seed");
  inject->add_option("--workers", campaign.workers, "parallel trial workers");
  inject->add_option("--eval-samples", eval_samples, "seeded evaluation subset (0 = all)");
  inject->add_option("--eval-batch", campaign.eval_batch);
  inject->add_option("--label", in_label, "method label recorded in meta.json");
  inject->add_option("--out", in.out)->required();

  // ---- report ------------------------------------------------------------
  auto* report = app.add_subcommand("report", "join campaign summaries into one table");
  std::vector<std::string> rp_inputs;
  std::string rp_out;
  std::string rp_model, rp_thresholds, rp_dataset = "mnist", rp_data, rp_split = "test";
  double l2_ber = 1e-4;
  int l2_plans = 0, l2_samples = 256;
  std::uint64_t rp_seed = 1;
  report->add_option("--in", rp_inputs, "label=dir pairs of inject outputs")->required();
  report->add_option("--l2-plans", l2_plans,
                     "also write l2.csv over this many shared fault plans (0 = off)");
  report->add_option("--l2-ber", l2_ber, "BER for the L2 activation distance");
  report->add_option("--l2-samples", l2_samples, "evaluation samples for the L2 distance");
  report->add_option("--model", rp_model, "model for --l2-plans");
  report->add_option("--thresholds", rp_thresholds, "thresholds for --l2-plans");
  report->add_option("--dataset", rp_dataset)->check(CLI::IsMember({"mnist", "cifar10"}));
  report->add_option("--data", rp_data, "dataset directory for --l2-plans");
  report->add_option("--split", rp_split)->check(CLI::IsMember({"train", "test"}));
  report->add_option("--seed", rp_seed);
  report->add_option("--out", rp_out)->required();

  // ---- dump-hist ---------------------------------------------------------
  auto* hist = app.add_subcommand("dump-hist", "dump per-layer activation histograms");
  std::string hs_model, hs_thresholds, hs_dataset = "mnist", hs_data, hs_split = "test";
  CommonOpts hs;
  rrt::HistogramConfig hist_cfg;
  int hs_samples = 256;
  double hs_ber = -1.0;
  hist->add_option("--model", hs_model)->required();
  hist->add_option("--thresholds", hs_thresholds);
  hist->add_option("--dataset", hs_dataset)->check(CLI::IsMember({"mnist", "cifar10"}));
  hist->add_option("--data", hs_data)->required();
  hist->add_option("--split", hs_split)->check(CLI::IsMember({"train", "test"}));
  hist->add_option("--samples", hs_samples, "seeded evaluation subset (0 = all)");
  hist->add_option("--bins", hist_cfg.bins);
  hist->add_option("--range-split", hist_cfg.range_split);
  hist->add_option("--ber", hs_ber, "draw one fault plan at this BER (omit for fault-free)");
  hist->add_option("--seed", hs.seed, "plan seed");
  hist->add_option("--out", hs.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the offending flag
    return 2;
  }

  if (train->parsed()) {
    ensure_out_dir(tb.out);
    echo_config(app, tb.out);
    tb_cfg.optimizer = optimizer;
    tb_cfg.seed = tb.seed;
    rrt::Network net = rrt::build_by_name(arch);
    rrt::init_params(net, tb.seed);
    rrt::Dataset full = load_dataset(dataset, data_dir, false);
    const rrt::Dataset train_data =
        head_subset(full, limit_train, rrt::stable_hash64({tb.seed, 0x11}));
    rrt::BaselineLog log;
    net = rrt::train_baseline(net, train_data, tb_cfg, &log);
    rrt::save_model(net, fs::path(tb.out) / "model.rrtm");

    const rrt::Dataset test_data = load_dataset(dataset, data_dir, true);
    const double top1 = rrt::top1_accuracy(net, nullptr, test_data);
    std::ofstream metrics(fs::path(tb.out) / "baseline.csv", std::ios::binary);
    metrics << "arch,epochs,train_samples,test_top1\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%d,%lld,%.12g\n", arch.c_str(), tb_cfg.epochs,
                  static_cast<long long>(train_data.size()), top1);
    metrics << line;
    std::printf("test_top1=%.6f\n", top1);
    return 0;
  }

  if (profile->parsed()) {
    ensure_out_dir(pf.out);
    echo_config(app, pf.out);
    const rrt::Network net = rrt::load_model(pf_model);
    rrt::Dataset full = load_dataset(pf_dataset, pf_data, false);
    const rrt::Dataset sample =
        head_subset(full, pf_samples, rrt::stable_hash64({pf.seed, 0x22}));
    const rrt::ProfileReport rep = rrt::profile_max(net, sample, pf_neuronwise);
    json doc;
    doc["last_layer_index"] = rep.last_layer;
    doc["sample_count"] = rep.sample_count;
    for (const auto& [l, m] : rep.layer_max) doc["layer_max"][std::to_string(l)] = m;
    for (const auto& [l, v] : rep.neuron_max)
      doc["neuron_max"][std::to_string(l)] = std::vector<double>(v.data(), v.data() + v.size());
    std::ofstream out(fs::path(pf.out) / "profile.json", std::ios::binary);
    out << doc.dump(2) << '\n';
    std::printf("profiled %lld samples, %zu activation layers\n",
                static_cast<long long>(rep.sample_count), rep.layer_max.size());
    return 0;
  }

  if (harden->parsed()) {
    ensure_out_dir(hd.out);
    echo_config(app, hd.out);
    hd_cfg.seed = hd.seed;
    ft_cfg.seed = hd.seed;
    const rrt::Network net = rrt::load_model(hd_model);
    rrt::Dataset full = load_dataset(hd_dataset, hd_data, false);
    const rrt::Dataset sample =
        head_subset(full, hd_samples, rrt::stable_hash64({hd.seed, 0x33}));

    const double before = rrt::top1_accuracy(net, nullptr, sample);
    rrt::ThresholdSet th;
    rrt::TrainLog log;
    if (hd_method == "ranger-lw") {
      th = rrt::harden_ranger(net, rrt::profile_max(net, sample), rrt::Granularity::layer);
    } else if (hd_method == "ranger-nw") {
      th = rrt::harden_ranger(net, rrt::profile_max(net, sample, true),
                              rrt::Granularity::neuron);
    } else if (hd_method == "ft-clipact") {
      ft_cfg.batch_size = hd_cfg.batch_size;
      th = rrt::search_ftclipact(net, sample, ft_cfg);
    } else if (hd_method == "fitact") {
      th = rrt::train_fitact(net, net, sample, hd_cfg, &log);
    } else {
      th = rrt::train_proact(net, net, sample, hd_cfg, &log);
    }
    th.save(fs::path(hd.out) / "thresholds.json");
    rrt::write_train_log_csv(log, fs::path(hd.out) / "train_log.csv");
    const double after = rrt::top1_accuracy(net, &th, sample);
    std::printf("fault_free_top1 before=%.6f after=%.6f\n", before, after);
    std::printf("memory_overhead=%.6g\n", rrt::memory_overhead(net, th));
    return 0;
  }

  if (inject->parsed()) {
    ensure_out_dir(in.out);
    echo_config(app, in.out);
    const rrt::Network net = rrt::load_model(in_model);
    std::optional<rrt::ThresholdSet> th;
    if (!in_thresholds.empty()) th = rrt::ThresholdSet::load(in_thresholds);
    rrt::Dataset full = load_dataset(in_dataset, in_data, in_split == "test");
    const rrt::Dataset eval =
        head_subset(full, eval_samples, rrt::stable_hash64({campaign.master_seed, 0x44}));

    const rrt::CampaignResult result =
        rrt::run_campaign(net, th ? &*th : nullptr, campaign, eval);
    rrt::write_campaign_csvs(result, fs::path(in.out) / "trials.csv",
                             fs::path(in.out) / "summary.csv");

    const double fault_free = rrt::top1_accuracy(net, th ? &*th : nullptr, eval);
    json meta;
    meta["label"] = in_label.empty()
                        ? (in_thresholds.empty() ? "unprotected"
                                                 : fs::path(in_thresholds).stem().string())
                        : in_label;
    meta["model"] = in_model;
    meta["thresholds"] = in_thresholds;
    meta["fault_free_top1"] = fault_free;
    meta["eval_samples"] = eval.size();
    std::ofstream meta_out(fs::path(in.out) / "meta.json", std::ios::binary);
    meta_out << meta.dump(2) << '\n';
    for (const rrt::BerSummary& s : result.summaries)
      std::printf("ber=%g mean_top1=%.6f ci95=[%.6f,%.6f] trials=%d\n", s.ber, s.mean,
                  s.ci95_lo, s.ci95_hi, s.trials);
    return 0;
  }

  if (report->parsed()) {
    ensure_out_dir(rp_out);
    echo_config(app, rp_out);
    std::vector<rrt::ResilienceSummary> summaries;
    for (const std::string& spec : rp_inputs) {
      const auto eq = spec.find('=');
      rrt::ResilienceSummary s;
      fs::path dir;
      if (eq == std::string::npos) {
        dir = spec;
      } else {
        s.method = spec.substr(0, eq);
        dir = spec.substr(eq + 1);
      }
      if (!fs::exists(dir / "summary.csv"))
        throw rrt::io_error("no summary.csv under " + dir.string());
      s.per_ber = read_summary_csv(dir / "summary.csv");
      if (fs::exists(dir / "meta.json")) {
        std::ifstream meta_in(dir / "meta.json");
        json meta = json::parse(meta_in);
        s.baseline_top1 = meta.value("fault_free_top1", 0.0);
        if (s.method.empty()) s.method = meta.value("label", dir.string());
      } else if (s.method.empty()) {
        s.method = dir.string();
      }
      summaries.push_back(std::move(s));
    }
    rrt::write_report_csv(summaries, fs::path(rp_out) / "report.csv");

    if (l2_plans > 0) {
      if (rp_model.empty() || rp_data.empty())
        throw rrt::value_error("--l2-plans needs --model and --data");
      const rrt::Network net = rrt::load_model(rp_model);
      std::optional<rrt::ThresholdSet> th;
      if (!rp_thresholds.empty()) th = rrt::ThresholdSet::load(rp_thresholds);
      rrt::Dataset full = load_dataset(rp_dataset, rp_data, rp_split == "test");
      const rrt::Dataset eval =
          head_subset(full, l2_samples, rrt::stable_hash64({rp_seed, 0x55}));
      // Plans are drawn on the weight/bias space so they are comparable
      // across protected and unprotected models.
      const rrt::FaultSpace space = rrt::FaultSpace::enumerate(net, nullptr);
      double total = 0.0;
      for (int p = 0; p < l2_plans; ++p) {
        const rrt::FaultPlan plan =
            rrt::plan_faults(space, l2_ber, rrt::stable_hash64({rp_seed, 0x66, static_cast<std::uint64_t>(p)}));
        total += rrt::l2_activation_distance(net, th ? &*th : nullptr, plan, eval);
      }
      std::ofstream l2(fs::path(rp_out) / "l2.csv", std::ios::binary);
      l2 << "model,thresholds,ber,plans,mean_l2\n";
      char line[512];
      std::snprintf(line, sizeof(line), "%s,%s,%g,%d,%.12g\n", rp_model.c_str(),
                    rp_thresholds.c_str(), l2_ber, l2_plans, total / l2_plans);
      l2 << line;
      std::printf("mean_l2=%.6g over %d plans at ber=%g\n", total / l2_plans, l2_plans,
                  l2_ber);
    }
    return 0;
  }

  if (hist->parsed()) {
    ensure_out_dir(hs.out);
    echo_config(app, hs.out);
    const rrt::Network net = rrt::load_model(hs_model);
    std::optional<rrt::ThresholdSet> th;
    if (!hs_thresholds.empty()) th = rrt::ThresholdSet::load(hs_thresholds);
    rrt::Dataset full = load_dataset(hs_dataset, hs_data, hs_split == "test");
    const rrt::Dataset eval = head_subset(full, hs_samples, rrt::stable_hash64({hs.seed, 0x77}));
    std::optional<rrt::FaultPlan> plan;
    if (hs_ber >= 0.0) {
      const rrt::FaultSpace space = rrt::FaultSpace::enumerate(net, th ? &*th : nullptr);
      plan = rrt::plan_faults(space, hs_ber, hs.seed);
    }
    rrt::dump_activation_histogram(net, th ? &*th : nullptr, plan ? &*plan : nullptr, eval,
                                   hist_cfg, hs.out);
    std::printf("histograms written to %s\n", hs.out.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rrt::divergence_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const rrt::io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const rrt::value_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const rrt::shape_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
