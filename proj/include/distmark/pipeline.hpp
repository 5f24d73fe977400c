#pragma once

// End-to-end experiment orchestration: synthesize data, optimize markers,
// build releases, train bank and held-out model populations, evaluate, and
// persist a fully deterministic report plus a timing sidecar.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "distmark/behavior_bank.hpp"
#include "distmark/cvm_optimizer.hpp"
#include "distmark/io.hpp"
#include "distmark/synth.hpp"
#include "distmark/train.hpp"
#include "distmark/ustm_optimizer.hpp"

namespace distmark {

struct DownstreamSpec {
  std::vector<Arch> archs{Arch::ConvNet, Arch::Mlp};
  std::vector<int> epochs{60};
  float lr = 0.10f;
  int batch_size = 10;
  int width = 0;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1234;
  std::filesystem::path out_dir = "out";
  std::string import_dir;  // nonempty replaces synthesis with a saved dataset
  SynthSpec synth;
  CvmConfig cvm;
  double lambda_sim = 1.0;
  double ustm_sigma = 0.015;
  int num_users = 3;
  DownstreamSpec downstream;
  int bank_seeds_per_cell = 5;
  int eval_models_per_provenance = 10;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const Json& j);
Json experiment_config_json(const ExperimentConfig& config);

// Deterministic per-user secrets derived from the master seed.
std::vector<UserKey> derive_user_keys(std::uint64_t master_seed, int num_users);

struct ModelRecord {
  std::string provenance;  // "reference" or "user<j>"
  bool infringing = false;
  int user_id = -1;  // ground truth, -1 for reference models
  std::string arch;
  int epochs = 0;
  std::uint64_t seed = 0;
  int eval_index = -1;
  GapReport gaps;
  bool predicted_infringing = false;
  int predicted_user = -1;
  double distance = 0.0;
  KsResult ks_self;  // model's own standard-vs-verification confidence split
  std::size_t queries = 0;
  std::vector<double> train_curve;  // per-epoch training accuracy
};

struct KsPairResult {
  int eval_index = 0;
  KsResult standard;
  KsResult verification;
};

struct StageTimings {
  double synth = 0.0;
  double cvm = 0.0;
  double ustm = 0.0;
  double train_bank = 0.0;
  double train_eval = 0.0;
  double evaluate = 0.0;
  double total = 0.0;
};

struct ExperimentReport {
  Json config_echo;
  int num_classes = 0;
  int images_per_class = 0;
  int heldout_per_class = 0;

  std::vector<LossBreakdown> cvm_losses;
  std::vector<double> cvm_sta_curve;
  MarkerQuality cvm_quality;
  std::vector<MarkerQuality> release_qualities;  // ascending user id
  std::vector<double> ustm_pairwise_cos;         // optimized markers, all pairs
  double surrogate_final_sta = 0.0;

  std::size_t bank_size = 0;
  std::vector<ModelRecord> eval_records;

  double cvsr_value = 0.0;
  double dltsr_value = 0.0;
  double gap_tracing_rate = 0.0;  // argmax over |g_hat| hits the true user
  std::vector<std::vector<double>> cross_user_matrix;  // [true user][gap user]
  std::vector<int> diag_dominant_counts;               // per true user
  std::vector<int> diag_total_counts;

  double mean_sta_reference = 0.0;
  double mean_sta_infringing = 0.0;
  double mean_vta_reference = 0.0;
  double mean_vta_infringing = 0.0;

  std::vector<KsPairResult> ks_pairs;
  double ks_standard_p_median = 1.0;
  double ks_verification_p_median = 1.0;
  double ks_standard_d_median = 0.0;
  double ks_verification_d_median = 0.0;

  // Pooled max-softmax samples for the histogram plot data.
  std::vector<double> conf_reference_standard;
  std::vector<double> conf_infringing_standard;
  std::vector<double> conf_reference_verification;
  std::vector<double> conf_infringing_verification;

  StageTimings timings;  // persisted to timings.json, never to report.json
};

ExperimentReport run_pipeline(const ExperimentConfig& config);

Json report_json(const ExperimentReport& report);
Json timings_json(const StageTimings& timings);

// CSV series for curves, gap bars, tracing matrix, confidence histograms and
// timing bars, written under <dir>/plot_data. The JSON form regenerates the
// same files from a saved report.json (and optionally timings.json) without
// re-running anything.
void emit_plot_data(const ExperimentReport& report,
                    const std::filesystem::path& dir);
void emit_plot_data_from_json(const Json& report, const Json& timings,
                              const std::filesystem::path& dir);

}  // namespace distmark
