#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedmoe/common.hpp"
#include "fedmoe/data.hpp"
#include "fedmoe/evaluation.hpp"
#include "fedmoe/federation.hpp"
#include "fedmoe/nn.hpp"
#include "fedmoe/personalization.hpp"

namespace fedmoe::exp {

struct DatasetConfig {
  std::string type = "synthetic";  // "synthetic" | "idx"
  // synthetic
  int num_classes = 10;
  int dim = 20;
  long n_total = 10000;
  double class_separation = 2.5;
  // idx
  std::string images_path;
  std::string labels_path;
  bool export_csv = false;

  std::string id() const;
};

struct EvalConfig {
  int clients_to_sample = 20;
  int runs = 4;
  int local_test_size = 500;
  int global_test_size = 1000;
};

struct SweepSpec {
  std::vector<double> learning_rates;
  void validate() const;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<int> hidden_widths{32, 32};
  data::PartitionScheme scheme = data::PartitionScheme::MajorityFraction;
  std::vector<double> grid_values{0.2, 0.7, 1.0};  // p or alpha values
  int num_clients = 100;
  int samples_per_client = 100;
  std::vector<double> q_values{0.0};
  fed::FedSchedule fedavg;
  perso::PersonalizationSchedule personalization;
  EvalConfig eval;
  SweepSpec sweep;
  double train_fraction = 0.8;
  std::uint64_t master_seed = 42;
  std::string output_dir = "out";

  void validate() const;
  nn::MlpSpec model_spec(int input_dim, int num_classes) const;
  std::string scheme_name() const;
};

// Built-in presets: "desk" (majority grid), "desk-dirichlet", "smoke",
// "paper-majority" (full 1250-round schedule).
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

ExperimentConfig load_config_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

// Per-run seed: a deterministic function of (master seed, grid point, q
// point, run index); sub-streams derive from it by role tags.
std::uint64_t run_seed_of(const ExperimentConfig& config,
                          std::size_t grid_index, std::size_t q_index,
                          int run_index);

struct PipelineOutput {
  std::vector<eval::ResultRecord> records;
  std::string run_dir;
  int fedavg_rounds_run = 0;
  double fedavg_best_val_loss = 0.0;
};

// One (grid value, q, run): data -> FedAvg -> per-client personalization
// and local baseline -> evaluation. Artifacts land in
// <output_dir>/runs/<grid>_<q>_run<k>/. `fixed_base` supplies the shared
// base dataset for file-backed sources; synthetic sources generate per run.
PipelineOutput run_pipeline(const ExperimentConfig& config,
                            std::size_t grid_index, std::size_t q_index,
                            int run_index,
                            const data::LabeledDataset* fixed_base = nullptr);

// The full grid. Writes results.csv, summary.csv and manifest.json under
// output_dir; returns the records. A numeric failure mid-grid still writes
// the manifest (status "failed") before rethrowing.
std::vector<eval::ResultRecord> run_experiment(const ExperimentConfig& config);

struct SweepRow {
  double learning_rate = 0.0;
  bool diverged = false;
  double balanced_val_accuracy = 0.0;
  bool best = false;
};

// FedAvg learning-rate sweep on the first grid point: per value, run
// FedAvg and score the returned checkpoint on a balanced validation set.
// Divergent runs are recorded and excluded from the argmax. Writes
// sweep_summary.csv under output_dir.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config);

}  // namespace fedmoe::exp
