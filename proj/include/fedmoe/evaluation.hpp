#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedmoe/common.hpp"
#include "fedmoe/data.hpp"
#include "fedmoe/nn.hpp"
#include "fedmoe/personalization.hpp"

namespace fedmoe::eval {

inline constexpr const char* kBaselineFedAvg = "FedAvg";
inline constexpr const char* kBaselineLocal = "Local";
inline constexpr const char* kBaselineFineTuned = "Fine-tuned";
inline constexpr const char* kBaselineMixture = "Mixture";

// One (run, client, baseline) measurement. The structured grid fields feed
// summarize(); the CSV carries the flat fingerprint string.
struct ResultRecord {
  std::uint64_t run_seed = 0;
  int client_id = 0;
  std::string baseline;
  double local_accuracy = 0.0;   // percent
  double global_accuracy = 0.0;  // percent
  std::string config_fingerprint;
  // Grouping keys (not serialized on their own).
  std::string scheme;
  double grid_value = 0.0;
  double q = 0.0;
};

struct SummaryRow {
  std::string baseline;
  std::string scheme;
  double grid_value = 0.0;
  double q = 0.0;
  double local_mean = 0.0;
  double local_ci95 = 0.0;
  double global_mean = 0.0;
  double global_ci95 = 0.0;
  double global_fraction_of_fedavg = 0.0;
  int runs = 0;
};

// Percent of argmax-correct predictions; argmax ties break to the lowest
// class index.
double accuracy(const nn::Matrix& outputs, const std::vector<int>& labels);

// The local baseline: trained from scratch (seeded init, not w_g) with the
// fine-tuning regime at the FedAvg learning rate.
nn::ParamSet train_local_baseline(const nn::MlpSpec& spec,
                                  const data::ClientDataBundle& bundle,
                                  const perso::PersonalizationSchedule& schedule,
                                  double fedavg_eta, std::uint64_t init_seed,
                                  Rng& stream,
                                  perso::PersonalizationLog* log = nullptr);

// Everything evaluate_experiment needs for one sampled client.
struct ClientEval {
  int client_id = 0;
  const data::ClientDataBundle* bundle = nullptr;
  nn::ParamSet w_local;
  perso::MixtureModel mixture;  // holds w_g, w_s, w_h
};

// Deterministic sample of min(count, K) client ids by the evaluation seed.
std::vector<int> sample_eval_clients(int num_clients, int count,
                                     std::uint64_t seed);

// Emits one record per (client, baseline): FedAvg (w_g), Local, Fine-tuned
// (w_s), Mixture (full gate). Local accuracy on the client's local test,
// global accuracy on the shared balanced test set.
std::vector<ResultRecord> evaluate_experiment(
    const std::vector<ClientEval>& clients,
    const data::LabeledDataset& global_test, std::uint64_t run_seed,
    const std::string& fingerprint, const std::string& scheme,
    double grid_value, double q);

// Group means over runs with normal-approximation 95% CIs, plus each
// baseline's global accuracy as a fraction of FedAvg's in the same group.
std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records);

void write_results_csv(const std::vector<ResultRecord>& records,
                       std::ostream& out);
void write_results_csv_file(const std::vector<ResultRecord>& records,
                            const std::string& path);
void write_summary_csv(const std::vector<SummaryRow>& rows, std::ostream& out);
void write_summary_csv_file(const std::vector<SummaryRow>& rows,
                            const std::string& path);

}  // namespace fedmoe::eval
