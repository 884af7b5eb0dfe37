#include "fedmoe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fedmoe::eval {

double accuracy(const nn::Matrix& outputs, const std::vector<int>& labels) {
  if (outputs.rows() == 0) throw DataError("accuracy on an empty dataset");
  if (static_cast<Eigen::Index>(labels.size()) != outputs.rows()) {
    throw DataError("accuracy: label count does not match prediction rows");
  }
  long correct = 0;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < outputs.cols(); ++j) {
      if (outputs(i, j) > outputs(i, best)) best = static_cast<int>(j);
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(outputs.rows());
}

nn::ParamSet train_local_baseline(const nn::MlpSpec& spec,
                                  const data::ClientDataBundle& bundle,
                                  const perso::PersonalizationSchedule& schedule,
                                  double fedavg_eta, std::uint64_t init_seed,
                                  Rng& stream,
                                  perso::PersonalizationLog* log) {
  Rng init_rng(init_seed);
  nn::ParamSet start = nn::init_mlp_params(spec, init_rng);
  return perso::train_early_stop(spec, std::move(start), bundle.train,
                                 bundle.validation, schedule.max_epochs,
                                 schedule.batch_size, fedavg_eta,
                                 schedule.beta1, schedule.beta2,
                                 schedule.patience, stream, log, "local");
}

std::vector<int> sample_eval_clients(int num_clients, int count,
                                     std::uint64_t seed) {
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  int take = std::min(count, num_clients);
  Rng rng(derive_seed(seed, {seed_tag("eval-sample")}));
  std::vector<int> chosen = rng.sample(ids, static_cast<std::size_t>(take));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<ResultRecord> evaluate_experiment(
    const std::vector<ClientEval>& clients,
    const data::LabeledDataset& global_test, std::uint64_t run_seed,
    const std::string& fingerprint, const std::string& scheme,
    double grid_value, double q) {
  std::vector<ResultRecord> records;
  records.reserve(clients.size() * 4);
  for (const auto& client : clients) {
    if (client.bundle == nullptr) {
      throw InternalError("client evaluation entry without a data bundle");
    }
    const nn::MlpSpec& spec = client.mixture.expert_spec;
    const data::LabeledDataset& local = client.bundle->local_test;

    auto emit = [&](const char* name, double local_acc, double global_acc) {
      ResultRecord r;
      r.run_seed = run_seed;
      r.client_id = client.client_id;
      r.baseline = name;
      r.local_accuracy = local_acc;
      r.global_accuracy = global_acc;
      r.config_fingerprint = fingerprint;
      r.scheme = scheme;
      r.grid_value = grid_value;
      r.q = q;
      records.push_back(std::move(r));
    };

    emit(kBaselineFedAvg,
         accuracy(nn::forward(spec, client.mixture.w_g, local.features),
                  local.labels),
         accuracy(nn::forward(spec, client.mixture.w_g, global_test.features),
                  global_test.labels));
    emit(kBaselineLocal,
         accuracy(nn::forward(spec, client.w_local, local.features),
                  local.labels),
         accuracy(nn::forward(spec, client.w_local, global_test.features),
                  global_test.labels));
    emit(kBaselineFineTuned,
         accuracy(nn::forward(spec, client.mixture.w_s, local.features),
                  local.labels),
         accuracy(nn::forward(spec, client.mixture.w_s, global_test.features),
                  global_test.labels));
    emit(kBaselineMixture,
         accuracy(perso::mixture_predict(client.mixture, local.features,
                                         perso::GateMode::Learned),
                  local.labels),
         accuracy(perso::mixture_predict(client.mixture, global_test.features,
                                         perso::GateMode::Learned),
                  global_test.labels));
  }
  return records;
}

namespace {

struct GroupKey {
  std::string scheme;
  double grid_value;
  double q;
  std::string baseline;

  bool operator<(const GroupKey& o) const {
    if (scheme != o.scheme) return scheme < o.scheme;
    if (grid_value != o.grid_value) return grid_value < o.grid_value;
    if (q != o.q) return q < o.q;
    if (baseline_rank() != o.baseline_rank()) {
      return baseline_rank() < o.baseline_rank();
    }
    return baseline < o.baseline;
  }
  int baseline_rank() const {
    if (baseline == kBaselineFedAvg) return 0;
    if (baseline == kBaselineLocal) return 1;
    if (baseline == kBaselineFineTuned) return 2;
    if (baseline == kBaselineMixture) return 3;
    return 4;
  }
};

struct RunAccumulator {
  double local_sum = 0.0;
  double global_sum = 0.0;
  long count = 0;
};

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

double ci95(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records) {
  // Per (group, run): client means; then statistics over runs.
  std::map<GroupKey, std::map<std::uint64_t, RunAccumulator>> groups;
  for (const auto& r : records) {
    GroupKey key{r.scheme, r.grid_value, r.q, r.baseline};
    auto& acc = groups[key][r.run_seed];
    acc.local_sum += r.local_accuracy;
    acc.global_sum += r.global_accuracy;
    acc.count += 1;
  }

  std::vector<SummaryRow> rows;
  rows.reserve(groups.size());
  for (const auto& [key, runs] : groups) {
    std::vector<double> local_means;
    std::vector<double> global_means;
    for (const auto& [seed, acc] : runs) {
      local_means.push_back(acc.local_sum / static_cast<double>(acc.count));
      global_means.push_back(acc.global_sum / static_cast<double>(acc.count));
    }
    SummaryRow row;
    row.baseline = key.baseline;
    row.scheme = key.scheme;
    row.grid_value = key.grid_value;
    row.q = key.q;
    row.local_mean = mean(local_means);
    row.local_ci95 = ci95(local_means);
    row.global_mean = mean(global_means);
    row.global_ci95 = ci95(global_means);
    row.runs = static_cast<int>(runs.size());
    rows.push_back(std::move(row));
  }

  // Fraction of the FedAvg global mean within the same (scheme, grid, q).
  for (auto& row : rows) {
    double fedavg_mean = 0.0;
    for (const auto& other : rows) {
      if (other.baseline == kBaselineFedAvg && other.scheme == row.scheme &&
          other.grid_value == row.grid_value && other.q == row.q) {
        fedavg_mean = other.global_mean;
        break;
      }
    }
    row.global_fraction_of_fedavg =
        fedavg_mean != 0.0 ? row.global_mean / fedavg_mean : 0.0;
  }
  return rows;
}

void write_results_csv(const std::vector<ResultRecord>& records,
                       std::ostream& out) {
  out << "run_seed,client_id,baseline,local_accuracy,global_accuracy,"
         "config_fingerprint\n";
  for (const auto& r : records) {
    out << r.run_seed << "," << r.client_id << "," << r.baseline << ","
        << fmt_double(r.local_accuracy) << "," << fmt_double(r.global_accuracy)
        << "," << r.config_fingerprint << "\n";
  }
}

void write_results_csv_file(const std::vector<ResultRecord>& records,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_results_csv(records, out);
}

void write_summary_csv(const std::vector<SummaryRow>& rows,
                       std::ostream& out) {
  out << "baseline,scheme,grid_value,q,local_accuracy_mean,local_accuracy_ci95,"
         "global_accuracy_mean,global_accuracy_ci95,global_fraction_of_fedavg,"
         "runs\n";
  for (const auto& r : rows) {
    out << r.baseline << "," << r.scheme << "," << fmt_double(r.grid_value)
        << "," << fmt_double(r.q) << "," << fmt_double(r.local_mean) << ","
        << fmt_double(r.local_ci95) << "," << fmt_double(r.global_mean) << ","
        << fmt_double(r.global_ci95) << ","
        << fmt_double(r.global_fraction_of_fedavg) << "," << r.runs << "\n";
  }
}

void write_summary_csv_file(const std::vector<SummaryRow>& rows,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_summary_csv(rows, out);
}

}  // namespace fedmoe::eval
