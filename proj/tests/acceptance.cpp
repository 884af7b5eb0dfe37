// Acceptance suite: one criterion per section, one PASS/FAIL line each.
// Run all criteria with no arguments or a single criterion by number.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedmoe/experiment.hpp"

using namespace fedmoe;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int number;
  std::string title;
  std::function<bool(std::string&)> run;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness on 100 random MLPs, runtime < 10 s.

nn::MlpSpec random_spec(Rng& rng) {
  nn::MlpSpec spec;
  spec.layer_widths.push_back(1 + static_cast<int>(rng.below(8)));
  int hidden = 1 + static_cast<int>(rng.below(2));
  for (int i = 0; i < hidden; ++i) {
    spec.layer_widths.push_back(1 + static_cast<int>(rng.below(8)));
  }
  spec.layer_widths.push_back(2 + static_cast<int>(rng.below(7)));
  spec.output = nn::OutputActivation::Softmax;
  return spec;
}

bool criterion_gradients(std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(20250101);
  int nets = 0;
  long coords = 0;
  while (nets < 100) {
    nn::MlpSpec spec = random_spec(rng);
    nn::ParamSet params = nn::init_mlp_params(spec, rng);
    for (auto& e : params.entries) {
      if (e.dims.size() == 1) {
        for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
          e.value(r, 0) = 0.5 * rng.normal();
        }
      }
    }
    int n = 1 + static_cast<int>(rng.below(4));
    nn::Matrix batch(n, spec.input_dim());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < spec.input_dim(); ++j) batch(i, j) = rng.normal();
    }
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      labels.push_back(static_cast<int>(rng.below(spec.output_dim())));
    }
    // A finite-difference oracle is only a derivative oracle away from the
    // ReLU kinks and the loss clamp; regenerate degenerate draws.
    nn::ForwardCache cache = nn::forward_cached(spec, params, batch);
    double min_abs = 1e300;
    for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l) {
      min_abs = std::min(min_abs, cache.pre[l].array().abs().minCoeff());
    }
    double min_p = 1e300;
    for (Eigen::Index i = 0; i < cache.output().rows(); ++i) {
      min_p = std::min(min_p,
                       cache.output()(i, labels[static_cast<std::size_t>(i)]));
    }
    if (min_abs <= 1e-3 || min_p <= 1e-6) continue;
    ++nets;

    auto [loss, grads] = nn::backward(spec, params, batch, labels);
    nn::ParamSet work = params;
    const double h = 1e-5;
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
      auto& m = work.entries[e].value;
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          double orig = m(r, c);
          m(r, c) = orig + h;
          double up = nn::cross_entropy(nn::forward(spec, work, batch), labels);
          m(r, c) = orig - h;
          double dn = nn::cross_entropy(nn::forward(spec, work, batch), labels);
          m(r, c) = orig;
          double fd = (up - dn) / (2.0 * h);
          double g = grads.entries[e].value(r, c);
          double diff = std::abs(g - fd);
          double scale = std::max(std::abs(g), std::abs(fd));
          ++coords;
          if (diff > std::max(1e-4 * scale, 1e-7)) {
            detail = "net " + std::to_string(nets) + " entry '" +
                     params.entries[e].name + "' grad " + fmt_double(g) +
                     " vs fd " + fmt_double(fd);
            return false;
          }
        }
      }
    }
  }
  double elapsed = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  detail = std::to_string(coords) + " coordinates over 100 nets in " +
           fmt_double(elapsed) + " s";
  return elapsed < 10.0;
}

// ---------------------------------------------------------------------------
// Criterion 2: aggregation algebra.

bool criterion_aggregation(std::string& detail) {
  Rng rng(7);
  nn::MlpSpec spec;
  spec.layer_widths = {6, 8, 5};
  nn::ParamSet w = nn::init_mlp_params(spec, rng);

  fed::ClientUpdate a{0, w, 7}, b{1, w, 3}, c{2, w, 11};
  nn::ParamSet same1 = fed::fedavg_aggregate({a, b, c});
  nn::ParamSet same2 = fed::fedavg_aggregate({a, b, c});
  if (nn::flatten(same1) != nn::flatten(same2) ||
      nn::flatten(same1) != nn::flatten(w)) {
    detail = "identical inputs did not reproduce bit-exactly";
    return false;
  }

  fed::ClientUpdate p0, p4;
  p0.client_id = 0;
  p0.params.entries = {{"w", {1}, nn::Matrix::Constant(1, 1, 0.0)}};
  p0.n = 1;
  p4.client_id = 1;
  p4.params.entries = {{"w", {1}, nn::Matrix::Constant(1, 1, 4.0)}};
  p4.n = 3;
  double two_point = fed::fedavg_aggregate({p0, p4}).entries[0].value(0, 0);
  if (two_point != 3.0) {
    detail = "two-point example returned " + fmt_double(two_point);
    return false;
  }

  nn::ParamSet w2 = nn::init_mlp_params(spec, rng);
  nn::ParamSet w3 = nn::init_mlp_params(spec, rng);
  fed::ClientUpdate e1{0, w, 5}, e2{1, w2, 5}, e3{2, w3, 5};
  nn::Vector weighted = nn::flatten(fed::fedavg_aggregate({e1, e2, e3}));
  nn::Vector unweighted =
      (nn::flatten(w) + nn::flatten(w2) + nn::flatten(w3)) / 3.0;
  double err = (weighted - unweighted).cwiseAbs().maxCoeff();
  if (err > 1e-12) {
    detail = "equal-weight mean off by " + fmt_double(err);
    return false;
  }
  detail = "bit-exact on equals; two-point=3.0; equal-weight err=" +
           fmt_double(err);
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 3: freeze invariance over a 10-client desk experiment.

bool criterion_freeze(std::string& detail) {
  data::LabeledDataset base = data::gen_synthetic(10, 20, 10000, 2.5, 301);
  auto global_idx = data::make_global_test_indices(base, 1000, 302);
  data::IndexMask mask(static_cast<std::size_t>(base.size()), 0);
  for (int idx : global_idx) mask[static_cast<std::size_t>(idx)] = 1;

  data::PartitionSpec pspec;
  pspec.scheme = data::PartitionScheme::MajorityFraction;
  pspec.p = 0.7;
  pspec.num_clients = 10;
  pspec.samples_per_client = 100;
  pspec.seed = 303;
  auto partitions = data::partition_majority(base, pspec, mask);
  auto bundles = data::make_bundles(base, partitions, 0.8, 500, 304, mask);

  nn::MlpSpec spec;
  spec.layer_widths = {20, 32, 32, 10};
  fed::Federation federation = fed::init_federation(spec, bundles, 0.0, 305);
  fed::FedSchedule fs;
  fs.rounds = 100;
  fs.client_fraction = 0.3;
  fs.validation_interval = 20;
  fs.eta = 3e-3;
  fed::FedAvgResult fedavg = fed::run_fedavg(federation, spec, fs, 306);

  perso::PersonalizationSchedule ps;
  ps.max_epochs = 120;
  ps.patience = 25;
  ps.eta_finetune = 1e-3;
  ps.eta_mixture = 1e-3;
  nn::MlpSpec gate_spec = perso::make_gate_spec(spec);

  for (auto& client : federation.clients) {
    Rng stream(400 + static_cast<std::uint64_t>(client.id));
    nn::ParamSet w_s =
        perso::fine_tune(spec, fedavg.best_w_g, client.bundle, ps, stream);
    perso::MixtureModel mix;
    mix.expert_spec = spec;
    mix.gate_spec = gate_spec;
    mix.w_g = fedavg.best_w_g;
    mix.w_s = std::move(w_s);
    Rng gate_rng(500 + static_cast<std::uint64_t>(client.id));
    mix.w_h = perso::init_gate_params(gate_spec, gate_rng);

    auto before = nn::serialize_params(mix.w_g);
    perso::train_mixture(mix, client.bundle, ps, stream);
    auto after = nn::serialize_params(mix.w_g);
    if (before != after) {
      detail = "w_g bytes changed on client " + std::to_string(client.id);
      return false;
    }
  }
  detail = "w_g serialized bytes identical across all 10 train_mixture calls";
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 4: privacy boundary with q=0.9 over 100 clients.

bool criterion_privacy(std::string& detail) {
  data::LabeledDataset base = data::gen_synthetic(10, 20, 10000, 2.5, 401);
  data::PartitionSpec pspec;
  pspec.scheme = data::PartitionScheme::MajorityFraction;
  pspec.p = 0.7;
  pspec.num_clients = 100;
  pspec.samples_per_client = 100;
  pspec.seed = 402;
  auto partitions = data::partition_majority(base, pspec);
  auto bundles = data::make_bundles(base, partitions, 0.8, 100, 403);

  nn::MlpSpec spec;
  spec.layer_widths = {20, 32, 32, 10};
  fed::Federation federation = fed::init_federation(spec, bundles, 0.9, 404);
  if (federation.num_opt_in != 10) {
    detail = "expected 10 opt-in clients, got " +
             std::to_string(federation.num_opt_in);
    return false;
  }
  std::set<int> opt_in;
  for (const auto& c : federation.clients) {
    if (c.opt_in()) opt_in.insert(c.id);
  }

  fed::FedSchedule fs;
  fs.rounds = 100;
  fs.client_fraction = 0.05;  // 5 of 100, held constant under opt-out
  fs.validation_interval = 25;
  fs.eta = 3e-3;
  fed::FedAvgResult result = fed::run_fedavg(federation, spec, fs, 405);

  std::set<int> contributors;
  for (const auto& round_ids : result.contributors) {
    if (round_ids.size() != 5) {
      detail = "a round had " + std::to_string(round_ids.size()) +
               " participants";
      return false;
    }
    for (int id : round_ids) contributors.insert(id);
  }
  for (int id : contributors) {
    if (opt_in.count(id) == 0) {
      detail = "opted-out client " + std::to_string(id) + " contributed";
      return false;
    }
  }
  detail = std::to_string(contributors.size()) +
           " distinct contributors over 100 rounds, all inside the 10 "
           "opt-in clients; 5 participants every round";
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 5: partitioner statistics.

bool criterion_partitions(std::string& detail) {
  std::ostringstream notes;
  bool ok = true;

  data::LabeledDataset base = data::gen_synthetic(10, 8, 20000, 3.0, 501);
  for (double p : {0.2, 0.7, 1.0}) {
    data::PartitionSpec spec;
    spec.scheme = data::PartitionScheme::MajorityFraction;
    spec.p = p;
    spec.num_clients = 20;
    spec.samples_per_client = 100;
    spec.seed = 502;
    auto parts = data::partition_majority(base, spec);
    long expected = std::lround(p * 100);
    for (std::size_t i = 0; i < parts.size() && ok; ++i) {
      auto counts = data::class_counts(base, parts[i]);
      int c1 = static_cast<int>((2 * i) % 10);
      int c2 = static_cast<int>((2 * i + 1) % 10);
      long major = counts[static_cast<std::size_t>(c1)] +
                   counts[static_cast<std::size_t>(c2)];
      if (major != expected) {
        notes << "majority count " << major << " != " << expected << " at p="
              << fmt_double(p) << "; ";
        ok = false;
      }
    }
  }
  if (ok) notes << "majority counts exact for p in {0.2, 0.7, 1.0}; ";

  bool iid_ok = true;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    data::LabeledDataset d = data::gen_synthetic(10, 8, 20000, 3.0, 510 + seed);
    data::PartitionSpec spec;
    spec.scheme = data::PartitionScheme::Dirichlet;
    spec.alpha = 100.0;
    spec.num_clients = 10;
    spec.samples_per_client = 1000;
    spec.seed = seed;
    auto parts = data::partition_dirichlet(d, spec);
    for (const auto& part : parts) {
      auto counts = data::class_counts(d, part);
      for (int c = 0; c < 10; ++c) {
        double prop = counts[static_cast<std::size_t>(c)] /
                      static_cast<double>(part.size());
        if (std::abs(prop - 0.1) > 0.05) iid_ok = false;
      }
    }
  }
  notes << (iid_ok ? "alpha=100 proportions within +-0.05 of 0.1; "
                   : "alpha=100 proportions outside +-0.05; ");
  ok = ok && iid_ok;

  // alpha = 0.05 dominant-share clause, as stated by the criterion. The
  // per-class Dirichlet allocation rule cannot reach a 0.9 median at this
  // alpha (independent simulation puts the median near 0.7; the threshold
  // is only crossed near alpha ~= 0.015), so this clause is expected to
  // fail; it is asserted as written rather than weakened.
  std::vector<double> dominants;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    data::LabeledDataset d = data::gen_synthetic(10, 8, 20000, 3.0, 520 + seed);
    data::PartitionSpec spec;
    spec.scheme = data::PartitionScheme::Dirichlet;
    spec.alpha = 0.05;
    spec.num_clients = 10;
    spec.samples_per_client = 100;
    spec.seed = seed;
    auto parts = data::partition_dirichlet(d, spec);
    for (const auto& part : parts) {
      auto counts = data::class_counts(d, part);
      int top = *std::max_element(counts.begin(), counts.end());
      dominants.push_back(top / static_cast<double>(part.size()));
    }
  }
  std::sort(dominants.begin(), dominants.end());
  double median = 0.5 * (dominants[dominants.size() / 2 - 1] +
                         dominants[dominants.size() / 2]);
  notes << "alpha=0.05 median dominant share " << fmt_double(median)
        << (median >= 0.9 ? " >= 0.9" : " < 0.9 (structural; see notes)");
  ok = ok && median >= 0.9;

  detail = notes.str();
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 6: trend reproduction on the desk preset, runtime < 15 min.

struct TrendStats {
  // per grid value: run-seed -> baseline -> mean accuracy over clients
  std::map<double,
           std::map<std::uint64_t, std::map<std::string, double>>> local;
  std::map<double,
           std::map<std::uint64_t, std::map<std::string, double>>> global;
};

TrendStats collect(const std::vector<eval::ResultRecord>& records) {
  std::map<double, std::map<std::uint64_t,
                            std::map<std::string, std::pair<double, long>>>>
      lsum, gsum;
  for (const auto& r : records) {
    auto& l = lsum[r.grid_value][r.run_seed][r.baseline];
    l.first += r.local_accuracy;
    l.second += 1;
    auto& g = gsum[r.grid_value][r.run_seed][r.baseline];
    g.first += r.global_accuracy;
    g.second += 1;
  }
  TrendStats ts;
  for (const auto& [gv, runs] : lsum) {
    for (const auto& [seed, bases] : runs) {
      for (const auto& [b, acc] : bases) {
        ts.local[gv][seed][b] = acc.first / static_cast<double>(acc.second);
      }
    }
  }
  for (const auto& [gv, runs] : gsum) {
    for (const auto& [seed, bases] : runs) {
      for (const auto& [b, acc] : bases) {
        ts.global[gv][seed][b] = acc.first / static_cast<double>(acc.second);
      }
    }
  }
  return ts;
}

double run_mean(const std::map<std::uint64_t, std::map<std::string, double>>& runs,
                const std::string& baseline) {
  double sum = 0.0;
  for (const auto& [seed, bases] : runs) sum += bases.at(baseline);
  return sum / static_cast<double>(runs.size());
}

bool criterion_trends(std::string& detail) {
  auto t0 = std::chrono::steady_clock::now();
  exp::ExperimentConfig config = exp::preset("desk");
  config.output_dir = "acceptance_out/desk";
  fs::remove_all(config.output_dir);
  auto records = exp::run_experiment(config);
  double elapsed = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();

  TrendStats ts = collect(records);
  std::ostringstream notes;
  bool ok = true;

  // Completeness: every (grid value, run, sampled client) carries all four
  // baselines.
  std::size_t expected_records = config.grid_values.size() *
                                 config.q_values.size() *
                                 static_cast<std::size_t>(config.eval.runs) *
                                 static_cast<std::size_t>(
                                     config.eval.clients_to_sample) *
                                 4;
  if (records.size() != expected_records) {
    detail = "expected " + std::to_string(expected_records) + " records, got " +
             std::to_string(records.size());
    return false;
  }

  // (a) p=1.0: fine-tuned and mixture beat FedAvg locally by >= 20 points.
  double ft_gap = run_mean(ts.local.at(1.0), eval::kBaselineFineTuned) -
                  run_mean(ts.local.at(1.0), eval::kBaselineFedAvg);
  double mix_gap = run_mean(ts.local.at(1.0), eval::kBaselineMixture) -
                   run_mean(ts.local.at(1.0), eval::kBaselineFedAvg);
  notes << "(a) local gaps at p=1.0: fine-tuned +" << fmt_double(ft_gap)
        << ", mixture +" << fmt_double(mix_gap) << "; ";
  ok = ok && ft_gap >= 20.0 && mix_gap >= 20.0;

  // (b) mixture_global >= finetuned_global - 1.0 in >= 3 of 4 runs per p,
  // strictly greater at the middle p in the run-mean.
  for (double p : config.grid_values) {
    int good = 0;
    for (const auto& [seed, bases] : ts.global.at(p)) {
      if (bases.at(eval::kBaselineMixture) >=
          bases.at(eval::kBaselineFineTuned) - 1.0) {
        ++good;
      }
    }
    notes << "(b) p=" << fmt_double(p) << ": " << good << "/4 runs; ";
    ok = ok && good >= 3;
  }
  double mid_diff = run_mean(ts.global.at(0.7), eval::kBaselineMixture) -
                    run_mean(ts.global.at(0.7), eval::kBaselineFineTuned);
  notes << "(b) middle-p run-mean margin " << fmt_double(mid_diff) << "; ";
  ok = ok && mid_diff > 0.0;

  // (c) iid point: FedAvg beats local-only globally by >= 10 points.
  double iid_gap = run_mean(ts.global.at(0.2), eval::kBaselineFedAvg) -
                   run_mean(ts.global.at(0.2), eval::kBaselineLocal);
  notes << "(c) iid global gap +" << fmt_double(iid_gap) << "; ";
  ok = ok && iid_gap >= 10.0;

  // (d) local-only global accuracy at p=1.0 bounded by the 2-class ceiling.
  double local_global = run_mean(ts.global.at(1.0), eval::kBaselineLocal);
  notes << "(d) local-only global at p=1.0 = " << fmt_double(local_global)
        << "; ";
  ok = ok && local_global <= 25.0;

  notes << "elapsed " << fmt_double(elapsed) << " s";
  ok = ok && elapsed < 900.0;
  detail = notes.str();
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 7: early stopping returns the checkpoint minimum.

bool criterion_early_stopping(std::string& detail) {
  data::LabeledDataset base = data::gen_synthetic(10, 20, 10000, 2.5, 701);
  data::PartitionSpec pspec;
  pspec.scheme = data::PartitionScheme::MajorityFraction;
  pspec.p = 0.7;
  pspec.num_clients = 20;
  pspec.samples_per_client = 100;
  pspec.seed = 702;
  auto partitions = data::partition_majority(base, pspec);
  auto bundles = data::make_bundles(base, partitions, 0.8, 100, 703);

  nn::MlpSpec spec;
  spec.layer_widths = {20, 32, 10};
  fed::Federation federation = fed::init_federation(spec, bundles, 0.0, 704);
  fed::FedSchedule fs;
  fs.rounds = 120;
  fs.client_fraction = 0.25;
  fs.validation_interval = 10;
  fs.patience = 4;
  fs.eta = 3e-3;
  fed::FedAvgResult result = fed::run_fedavg(federation, spec, fs, 705);

  // Compare against the values as logged (CSV round-trip included).
  std::string csv_path = "acceptance_out/early_stopping_rounds.csv";
  fs::create_directories("acceptance_out");
  result.log.write_csv_file(csv_path);
  std::ifstream in(csv_path);
  std::string line;
  std::getline(in, line);  // header
  double min_logged = 1e300;
  int checkpoints = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');  // round
    std::getline(ss, field, ',');  // train loss
    std::getline(ss, field, ',');  // val loss
    if (!field.empty()) {
      min_logged = std::min(min_logged, std::stod(field));
      ++checkpoints;
    }
  }
  if (checkpoints == 0) {
    detail = "no validation checkpoints logged";
    return false;
  }
  if (result.best_val_loss != min_logged) {
    detail = "returned " + fmt_double(result.best_val_loss) +
             " != logged minimum " + fmt_double(min_logged);
    return false;
  }
  detail = "returned validation loss equals the minimum over " +
           std::to_string(checkpoints) + " logged checkpoints (exact)";
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism of a re-run.

bool criterion_determinism(std::string& detail) {
  exp::ExperimentConfig config = exp::preset("smoke");
  config.output_dir = "acceptance_out/det_a";
  fs::remove_all(config.output_dir);
  exp::run_experiment(config);

  exp::ExperimentConfig again = exp::preset("smoke");
  again.output_dir = "acceptance_out/det_b";
  fs::remove_all(again.output_dir);
  exp::run_experiment(again);

  if (slurp("acceptance_out/det_a/results.csv") !=
      slurp("acceptance_out/det_b/results.csv")) {
    detail = "results.csv differs between identical runs";
    return false;
  }
  int logs = 0;
  for (const auto& entry :
       fs::recursive_directory_iterator("acceptance_out/det_a")) {
    if (entry.path().filename() == "rounds.csv") {
      std::string other = entry.path().string();
      other.replace(other.find("det_a"), 5, "det_b");
      if (slurp(entry.path().string()) != slurp(other)) {
        detail = "round log differs: " + entry.path().string();
        return false;
      }
      ++logs;
    }
  }
  detail = "results.csv and " + std::to_string(logs) +
           " round logs byte-identical across re-runs";
  return logs > 0;
}

// ---------------------------------------------------------------------------
// Criterion 9: endpoint recovery with a constant gate.

bool criterion_endpoints(std::string& detail) {
  Rng rng(901);
  nn::MlpSpec spec;
  spec.layer_widths = {20, 32, 10};
  perso::MixtureModel mix;
  mix.expert_spec = spec;
  mix.gate_spec = perso::make_gate_spec(spec);
  mix.w_g = nn::init_mlp_params(spec, rng);
  mix.w_s = nn::init_mlp_params(spec, rng);
  mix.w_h = perso::init_gate_params(mix.gate_spec, rng);

  data::LabeledDataset test = data::gen_synthetic(10, 20, 1000, 2.5, 902);
  double specialist = eval::accuracy(
      nn::forward(spec, mix.w_s, test.features), test.labels);
  double global = eval::accuracy(nn::forward(spec, mix.w_g, test.features),
                                 test.labels);
  double gate_one = eval::accuracy(
      perso::mixture_predict(mix, test.features,
                             perso::GateMode::AllSpecialist),
      test.labels);
  double gate_zero = eval::accuracy(
      perso::mixture_predict(mix, test.features, perso::GateMode::AllGlobal),
      test.labels);
  if (gate_one != specialist) {
    detail = "gate=1 accuracy " + fmt_double(gate_one) + " != specialist " +
             fmt_double(specialist);
    return false;
  }
  if (gate_zero != global) {
    detail = "gate=0 accuracy " + fmt_double(gate_zero) + " != global " +
             fmt_double(global);
    return false;
  }
  detail = "gate=1 -> " + fmt_double(gate_one) + ", gate=0 -> " +
           fmt_double(gate_zero) + ", both exact on 1000 examples";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> criteria = {
      {1, "gradient correctness vs central finite differences",
       criterion_gradients},
      {2, "aggregation algebra", criterion_aggregation},
      {3, "freeze invariance of w_g across train_mixture",
       criterion_freeze},
      {4, "privacy boundary under q=0.9", criterion_privacy},
      {5, "partitioner statistics", criterion_partitions},
      {6, "trend reproduction on the desk preset", criterion_trends},
      {7, "early stopping returns the checkpoint minimum",
       criterion_early_stopping},
      {8, "byte-identical re-runs", criterion_determinism},
      {9, "endpoint recovery with a constant gate", criterion_endpoints},
  };

  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  int failures = 0;
  for (auto& criterion : criteria) {
    if (only != 0 && criterion.number != only) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("%s criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL",
                criterion.number, criterion.title.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}
