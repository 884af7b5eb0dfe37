#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fedmoe/evaluation.hpp"
#include "fedmoe/federation.hpp"

using namespace fedmoe;
using namespace fedmoe::eval;

namespace {

nn::MlpSpec spec_10() {
  nn::MlpSpec s;
  s.layer_widths = {10, 16, 10};
  s.output = nn::OutputActivation::Softmax;
  return s;
}

data::ClientDataBundle pathological_bundle(std::uint64_t seed) {
  data::LabeledDataset base = data::gen_synthetic(10, 10, 12000, 2.5, seed);
  data::PartitionSpec ps;
  ps.scheme = data::PartitionScheme::MajorityFraction;
  ps.p = 1.0;
  ps.num_clients = 1;
  ps.samples_per_client = 100;
  ps.seed = seed + 1;
  auto parts = data::partition_majority(base, ps);
  return data::make_bundles(base, parts, 0.8, 200, seed + 2)[0];
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("accuracy breaks argmax ties toward the lowest class") {
  // Constant uniform predictor: every row argmaxes to class 0.
  nn::Matrix uniform = nn::Matrix::Constant(10, 10, 0.1);
  std::vector<int> labels(10);
  for (int i = 0; i < 10; ++i) labels[static_cast<std::size_t>(i)] = i;
  CHECK(accuracy(uniform, labels) == 10.0);

  nn::Matrix perfect = nn::Matrix::Zero(4, 3);
  std::vector<int> y{0, 1, 2, 1};
  for (int i = 0; i < 4; ++i) {
    perfect(i, y[static_cast<std::size_t>(i)]) = 1.0;
  }
  CHECK(accuracy(perfect, y) == 100.0);

  nn::Matrix off = perfect;
  off.row(3) << 1.0, 0.0, 0.0;  // one of four wrong
  CHECK(accuracy(off, y) == 75.0);

  CHECK_THROWS_AS(accuracy(nn::Matrix(0, 3), {}), DataError);
}

TEST_CASE("local baseline starts from a fresh seed, not from w_g") {
  data::ClientDataBundle bundle = pathological_bundle(60);
  perso::PersonalizationSchedule schedule;
  schedule.max_epochs = 0;
  Rng stream(1);
  nn::ParamSet w = train_local_baseline(spec_10(), bundle, schedule, 3e-3,
                                        12345, stream);
  Rng init(12345);
  nn::ParamSet expected = nn::init_mlp_params(spec_10(), init);
  CHECK(nn::flatten(w) == nn::flatten(expected));
}

TEST_CASE("local baseline specializes but cannot generalize past two classes") {
  data::ClientDataBundle bundle = pathological_bundle(62);
  perso::PersonalizationSchedule schedule;
  schedule.max_epochs = 150;
  schedule.patience = 25;
  Rng stream(3);
  nn::MlpSpec spec = spec_10();
  nn::ParamSet w =
      train_local_baseline(spec, bundle, schedule, 3e-3, 777, stream);

  double local_acc = accuracy(nn::forward(spec, w, bundle.local_test.features),
                              bundle.local_test.labels);
  CHECK(local_acc > 60.0);  // far above the 10% chance level

  data::LabeledDataset balanced = data::gen_synthetic(10, 10, 1000, 2.5, 62);
  double global_acc =
      accuracy(nn::forward(spec, w, balanced.features), balanced.labels);
  CHECK(global_acc <= 25.0);  // two seen classes bound the ceiling
}

TEST_CASE("evaluation sampling and record bookkeeping") {
  CHECK(sample_eval_clients(10, 20, 5).size() == 10);  // min rule
  CHECK(sample_eval_clients(100, 20, 5).size() == 20);
  CHECK(sample_eval_clients(100, 20, 5) == sample_eval_clients(100, 20, 5));
  CHECK(sample_eval_clients(100, 20, 5) != sample_eval_clients(100, 20, 6));

  Rng rng(9);
  nn::MlpSpec spec = spec_10();
  data::LabeledDataset global_test = data::gen_synthetic(10, 10, 1000, 2.5, 64);
  data::ClientDataBundle bundle = pathological_bundle(66);

  std::vector<ClientEval> clients;
  for (int id : {2, 5}) {
    ClientEval ce;
    ce.client_id = id;
    ce.bundle = &bundle;
    ce.mixture.expert_spec = spec;
    ce.mixture.gate_spec = perso::make_gate_spec(spec);
    ce.mixture.w_g = nn::init_mlp_params(spec, rng);
    ce.mixture.w_s = nn::init_mlp_params(spec, rng);
    ce.mixture.w_h = perso::init_gate_params(ce.mixture.gate_spec, rng);
    ce.w_local = nn::init_mlp_params(spec, rng);
    clients.push_back(std::move(ce));
  }
  // Same global model for both entries, as in a real run.
  clients[1].mixture.w_g = clients[0].mixture.w_g;

  std::uint64_t digest_g = nn::params_digest(clients[0].mixture.w_g);
  std::uint64_t digest_s = nn::params_digest(clients[0].mixture.w_s);

  auto records = evaluate_experiment(clients, global_test, 31, "p=1;q=0",
                                     "majority", 1.0, 0.0);
  CHECK(records.size() == 8);  // 2 clients x 4 baselines

  // Evaluation is read-only.
  CHECK(nn::params_digest(clients[0].mixture.w_g) == digest_g);
  CHECK(nn::params_digest(clients[0].mixture.w_s) == digest_s);

  // FedAvg rows share one global accuracy; every client has all baselines.
  double fedavg_global = -1.0;
  std::set<std::pair<int, std::string>> seen;
  for (const auto& r : records) {
    seen.insert({r.client_id, r.baseline});
    if (r.baseline == kBaselineFedAvg) {
      if (fedavg_global < 0.0) {
        fedavg_global = r.global_accuracy;
      } else {
        CHECK(r.global_accuracy == fedavg_global);
      }
    }
    CHECK(r.local_accuracy >= 0.0);
    CHECK(r.local_accuracy <= 100.0);
    CHECK(r.config_fingerprint == "p=1;q=0");
  }
  CHECK(seen.size() == 8);
}

TEST_CASE("summaries aggregate runs with normal CIs and FedAvg fractions") {
  auto record = [](std::uint64_t run, const char* baseline, double local,
                   double global) {
    ResultRecord r;
    r.run_seed = run;
    r.client_id = 0;
    r.baseline = baseline;
    r.local_accuracy = local;
    r.global_accuracy = global;
    r.scheme = "majority";
    r.grid_value = 0.7;
    r.q = 0.0;
    return r;
  };

  // Single record: mean equals the record, CI width zero.
  auto single = summarize({record(1, kBaselineFedAvg, 80.0, 70.0)});
  REQUIRE(single.size() == 1);
  CHECK(single[0].local_mean == 80.0);
  CHECK(single[0].local_ci95 == 0.0);
  CHECK(single[0].global_fraction_of_fedavg == 1.0);

  // Two runs 40/60 -> mean 50; fraction relative to FedAvg global mean.
  auto rows = summarize({record(1, kBaselineFedAvg, 40.0, 50.0),
                         record(2, kBaselineFedAvg, 60.0, 50.0),
                         record(1, kBaselineMixture, 40.0, 40.0),
                         record(2, kBaselineMixture, 60.0, 60.0)});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].baseline == kBaselineFedAvg);
  CHECK(rows[0].local_mean == 50.0);
  CHECK(rows[0].global_fraction_of_fedavg == 1.0);
  CHECK(rows[1].baseline == kBaselineMixture);
  CHECK(rows[1].local_mean == 50.0);
  CHECK(rows[1].global_mean == 50.0);
  CHECK(rows[1].global_fraction_of_fedavg == 1.0);
  // CI of {40, 60}: 1.96 * sd / sqrt(2), sd = sqrt(200).
  CHECK(rows[0].local_ci95 ==
        doctest::Approx(1.96 * std::sqrt(200.0) / std::sqrt(2.0)));

  // Headers match the external interface.
  std::ostringstream rcsv;
  write_results_csv({record(1, kBaselineFedAvg, 80.0, 70.0)}, rcsv);
  CHECK(rcsv.str().rfind("run_seed,client_id,baseline,local_accuracy,"
                         "global_accuracy,config_fingerprint\n",
                         0) == 0);
  std::ostringstream scsv;
  write_summary_csv(rows, scsv);
  CHECK(scsv.str().rfind("baseline,scheme,grid_value,q,local_accuracy_mean,"
                         "local_accuracy_ci95,global_accuracy_mean,"
                         "global_accuracy_ci95,global_fraction_of_fedavg,"
                         "runs\n",
                         0) == 0);
}

TEST_SUITE_END();
