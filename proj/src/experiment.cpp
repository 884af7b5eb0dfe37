#include "fedmoe/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace fedmoe::exp {

std::string DatasetConfig::id() const {
  if (type == "idx") {
    return "idx-" + fs::path(images_path).filename().string();
  }
  std::ostringstream os;
  os << "synthetic-c" << num_classes << "-d" << dim << "-n" << n_total
     << "-sep" << fmt_double(class_separation);
  return os.str();
}

void SweepSpec::validate() const {
  for (double v : learning_rates) {
    if (v <= 0.0) throw ConfigError("sweep learning rates must be > 0");
  }
  if (!std::is_sorted(learning_rates.begin(), learning_rates.end())) {
    throw ConfigError("sweep learning rates must be sorted ascending");
  }
}

void ExperimentConfig::validate() const {
  if (dataset.type != "synthetic" && dataset.type != "idx") {
    throw ConfigError("dataset.type must be 'synthetic' or 'idx', got '" +
                      dataset.type + "'");
  }
  if (dataset.type == "idx" &&
      (dataset.images_path.empty() || dataset.labels_path.empty())) {
    throw ConfigError("dataset.images / dataset.labels required for idx data");
  }
  if (hidden_widths.empty()) {
    throw ConfigError("model.hidden_widths must name at least one layer");
  }
  if (grid_values.empty()) throw ConfigError("partition.values must be non-empty");
  if (q_values.empty()) throw ConfigError("opt_out.q_values must be non-empty");
  if (num_clients < 1) throw ConfigError("partition.num_clients must be >= 1");
  if (samples_per_client < 1) {
    throw ConfigError("partition.samples_per_client must be >= 1");
  }
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (eval.runs < 1) throw ConfigError("evaluation.runs must be >= 1");
  if (eval.clients_to_sample < 1) {
    throw ConfigError("evaluation.clients_to_sample must be >= 1");
  }
  fedavg.validate();
  personalization.validate();
  sweep.validate();
  // Opt-out feasibility is a configuration error, caught before any
  // training starts.
  int target = fedavg.target_participants(num_clients);
  for (double q : q_values) {
    if (q < 0.0 || q > 1.0) throw ConfigError("opt_out q must lie in [0, 1]");
    long opt_in = num_clients - std::lround(q * num_clients);
    if (opt_in < target) {
      throw ConfigError("q=" + fmt_double(q) + " leaves " +
                        std::to_string(opt_in) + " opt-in clients for " +
                        std::to_string(target) + " participant slots");
    }
  }
}

nn::MlpSpec ExperimentConfig::model_spec(int input_dim,
                                         int num_classes) const {
  nn::MlpSpec spec;
  spec.layer_widths.push_back(input_dim);
  for (int w : hidden_widths) spec.layer_widths.push_back(w);
  spec.layer_widths.push_back(num_classes);
  spec.output = nn::OutputActivation::Softmax;
  spec.validate();
  return spec;
}

std::string ExperimentConfig::scheme_name() const {
  return scheme == data::PartitionScheme::MajorityFraction ? "majority"
                                                           : "dirichlet";
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  // "desk": the reference setup at desk scale. 100 clients x 100 samples,
  // 5 participants per round, batch 10, 3 local epochs, validation every
  // 50 rounds; rounds capped at 300 for runtime (the full schedule uses
  // 1250).
  c.dataset.num_classes = 10;
  c.dataset.dim = 20;
  c.dataset.n_total = 10000;
  c.dataset.class_separation = 2.5;
  c.hidden_widths = {32, 32};
  c.scheme = data::PartitionScheme::MajorityFraction;
  c.grid_values = {0.2, 0.7, 1.0};
  c.num_clients = 100;
  c.samples_per_client = 100;
  c.q_values = {0.0};
  c.fedavg.rounds = 300;
  c.fedavg.local_epochs = 3;
  c.fedavg.batch_size = 10;
  c.fedavg.client_fraction = 0.05;
  c.fedavg.validation_interval = 50;
  c.fedavg.patience = 8;
  c.fedavg.eta = 3e-3;
  c.personalization.max_epochs = 500;
  c.personalization.batch_size = 10;
  c.personalization.patience = 25;
  c.personalization.eta_finetune = 1e-3;
  c.personalization.eta_mixture = 1e-3;
  c.eval.clients_to_sample = 20;
  c.eval.runs = 4;
  c.eval.local_test_size = 500;
  c.eval.global_test_size = 1000;
  c.train_fraction = 0.8;
  c.master_seed = 42;
  c.output_dir = "out";

  if (name == "desk") return c;
  if (name == "desk-dirichlet") {
    c.scheme = data::PartitionScheme::Dirichlet;
    c.grid_values = {0.05, 1.0, 100.0};
    return c;
  }
  if (name == "paper-majority") {
    c.grid_values = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    c.fedavg.rounds = 1250;
    return c;
  }
  if (name == "smoke") {
    c.dataset.dim = 10;
    c.dataset.n_total = 4000;
    c.hidden_widths = {16};
    c.grid_values = {0.2, 1.0};
    c.num_clients = 10;
    c.samples_per_client = 60;
    c.fedavg.rounds = 30;
    c.fedavg.client_fraction = 0.3;
    c.fedavg.validation_interval = 10;
    c.personalization.max_epochs = 60;
    c.eval.clients_to_sample = 5;
    c.eval.runs = 2;
    c.eval.local_test_size = 100;
    c.eval.global_test_size = 500;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  return {"desk", "desk-dirichlet", "paper-majority", "smoke"};
}

namespace {

[[noreturn]] void missing_key(const std::string& path) {
  throw ConfigError("config key '" + path + "' is missing or mistyped");
}

void check_known_keys(const ordered_json& j, const std::string& path,
                      const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items()) {
    if (known.count(key) == 0) {
      throw ConfigError("unknown config key '" +
                        (path.empty() ? key : path + "." + key) + "'");
    }
  }
}

template <class T>
T get_or(const ordered_json& j, const char* key, const std::string& path,
         T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    missing_key(path + "." + key);
  }
}

}  // namespace

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }

  ExperimentConfig c = preset("desk");
  check_known_keys(j, "",
                   {"dataset", "model", "partition", "opt_out", "fedavg",
                    "personalization", "evaluation", "sweep", "train_fraction",
                    "master_seed", "output_dir"});

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_known_keys(d, "dataset",
                     {"type", "num_classes", "dim", "n_total",
                      "class_separation", "images", "labels", "export_csv"});
    c.dataset.type = get_or<std::string>(d, "type", "dataset", c.dataset.type);
    c.dataset.num_classes =
        get_or<int>(d, "num_classes", "dataset", c.dataset.num_classes);
    c.dataset.dim = get_or<int>(d, "dim", "dataset", c.dataset.dim);
    c.dataset.n_total = get_or<long>(d, "n_total", "dataset", c.dataset.n_total);
    c.dataset.class_separation = get_or<double>(d, "class_separation",
                                                "dataset",
                                                c.dataset.class_separation);
    c.dataset.images_path =
        get_or<std::string>(d, "images", "dataset", c.dataset.images_path);
    c.dataset.labels_path =
        get_or<std::string>(d, "labels", "dataset", c.dataset.labels_path);
    c.dataset.export_csv =
        get_or<bool>(d, "export_csv", "dataset", c.dataset.export_csv);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_known_keys(m, "model", {"hidden_widths"});
    c.hidden_widths = get_or<std::vector<int>>(m, "hidden_widths", "model",
                                               c.hidden_widths);
  }
  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    check_known_keys(p, "partition",
                     {"scheme", "values", "num_clients", "samples_per_client"});
    std::string scheme = get_or<std::string>(p, "scheme", "partition",
                                             c.scheme_name());
    if (scheme == "majority") {
      c.scheme = data::PartitionScheme::MajorityFraction;
    } else if (scheme == "dirichlet") {
      c.scheme = data::PartitionScheme::Dirichlet;
    } else {
      throw ConfigError("partition.scheme must be 'majority' or 'dirichlet'");
    }
    c.grid_values = get_or<std::vector<double>>(p, "values", "partition",
                                                c.grid_values);
    c.num_clients = get_or<int>(p, "num_clients", "partition", c.num_clients);
    c.samples_per_client = get_or<int>(p, "samples_per_client", "partition",
                                       c.samples_per_client);
  }
  if (j.contains("opt_out")) {
    const auto& o = j.at("opt_out");
    check_known_keys(o, "opt_out", {"q_values"});
    c.q_values =
        get_or<std::vector<double>>(o, "q_values", "opt_out", c.q_values);
  }
  if (j.contains("fedavg")) {
    const auto& f = j.at("fedavg");
    check_known_keys(f, "fedavg",
                     {"rounds", "local_epochs", "batch_size", "client_fraction",
                      "validation_interval", "patience", "learning_rate",
                      "beta1", "beta2"});
    c.fedavg.rounds = get_or<int>(f, "rounds", "fedavg", c.fedavg.rounds);
    c.fedavg.local_epochs =
        get_or<int>(f, "local_epochs", "fedavg", c.fedavg.local_epochs);
    c.fedavg.batch_size =
        get_or<int>(f, "batch_size", "fedavg", c.fedavg.batch_size);
    c.fedavg.client_fraction = get_or<double>(f, "client_fraction", "fedavg",
                                              c.fedavg.client_fraction);
    c.fedavg.validation_interval = get_or<int>(f, "validation_interval",
                                               "fedavg",
                                               c.fedavg.validation_interval);
    c.fedavg.patience = get_or<int>(f, "patience", "fedavg", c.fedavg.patience);
    c.fedavg.eta = get_or<double>(f, "learning_rate", "fedavg", c.fedavg.eta);
    c.fedavg.beta1 = get_or<double>(f, "beta1", "fedavg", c.fedavg.beta1);
    c.fedavg.beta2 = get_or<double>(f, "beta2", "fedavg", c.fedavg.beta2);
  }
  if (j.contains("personalization")) {
    const auto& p = j.at("personalization");
    check_known_keys(p, "personalization",
                     {"max_epochs", "batch_size", "patience",
                      "learning_rate_finetune", "learning_rate_mixture",
                      "beta1", "beta2"});
    c.personalization.max_epochs = get_or<int>(p, "max_epochs",
                                               "personalization",
                                               c.personalization.max_epochs);
    c.personalization.batch_size = get_or<int>(p, "batch_size",
                                               "personalization",
                                               c.personalization.batch_size);
    c.personalization.patience = get_or<int>(p, "patience", "personalization",
                                             c.personalization.patience);
    c.personalization.eta_finetune =
        get_or<double>(p, "learning_rate_finetune", "personalization",
                       c.personalization.eta_finetune);
    c.personalization.eta_mixture =
        get_or<double>(p, "learning_rate_mixture", "personalization",
                       c.personalization.eta_mixture);
    c.personalization.beta1 =
        get_or<double>(p, "beta1", "personalization", c.personalization.beta1);
    c.personalization.beta2 =
        get_or<double>(p, "beta2", "personalization", c.personalization.beta2);
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    check_known_keys(e, "evaluation",
                     {"clients_to_sample", "runs", "local_test_size",
                      "global_test_size"});
    c.eval.clients_to_sample = get_or<int>(e, "clients_to_sample", "evaluation",
                                           c.eval.clients_to_sample);
    c.eval.runs = get_or<int>(e, "runs", "evaluation", c.eval.runs);
    c.eval.local_test_size = get_or<int>(e, "local_test_size", "evaluation",
                                         c.eval.local_test_size);
    c.eval.global_test_size = get_or<int>(e, "global_test_size", "evaluation",
                                          c.eval.global_test_size);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_known_keys(s, "sweep", {"learning_rates"});
    c.sweep.learning_rates = get_or<std::vector<double>>(
        s, "learning_rates", "sweep", c.sweep.learning_rates);
  }
  c.train_fraction =
      get_or<double>(j, "train_fraction", "", c.train_fraction);
  c.master_seed = get_or<std::uint64_t>(j, "master_seed", "", c.master_seed);
  c.output_dir = get_or<std::string>(j, "output_dir", "", c.output_dir);

  c.validate();
  return c;
}

namespace {

ordered_json config_json(const ExperimentConfig& c) {
  ordered_json j;
  ordered_json d;
  d["type"] = c.dataset.type;
  if (c.dataset.type == "synthetic") {
    d["num_classes"] = c.dataset.num_classes;
    d["dim"] = c.dataset.dim;
    d["n_total"] = c.dataset.n_total;
    d["class_separation"] = c.dataset.class_separation;
  } else {
    d["images"] = c.dataset.images_path;
    d["labels"] = c.dataset.labels_path;
  }
  d["export_csv"] = c.dataset.export_csv;
  j["dataset"] = d;
  j["model"] = {{"hidden_widths", c.hidden_widths}};
  j["partition"] = {{"scheme", c.scheme_name()},
                    {"values", c.grid_values},
                    {"num_clients", c.num_clients},
                    {"samples_per_client", c.samples_per_client}};
  j["opt_out"] = {{"q_values", c.q_values}};
  j["fedavg"] = {{"rounds", c.fedavg.rounds},
                 {"local_epochs", c.fedavg.local_epochs},
                 {"batch_size", c.fedavg.batch_size},
                 {"client_fraction", c.fedavg.client_fraction},
                 {"validation_interval", c.fedavg.validation_interval},
                 {"patience", c.fedavg.patience},
                 {"learning_rate", c.fedavg.eta},
                 {"beta1", c.fedavg.beta1},
                 {"beta2", c.fedavg.beta2}};
  j["personalization"] = {{"max_epochs", c.personalization.max_epochs},
                          {"batch_size", c.personalization.batch_size},
                          {"patience", c.personalization.patience},
                          {"learning_rate_finetune",
                           c.personalization.eta_finetune},
                          {"learning_rate_mixture",
                           c.personalization.eta_mixture},
                          {"beta1", c.personalization.beta1},
                          {"beta2", c.personalization.beta2}};
  j["evaluation"] = {{"clients_to_sample", c.eval.clients_to_sample},
                     {"runs", c.eval.runs},
                     {"local_test_size", c.eval.local_test_size},
                     {"global_test_size", c.eval.global_test_size}};
  if (!c.sweep.learning_rates.empty()) {
    j["sweep"] = {{"learning_rates", c.sweep.learning_rates}};
  }
  j["train_fraction"] = c.train_fraction;
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& config) {
  return config_json(config).dump(2) + "\n";
}

std::uint64_t run_seed_of(const ExperimentConfig& config,
                          std::size_t grid_index, std::size_t q_index,
                          int run_index) {
  return derive_seed(config.master_seed,
                     {seed_tag("run"), seed_tag(config.scheme_name().c_str()),
                      grid_index, q_index,
                      static_cast<std::uint64_t>(run_index)});
}

namespace {

std::string run_dir_name(const ExperimentConfig& config, std::size_t gi,
                         std::size_t qi, int run) {
  std::ostringstream os;
  os << config.scheme_name() << "_"
     << (config.scheme == data::PartitionScheme::MajorityFraction ? "p"
                                                                  : "alpha")
     << fmt_double(config.grid_values[gi]) << "_q"
     << fmt_double(config.q_values[qi]) << "_run" << run;
  return os.str();
}

std::string fingerprint_of(const ExperimentConfig& config, std::size_t gi,
                           std::size_t qi) {
  std::ostringstream os;
  os << (config.scheme == data::PartitionScheme::MajorityFraction ? "p="
                                                                  : "alpha=")
     << fmt_double(config.grid_values[gi]) << ";q="
     << fmt_double(config.q_values[qi]) << ";dataset=" << config.dataset.id();
  return os.str();
}

}  // namespace

PipelineOutput run_pipeline(const ExperimentConfig& config,
                            std::size_t grid_index, std::size_t q_index,
                            int run_index,
                            const data::LabeledDataset* fixed_base) {
  const std::uint64_t rs = run_seed_of(config, grid_index, q_index, run_index);
  const double grid_value = config.grid_values[grid_index];
  const double q = config.q_values[q_index];

  data::LabeledDataset generated;
  const data::LabeledDataset* base = fixed_base;
  if (base == nullptr) {
    generated = data::gen_synthetic(config.dataset.num_classes,
                                    config.dataset.dim, config.dataset.n_total,
                                    config.dataset.class_separation,
                                    derive_seed(rs, {seed_tag("data")}));
    base = &generated;
  }

  PipelineOutput out;
  out.run_dir = config.output_dir + "/runs/" +
                run_dir_name(config, grid_index, q_index, run_index);
  fs::create_directories(out.run_dir);
  if (config.dataset.export_csv && fixed_base == nullptr) {
    data::write_csv(*base, out.run_dir + "/data.csv");
  }

  auto global_idx = data::make_global_test_indices(
      *base, config.eval.global_test_size,
      derive_seed(rs, {seed_tag("global-test")}));
  data::IndexMask mask(static_cast<std::size_t>(base->size()), 0);
  for (int idx : global_idx) mask[static_cast<std::size_t>(idx)] = 1;
  data::LabeledDataset global_test = base->subset(global_idx);

  data::PartitionSpec pspec;
  pspec.scheme = config.scheme;
  pspec.p = grid_value;
  pspec.alpha = grid_value;
  pspec.num_clients = config.num_clients;
  pspec.samples_per_client = config.samples_per_client;
  pspec.seed = derive_seed(rs, {seed_tag("partition")});
  data::PartitionReport report;
  auto partitions =
      config.scheme == data::PartitionScheme::MajorityFraction
          ? data::partition_majority(*base, pspec, mask)
          : data::partition_dirichlet(*base, pspec, mask, &report);
  auto bundles = data::make_bundles(*base, partitions, config.train_fraction,
                                    config.eval.local_test_size,
                                    derive_seed(rs, {seed_tag("bundles")}),
                                    mask, &report);

  nn::MlpSpec spec = config.model_spec(base->dim(), base->num_classes);
  fed::Federation federation = fed::init_federation(
      spec, std::move(bundles), q, derive_seed(rs, {seed_tag("federation")}));
  fed::FedAvgResult fedavg = fed::run_fedavg(
      federation, spec, config.fedavg, derive_seed(rs, {seed_tag("fedavg")}));
  fedavg.log.write_csv_file(out.run_dir + "/rounds.csv");
  nn::save_params_file(fedavg.best_w_g, out.run_dir + "/global_model.bin");
  out.fedavg_rounds_run = fedavg.rounds_run;
  out.fedavg_best_val_loss = fedavg.best_val_loss;

  if (!report.notes.empty()) {
    std::ofstream notes(out.run_dir + "/partition_notes.txt");
    for (const auto& n : report.notes) notes << n << "\n";
  }

  nn::MlpSpec gate_spec = perso::make_gate_spec(spec);
  auto eval_ids = eval::sample_eval_clients(
      config.num_clients, config.eval.clients_to_sample, rs);

  std::vector<eval::ClientEval> evals;
  evals.reserve(eval_ids.size());
  for (int id : eval_ids) {
    auto& client = federation.clients[static_cast<std::size_t>(id)];
    const std::uint64_t uid = static_cast<std::uint64_t>(id);
    perso::PersonalizationLog log;

    Rng finetune_stream(derive_seed(rs, {seed_tag("finetune"), uid}));
    nn::ParamSet w_s =
        perso::fine_tune(spec, fedavg.best_w_g, client.bundle,
                         config.personalization, finetune_stream, &log);

    eval::ClientEval ce;
    ce.client_id = id;
    ce.bundle = &client.bundle;
    ce.mixture.expert_spec = spec;
    ce.mixture.gate_spec = gate_spec;
    ce.mixture.w_g = fedavg.best_w_g;
    ce.mixture.w_s = std::move(w_s);
    Rng gate_rng(derive_seed(rs, {seed_tag("gate"), uid}));
    ce.mixture.w_h = perso::init_gate_params(gate_spec, gate_rng);

    const auto frozen = nn::serialize_params(ce.mixture.w_g);
    Rng mixture_stream(derive_seed(rs, {seed_tag("mixture"), uid}));
    perso::train_mixture(ce.mixture, client.bundle, config.personalization,
                         mixture_stream, &log);
    if (nn::serialize_params(ce.mixture.w_g) != frozen) {
      throw InternalError("frozen global expert changed on client " +
                          std::to_string(id));
    }

    perso::write_personalization_log(
        log, out.run_dir + "/perso_client" + std::to_string(id) + ".csv");

    Rng local_stream(derive_seed(rs, {seed_tag("local"), uid}));
    ce.w_local = eval::train_local_baseline(
        spec, client.bundle, config.personalization, config.fedavg.eta,
        derive_seed(rs, {seed_tag("local-init"), uid}), local_stream);
    client.specialist = ce.mixture.w_s;
    client.gate = ce.mixture.w_h;
    evals.push_back(std::move(ce));
  }

  out.records = eval::evaluate_experiment(
      evals, global_test, rs, fingerprint_of(config, grid_index, q_index),
      config.scheme_name(), grid_value, q);
  return out;
}

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
}

}  // namespace

std::vector<eval::ResultRecord> run_experiment(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir + "/runs");

  std::optional<data::LabeledDataset> fixed;
  if (config.dataset.type == "idx") {
    fixed = data::load_idx(config.dataset.images_path,
                           config.dataset.labels_path);
    if (config.dataset.export_csv) {
      data::write_csv(*fixed, config.output_dir + "/data.csv");
    }
  }

  // Derived seeds must be distinct across the grid.
  std::set<std::uint64_t> seeds;
  std::size_t expected = 0;
  for (std::size_t gi = 0; gi < config.grid_values.size(); ++gi) {
    for (std::size_t qi = 0; qi < config.q_values.size(); ++qi) {
      for (int run = 0; run < config.eval.runs; ++run) {
        seeds.insert(run_seed_of(config, gi, qi, run));
        ++expected;
      }
    }
  }
  if (seeds.size() != expected) {
    throw InternalError("derived run seeds collide; change the master seed");
  }

  ordered_json manifest;
  manifest["status"] = "running";
  manifest["config"] = config_json(config);
  manifest["runs"] = ordered_json::array();

  std::vector<eval::ResultRecord> records;
  try {
    for (std::size_t gi = 0; gi < config.grid_values.size(); ++gi) {
      for (std::size_t qi = 0; qi < config.q_values.size(); ++qi) {
        for (int run = 0; run < config.eval.runs; ++run) {
          PipelineOutput out = run_pipeline(config, gi, qi, run,
                                            fixed ? &*fixed : nullptr);
          records.insert(records.end(), out.records.begin(),
                         out.records.end());
          ordered_json entry;
          entry["scheme"] = config.scheme_name();
          entry["grid_value"] = config.grid_values[gi];
          entry["q"] = config.q_values[qi];
          entry["run_index"] = run;
          entry["run_seed"] = run_seed_of(config, gi, qi, run);
          entry["dir"] = out.run_dir;
          entry["fedavg_rounds_run"] = out.fedavg_rounds_run;
          entry["fedavg_best_val_loss"] = out.fedavg_best_val_loss;
          manifest["runs"].push_back(entry);
        }
      }
    }
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    write_text_file(config.output_dir + "/manifest.json",
                    manifest.dump(2) + "\n");
    throw;
  }

  eval::write_results_csv_file(records, config.output_dir + "/results.csv");
  eval::write_summary_csv_file(eval::summarize(records),
                               config.output_dir + "/summary.csv");
  manifest["status"] = "ok";
  manifest["outputs"] = {{"results", config.output_dir + "/results.csv"},
                         {"summary", config.output_dir + "/summary.csv"}};
  write_text_file(config.output_dir + "/manifest.json",
                  manifest.dump(2) + "\n");
  return records;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config) {
  config.validate();
  fs::create_directories(config.output_dir);
  std::vector<double> values = config.sweep.learning_rates;
  if (values.empty()) {
    // The reference ladder: 1-5 steps per decade from 1e-7 to 5e-3.
    values = {1e-7, 5e-7, 1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3};
  }

  const std::uint64_t rs = run_seed_of(config, 0, 0, 0);
  std::optional<data::LabeledDataset> fixed;
  const data::LabeledDataset* base = nullptr;
  data::LabeledDataset generated;
  if (config.dataset.type == "idx") {
    fixed = data::load_idx(config.dataset.images_path,
                           config.dataset.labels_path);
    base = &*fixed;
  } else {
    generated = data::gen_synthetic(config.dataset.num_classes,
                                    config.dataset.dim, config.dataset.n_total,
                                    config.dataset.class_separation,
                                    derive_seed(rs, {seed_tag("data")}));
    base = &generated;
  }

  // Reserve the balanced validation pool before clients draw.
  auto balanced_idx = data::make_global_test_indices(
      *base, config.eval.global_test_size,
      derive_seed(rs, {seed_tag("balanced-val")}));
  data::IndexMask mask(static_cast<std::size_t>(base->size()), 0);
  for (int idx : balanced_idx) mask[static_cast<std::size_t>(idx)] = 1;
  data::LabeledDataset balanced = base->subset(balanced_idx);

  data::PartitionSpec pspec;
  pspec.scheme = config.scheme;
  pspec.p = config.grid_values[0];
  pspec.alpha = config.grid_values[0];
  pspec.num_clients = config.num_clients;
  pspec.samples_per_client = config.samples_per_client;
  pspec.seed = derive_seed(rs, {seed_tag("partition")});
  auto partitions = config.scheme == data::PartitionScheme::MajorityFraction
                        ? data::partition_majority(*base, pspec, mask)
                        : data::partition_dirichlet(*base, pspec, mask);
  auto bundles = data::make_bundles(*base, partitions, config.train_fraction,
                                    config.eval.local_test_size,
                                    derive_seed(rs, {seed_tag("bundles")}),
                                    mask);

  nn::MlpSpec spec = config.model_spec(base->dim(), base->num_classes);
  const fed::Federation proto = fed::init_federation(
      spec, std::move(bundles), config.q_values[0],
      derive_seed(rs, {seed_tag("federation")}));

  std::vector<SweepRow> rows;
  rows.reserve(values.size());
  for (double eta : values) {
    fed::FedSchedule schedule = config.fedavg;
    schedule.eta = eta;
    fed::Federation federation = proto;
    SweepRow row;
    row.learning_rate = eta;
    try {
      fed::FedAvgResult result = fed::run_fedavg(
          federation, spec, schedule, derive_seed(rs, {seed_tag("fedavg")}));
      row.balanced_val_accuracy = eval::accuracy(
          nn::forward(spec, result.best_w_g, balanced.features),
          balanced.labels);
    } catch (const NumericError&) {
      row.diverged = true;
    }
    rows.push_back(row);
  }

  double best_acc = -1.0;
  std::size_t best_idx = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].diverged && rows[i].balanced_val_accuracy > best_acc) {
      best_acc = rows[i].balanced_val_accuracy;
      best_idx = i;
    }
  }
  if (best_idx < rows.size()) rows[best_idx].best = true;

  std::ostringstream os;
  os << "learning_rate,status,balanced_val_accuracy,best\n";
  for (const auto& r : rows) {
    os << fmt_double(r.learning_rate) << ","
       << (r.diverged ? "diverged" : "ok") << ",";
    if (!r.diverged) os << fmt_double(r.balanced_val_accuracy);
    os << "," << (r.best ? 1 : 0) << "\n";
  }
  write_text_file(config.output_dir + "/sweep_summary.csv", os.str());
  return rows;
}

}  // namespace fedmoe::exp
