#include "fedmoe/federation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedmoe::fed {

void FedSchedule::validate() const {
  if (rounds < 0) throw ConfigError("fedavg rounds must be >= 0");
  if (local_epochs < 0) throw ConfigError("local_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (client_fraction <= 0.0 || client_fraction > 1.0) {
    throw ConfigError("client_fraction must lie in (0, 1]");
  }
  if (validation_interval < 1) {
    throw ConfigError("validation_interval must be >= 1");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (eta <= 0.0) throw ConfigError("learning rate must be > 0");
}

int FedSchedule::target_participants(int num_clients) const {
  int target = static_cast<int>(
      std::lround(client_fraction * static_cast<double>(num_clients)));
  return std::max(target, 1);
}

Federation init_federation(const nn::MlpSpec& spec,
                           std::vector<data::ClientDataBundle> bundles,
                           double opt_out_q, std::uint64_t seed) {
  if (opt_out_q < 0.0 || opt_out_q > 1.0) {
    throw ConfigError("opt-out fraction q must lie in [0, 1]");
  }
  Federation fed;
  Rng init_rng(derive_seed(seed, {seed_tag("global-init")}));
  fed.global.w_g = nn::init_mlp_params(spec, init_rng);
  fed.global.best_w_g = fed.global.w_g;

  const int k = static_cast<int>(bundles.size());
  std::vector<int> ids(static_cast<std::size_t>(k));
  std::iota(ids.begin(), ids.end(), 0);
  Rng opt_rng(derive_seed(seed, {seed_tag("opt-out")}));
  opt_rng.shuffle(ids);
  long num_out = std::lround(opt_out_q * static_cast<double>(k));
  std::vector<char> opted_out(static_cast<std::size_t>(k), 0);
  for (long i = 0; i < num_out; ++i) {
    opted_out[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] = 1;
  }

  fed.clients.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    auto& c = fed.clients[static_cast<std::size_t>(i)];
    c.id = i;
    c.bundle = std::move(bundles[static_cast<std::size_t>(i)]);
    c.bundle.opt_in = !opted_out[static_cast<std::size_t>(i)];
    c.stream = Rng(derive_seed(seed, {seed_tag("client-stream"),
                                      static_cast<std::uint64_t>(i)}));
    if (c.bundle.opt_in) ++fed.num_opt_in;
  }
  return fed;
}

std::vector<int> select_participants(const Federation& fed,
                                     const FedSchedule& schedule, Rng& rng) {
  int target = schedule.target_participants(
      static_cast<int>(fed.clients.size()));
  std::vector<int> eligible;
  for (const auto& c : fed.clients) {
    if (c.opt_in()) eligible.push_back(c.id);
  }
  if (static_cast<int>(eligible.size()) < target) {
    throw ConfigError("only " + std::to_string(eligible.size()) +
                      " opt-in clients for " + std::to_string(target) +
                      " participant slots");
  }
  std::vector<int> chosen =
      rng.sample(eligible, static_cast<std::size_t>(target));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

namespace {

nn::Matrix rows_of(const nn::Matrix& m, const std::vector<int>& order,
                   std::size_t begin, std::size_t end) {
  nn::Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) {
    out.row(static_cast<Eigen::Index>(i - begin)) =
        m.row(order[i]);
  }
  return out;
}

std::vector<int> labels_of(const std::vector<int>& labels,
                           const std::vector<int>& order, std::size_t begin,
                           std::size_t end) {
  std::vector<int> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    out.push_back(labels[static_cast<std::size_t>(order[i])]);
  }
  return out;
}

double mean_val_accuracy(const nn::Matrix& outputs,
                         const std::vector<int>& labels) {
  long correct = 0;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < outputs.cols(); ++j) {
      if (outputs(i, j) > outputs(i, best)) best = static_cast<int>(j);
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(outputs.rows());
}

}  // namespace

ClientUpdate local_update(ClientState& client, const nn::MlpSpec& spec,
                          const nn::ParamSet& snapshot,
                          const FedSchedule& schedule,
                          double* mean_train_loss) {
  if (!client.opt_in()) {
    throw InternalError("client " + std::to_string(client.id) +
                        " is opted out and must not train for the federation");
  }
  const data::LabeledDataset& train = client.bundle.train;
  ClientUpdate update;
  update.client_id = client.id;
  update.params = snapshot;
  update.n = train.size();

  nn::AdamState adam = nn::make_adam(snapshot, schedule.eta, schedule.beta1,
                                     schedule.beta2);
  std::vector<int> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);

  double loss_sum = 0.0;
  long loss_rows = 0;
  try {
    for (int epoch = 0; epoch < schedule.local_epochs; ++epoch) {
      client.stream.shuffle(order);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(schedule.batch_size)) {
        std::size_t end = std::min(
            order.size(), start + static_cast<std::size_t>(schedule.batch_size));
        nn::Matrix x = rows_of(train.features, order, start, end);
        std::vector<int> y = labels_of(train.labels, order, start, end);
        auto [loss, grads] = nn::backward(spec, update.params, x, y);
        nn::adam_step(update.params, grads, adam);
        loss_sum += loss * static_cast<double>(end - start);
        loss_rows += static_cast<long>(end - start);
      }
    }
  } catch (const NumericError& e) {
    throw NumericError("client " + std::to_string(client.id) + ": " +
                       e.what());
  }
  if (mean_train_loss != nullptr) {
    if (loss_rows > 0) {
      *mean_train_loss = loss_sum / static_cast<double>(loss_rows);
    } else {
      *mean_train_loss = nn::cross_entropy(
          nn::forward(spec, update.params, train.features), train.labels);
    }
  }
  return update;
}

nn::ParamSet fedavg_aggregate(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) {
    throw InternalError("fedavg_aggregate needs at least one update");
  }
  std::vector<const ClientUpdate*> ordered;
  ordered.reserve(updates.size());
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });

  long total = 0;
  for (const auto* u : ordered) {
    if (u->n <= 0) throw InternalError("client update with n <= 0");
    if (!nn::same_template(u->params, ordered.front()->params)) {
      throw InternalError("fedavg_aggregate: parameter templates differ");
    }
    total += u->n;
  }

  // Weighted mean in delta form around the lowest-id update: identical
  // inputs reproduce the input bit-exactly and the weights still sum to 1.
  const nn::Vector base = nn::flatten(ordered.front()->params);
  nn::Vector acc = base;
  for (const auto* u : ordered) {
    double w = static_cast<double>(u->n) / static_cast<double>(total);
    acc += w * (nn::flatten(u->params) - base);
  }
  return nn::unflatten(acc, ordered.front()->params);
}

FedAvgResult run_fedavg(Federation& fed, const nn::MlpSpec& spec,
                        const FedSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  Rng select_rng(derive_seed(seed, {seed_tag("fedavg-select")}));

  // Fail before training when the opt-in pool cannot fill the round.
  int target = schedule.target_participants(static_cast<int>(fed.clients.size()));
  if (fed.num_opt_in < target) {
    throw ConfigError("only " + std::to_string(fed.num_opt_in) +
                      " opt-in clients for " + std::to_string(target) +
                      " participant slots");
  }

  FedAvgResult result;
  GlobalModelState& g = fed.global;
  g.best_w_g = g.w_g;
  g.has_checkpoint = false;
  g.checkpoints_since_best = 0;

  for (int round = 1; round <= schedule.rounds; ++round) {
    g.round = round;
    std::vector<int> participants = select_participants(fed, schedule, select_rng);

    const nn::ParamSet snapshot = g.w_g;
    std::vector<ClientUpdate> updates;
    updates.reserve(participants.size());
    double train_loss_sum = 0.0;
    for (int id : participants) {
      auto& client = fed.clients[static_cast<std::size_t>(id)];
      if (!client.opt_in()) {
        throw InternalError("opted-out client selected for a round");
      }
      double mean_loss = 0.0;
      try {
        updates.push_back(
            local_update(client, spec, snapshot, schedule, &mean_loss));
      } catch (const NumericError& e) {
        throw NumericError("round " + std::to_string(round) + ", " + e.what());
      }
      train_loss_sum += mean_loss;
    }
    g.w_g = fedavg_aggregate(updates);
    result.contributors.push_back(participants);

    RoundEntry entry;
    entry.round = round;
    entry.mean_train_loss =
        train_loss_sum / static_cast<double>(participants.size());
    entry.participants = participants;

    bool checkpoint = (round % schedule.validation_interval == 0) ||
                      round == schedule.rounds;
    if (checkpoint) {
      double val_loss_sum = 0.0;
      double val_acc_sum = 0.0;
      for (int id : participants) {
        const auto& val = fed.clients[static_cast<std::size_t>(id)].bundle.validation;
        nn::Matrix out = nn::forward(spec, g.w_g, val.features);
        val_loss_sum += nn::cross_entropy(out, val.labels);
        val_acc_sum += mean_val_accuracy(out, val.labels);
      }
      entry.has_validation = true;
      entry.val_loss = val_loss_sum / static_cast<double>(participants.size());
      entry.val_acc = val_acc_sum / static_cast<double>(participants.size());

      if (!g.has_checkpoint || entry.val_loss < g.best_val_loss) {
        g.has_checkpoint = true;
        g.best_val_loss = entry.val_loss;
        g.best_w_g = g.w_g;
        g.checkpoints_since_best = 0;
      } else {
        g.checkpoints_since_best += 1;
      }
    }
    result.log.entries.push_back(std::move(entry));
    result.rounds_run = round;

    if (checkpoint && g.checkpoints_since_best >= schedule.patience) {
      break;  // early stopping
    }
  }

  result.best_w_g = g.best_w_g;
  result.best_val_loss = g.has_checkpoint ? g.best_val_loss : 0.0;
  return result;
}

void RoundLog::write_csv(std::ostream& out) const {
  out << "round,mean_train_loss,val_loss,val_acc,participants\n";
  for (const auto& e : entries) {
    out << e.round << "," << fmt_double(e.mean_train_loss) << ",";
    if (e.has_validation) {
      out << fmt_double(e.val_loss) << "," << fmt_double(e.val_acc);
    } else {
      out << ",";
    }
    out << ",";
    for (std::size_t i = 0; i < e.participants.size(); ++i) {
      if (i > 0) out << ";";
      out << e.participants[i];
    }
    out << "\n";
  }
}

void RoundLog::write_csv_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_csv(out);
}

}  // namespace fedmoe::fed
