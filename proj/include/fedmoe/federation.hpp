#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedmoe/common.hpp"
#include "fedmoe/data.hpp"
#include "fedmoe/nn.hpp"

namespace fedmoe::fed {

struct FedSchedule {
  int rounds = 300;
  int local_epochs = 3;
  int batch_size = 10;
  double client_fraction = 0.05;
  int validation_interval = 50;
  int patience = 8;  // validation checkpoints without improvement
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;

  void validate() const;
  // round(C * K); held constant when opt-out shrinks the eligible set.
  int target_participants(int num_clients) const;
};

struct ClientState {
  int id = 0;
  data::ClientDataBundle bundle;
  Rng stream;  // batch-shuffle stream, advances only when the client trains
  // Filled in by the personalization stage.
  nn::ParamSet specialist;
  nn::ParamSet gate;

  ClientState() : stream(0) {}
  bool opt_in() const { return bundle.opt_in; }
};

struct GlobalModelState {
  nn::ParamSet w_g;
  nn::ParamSet best_w_g;
  int round = 0;
  double best_val_loss = 0.0;
  bool has_checkpoint = false;
  int checkpoints_since_best = 0;
};

struct Federation {
  GlobalModelState global;
  std::vector<ClientState> clients;
  int num_opt_in = 0;
};

struct RoundEntry {
  int round = 0;
  double mean_train_loss = 0.0;
  bool has_validation = false;
  double val_loss = 0.0;
  double val_acc = 0.0;
  std::vector<int> participants;
};

struct RoundLog {
  std::vector<RoundEntry> entries;

  // CSV: round,mean_train_loss,val_loss,val_acc,participants with blank
  // validation fields off-checkpoint and ids joined by ';'.
  void write_csv(std::ostream& out) const;
  void write_csv_file(const std::string& path) const;
};

struct ClientUpdate {
  int client_id = 0;
  nn::ParamSet params;
  long n = 0;
};

struct FedAvgResult {
  nn::ParamSet best_w_g;
  double best_val_loss = 0.0;
  int rounds_run = 0;
  RoundLog log;
  // Aggregation audit: ids that contributed per round, in aggregation order.
  std::vector<std::vector<int>> contributors;
};

// Seeds w_g from the experiment seed and assigns opt-in flags: exactly
// round(q * K) clients opt out, chosen by a seeded shuffle. All clients
// conceptually start from the same w_g.
Federation init_federation(const nn::MlpSpec& spec,
                           std::vector<data::ClientDataBundle> bundles,
                           double opt_out_q, std::uint64_t seed);

// Uniform sample without replacement from the opt-in clients. Throws
// ConfigError when fewer opt-in clients exist than the target count.
std::vector<int> select_participants(const Federation& fed,
                                     const FedSchedule& schedule, Rng& rng);

// E epochs of mini-batch Adam from the w_g snapshot on the client's opt-in
// train split. Returns the updated parameters and the train-set size;
// mean_train_loss receives the mean batch loss over the round.
ClientUpdate local_update(ClientState& client, const nn::MlpSpec& spec,
                          const nn::ParamSet& snapshot,
                          const FedSchedule& schedule,
                          double* mean_train_loss = nullptr);

// Coordinate-wise weighted mean with weights n_k / sum(n), accumulated in
// ascending client-id order so results are bit-reproducible.
nn::ParamSet fedavg_aggregate(const std::vector<ClientUpdate>& updates);

// The full protocol: select -> snapshot -> local updates -> aggregate, with
// validation on the participants' local validation sets every
// validation_interval rounds (and at the final round), early stopping after
// `patience` checkpoints without improvement. Returns the checkpoint with
// the best mean validation loss.
FedAvgResult run_fedavg(Federation& fed, const nn::MlpSpec& spec,
                        const FedSchedule& schedule, std::uint64_t seed);

}  // namespace fedmoe::fed
