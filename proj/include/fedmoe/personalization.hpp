#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedmoe/common.hpp"
#include "fedmoe/data.hpp"
#include "fedmoe/nn.hpp"

namespace fedmoe::perso {

struct PersonalizationSchedule {
  int max_epochs = 500;
  int batch_size = 10;
  int patience = 25;  // epochs without validation improvement
  double eta_finetune = 1e-3;
  double eta_mixture = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;

  void validate() const;
};

// Per-client mixture: a frozen global expert, a trainable specialist with
// the same architecture, and a scalar gate h(x) in (0, 1) weighting them:
//   y_hat(x) = h(x) * f_s(x) + (1 - h(x)) * f_g(x)
struct MixtureModel {
  nn::MlpSpec expert_spec;
  nn::MlpSpec gate_spec;
  nn::ParamSet w_g;  // frozen; never touched by training here
  nn::ParamSet w_s;
  nn::ParamSet w_h;
};

// Gate architecture: the expert's hidden stack with a single sigmoid output.
nn::MlpSpec make_gate_spec(const nn::MlpSpec& expert_spec);

// Seeded gate init with a damped output layer so training starts from a
// neutral h ~= 0.5 and the error signal picks the winner.
nn::ParamSet init_gate_params(const nn::MlpSpec& gate_spec, Rng& rng);

enum class GateMode { Learned, AllSpecialist, AllGlobal };

struct EpochEntry {
  int epoch = 0;
  std::string stage;  // "finetune" | "mixture" | "local"
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool has_gate = false;
  double mean_gate = 0.0;
};

using PersonalizationLog = std::vector<EpochEntry>;

// Epoch-wise Adam with early stopping on validation loss. Epoch 0 records
// the starting point, so the returned parameters can never be worse than
// the initialization on the validation set. Shared by fine-tuning and the
// from-scratch local baseline.
nn::ParamSet train_early_stop(const nn::MlpSpec& spec, nn::ParamSet start,
                              const data::LabeledDataset& train,
                              const data::LabeledDataset& validation,
                              int max_epochs, int batch_size, double eta,
                              double beta1, double beta2, int patience,
                              Rng& stream, PersonalizationLog* log = nullptr,
                              const char* stage = "finetune");

// Step 2: specialist = the best returned global model fine-tuned on the
// client's full train split (opt-out clients included; this never leaves
// the client).
nn::ParamSet fine_tune(const nn::MlpSpec& expert_spec, const nn::ParamSet& w_g,
                       const data::ClientDataBundle& bundle,
                       const PersonalizationSchedule& schedule, Rng& stream,
                       PersonalizationLog* log = nullptr);

// Mixture prediction: returns (y_hat, h) with y_hat rows on the simplex and
// h the per-example gate values.
std::pair<nn::Matrix, nn::Vector> mixture_forward(const MixtureModel& mix,
                                                  const nn::Matrix& batch);

// Prediction with the gate overridden to a constant 1 (specialist only) or
// 0 (global only); Learned delegates to mixture_forward.
nn::Matrix mixture_predict(const MixtureModel& mix, const nn::Matrix& batch,
                           GateMode mode);

// Mean mixture cross-entropy and its gradients w.r.t. w_s and w_h. The
// global expert enters only through its (constant) predictions.
double mixture_loss_and_grads(const MixtureModel& mix, const nn::Matrix& batch,
                              const std::vector<int>& labels,
                              nn::ParamSet* grads_s, nn::ParamSet* grads_h,
                              double* mean_gate = nullptr);

// Step 3: joint Adam on (w_s, w_h) against the mixture loss over the
// client's full train split, early stopping on the client validation loss.
// w_g is bit-identical before and after. Returns the epoch-best pair and
// installs it into `mix`.
std::pair<nn::ParamSet, nn::ParamSet> train_mixture(
    MixtureModel& mix, const data::ClientDataBundle& bundle,
    const PersonalizationSchedule& schedule, Rng& stream,
    PersonalizationLog* log = nullptr);

void write_personalization_log(const PersonalizationLog& log,
                               const std::string& path);

}  // namespace fedmoe::perso
