#include "fedmoe/personalization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fedmoe::perso {

void PersonalizationSchedule::validate() const {
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (eta_finetune <= 0.0 || eta_mixture <= 0.0) {
    throw ConfigError("personalization learning rates must be > 0");
  }
  if (eta_mixture > eta_finetune + 1e-15) {
    throw ConfigError("eta_mixture must not exceed eta_finetune");
  }
}

nn::MlpSpec make_gate_spec(const nn::MlpSpec& expert_spec) {
  nn::MlpSpec gate = expert_spec;
  gate.layer_widths.back() = 1;
  gate.output = nn::OutputActivation::SigmoidScalar;
  gate.validate();
  return gate;
}

nn::ParamSet init_gate_params(const nn::MlpSpec& gate_spec, Rng& rng) {
  nn::ParamSet params = nn::init_mlp_params(gate_spec, rng);
  // Damp the output layer: logits start near zero, h near 0.5.
  auto& out_w = params.entries[params.entries.size() - 2];
  auto& out_b = params.entries[params.entries.size() - 1];
  out_w.value *= 0.1;
  out_b.value.setZero();
  return params;
}

namespace {

nn::Matrix gather_rows(const nn::Matrix& m, const std::vector<int>& order,
                       std::size_t begin, std::size_t end) {
  nn::Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) {
    out.row(static_cast<Eigen::Index>(i - begin)) = m.row(order[i]);
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<int>& order,
                               std::size_t begin, std::size_t end) {
  std::vector<int> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    out.push_back(labels[static_cast<std::size_t>(order[i])]);
  }
  return out;
}

}  // namespace

nn::ParamSet train_early_stop(const nn::MlpSpec& spec, nn::ParamSet start,
                              const data::LabeledDataset& train,
                              const data::LabeledDataset& validation,
                              int max_epochs, int batch_size, double eta,
                              double beta1, double beta2, int patience,
                              Rng& stream, PersonalizationLog* log,
                              const char* stage) {
  nn::ParamSet params = std::move(start);
  nn::ParamSet best = params;
  double best_val =
      nn::cross_entropy(nn::forward(spec, params, validation.features),
                        validation.labels);
  if (log != nullptr) {
    EpochEntry e;
    e.epoch = 0;
    e.stage = stage;
    e.train_loss = nn::cross_entropy(
        nn::forward(spec, params, train.features), train.labels);
    e.val_loss = best_val;
    log->push_back(std::move(e));
  }

  nn::AdamState adam = nn::make_adam(params, eta, beta1, beta2);
  std::vector<int> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    stream.shuffle(order);
    double loss_sum = 0.0;
    long rows = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(batch_size)) {
      std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
      nn::Matrix x = gather_rows(train.features, order, begin, end);
      std::vector<int> y = gather_labels(train.labels, order, begin, end);
      auto [loss, grads] = nn::backward(spec, params, x, y);
      nn::adam_step(params, grads, adam);
      loss_sum += loss * static_cast<double>(end - begin);
      rows += static_cast<long>(end - begin);
    }
    double val = nn::cross_entropy(
        nn::forward(spec, params, validation.features), validation.labels);
    if (log != nullptr) {
      EpochEntry e;
      e.epoch = epoch;
      e.stage = stage;
      e.train_loss = loss_sum / static_cast<double>(rows);
      e.val_loss = val;
      log->push_back(std::move(e));
    }
    if (val < best_val) {
      best_val = val;
      best = params;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= patience) {
      break;
    }
  }
  return best;
}

nn::ParamSet fine_tune(const nn::MlpSpec& expert_spec, const nn::ParamSet& w_g,
                       const data::ClientDataBundle& bundle,
                       const PersonalizationSchedule& schedule, Rng& stream,
                       PersonalizationLog* log) {
  schedule.validate();
  return train_early_stop(expert_spec, w_g, bundle.train, bundle.validation,
                          schedule.max_epochs, schedule.batch_size,
                          schedule.eta_finetune, schedule.beta1,
                          schedule.beta2, schedule.patience, stream, log,
                          "finetune");
}

std::pair<nn::Matrix, nn::Vector> mixture_forward(const MixtureModel& mix,
                                                  const nn::Matrix& batch) {
  nn::Matrix specialist = nn::forward(mix.expert_spec, mix.w_s, batch);
  nn::Matrix global = nn::forward(mix.expert_spec, mix.w_g, batch);
  nn::Vector h = nn::forward(mix.gate_spec, mix.w_h, batch).col(0);
  nn::Matrix mixed =
      (specialist.array().colwise() * h.array() +
       global.array().colwise() * (1.0 - h.array()))
          .matrix();
  return {std::move(mixed), std::move(h)};
}

nn::Matrix mixture_predict(const MixtureModel& mix, const nn::Matrix& batch,
                           GateMode mode) {
  switch (mode) {
    case GateMode::AllSpecialist:
      return nn::forward(mix.expert_spec, mix.w_s, batch);
    case GateMode::AllGlobal:
      return nn::forward(mix.expert_spec, mix.w_g, batch);
    case GateMode::Learned:
    default:
      return mixture_forward(mix, batch).first;
  }
}

double mixture_loss_and_grads(const MixtureModel& mix, const nn::Matrix& batch,
                              const std::vector<int>& labels,
                              nn::ParamSet* grads_s, nn::ParamSet* grads_h,
                              double* mean_gate) {
  const Eigen::Index n = batch.rows();
  nn::ForwardCache cache_s =
      nn::forward_cached(mix.expert_spec, mix.w_s, batch);
  nn::ForwardCache cache_h = nn::forward_cached(mix.gate_spec, mix.w_h, batch);
  const nn::Matrix& specialist = cache_s.output();
  nn::Matrix global = nn::forward(mix.expert_spec, mix.w_g, batch);
  nn::Vector h = cache_h.output().col(0);

  nn::Matrix mixed =
      (specialist.array().colwise() * h.array() +
       global.array().colwise() * (1.0 - h.array()))
          .matrix();
  double loss = nn::cross_entropy(mixed, labels);
  if (mean_gate != nullptr) {
    *mean_gate = h.mean();
  }
  if (grads_s == nullptr && grads_h == nullptr) return loss;

  // d loss / d y_hat is a single entry per row; rows below the probability
  // clamp sit on the flat part of the loss and contribute nothing.
  nn::Matrix d_mixed = nn::Matrix::Zero(n, mixed.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    double p = mixed(i, y);
    if (p >= 1e-12) {
      d_mixed(i, y) = -1.0 / (static_cast<double>(n) * p);
    }
  }

  if (grads_s != nullptr) {
    nn::Matrix d_specialist =
        (d_mixed.array().colwise() * h.array()).matrix();
    *grads_s = nn::backward_from_output(mix.expert_spec, mix.w_s, cache_s,
                                        d_specialist);
  }
  if (grads_h != nullptr) {
    nn::Matrix d_h(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      int y = labels[static_cast<std::size_t>(i)];
      d_h(i, 0) = d_mixed(i, y) * (specialist(i, y) - global(i, y));
    }
    *grads_h = nn::backward_from_output(mix.gate_spec, mix.w_h, cache_h, d_h);
  }
  return loss;
}

std::pair<nn::ParamSet, nn::ParamSet> train_mixture(
    MixtureModel& mix, const data::ClientDataBundle& bundle,
    const PersonalizationSchedule& schedule, Rng& stream,
    PersonalizationLog* log) {
  schedule.validate();
  const std::uint64_t frozen_digest = nn::params_digest(mix.w_g);
  const data::LabeledDataset& train = bundle.train;
  const data::LabeledDataset& validation = bundle.validation;

  auto validation_loss = [&] {
    auto [mixed, h] = mixture_forward(mix, validation.features);
    return nn::cross_entropy(mixed, validation.labels);
  };
  auto train_stats = [&](double* gate_mean) {
    auto [mixed, h] = mixture_forward(mix, train.features);
    if (gate_mean != nullptr) *gate_mean = h.mean();
    return nn::cross_entropy(mixed, train.labels);
  };

  nn::ParamSet best_s = mix.w_s;
  nn::ParamSet best_h = mix.w_h;
  double best_val = validation_loss();
  if (log != nullptr) {
    EpochEntry e;
    e.epoch = 0;
    e.stage = "mixture";
    double gate0 = 0.0;
    e.train_loss = train_stats(&gate0);
    e.val_loss = best_val;
    e.has_gate = true;
    e.mean_gate = gate0;
    log->push_back(std::move(e));
  }

  nn::AdamState adam_s = nn::make_adam(mix.w_s, schedule.eta_mixture,
                                       schedule.beta1, schedule.beta2);
  nn::AdamState adam_h = nn::make_adam(mix.w_h, schedule.eta_mixture,
                                       schedule.beta1, schedule.beta2);
  std::vector<int> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    stream.shuffle(order);
    double loss_sum = 0.0;
    double gate_sum = 0.0;
    long rows = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(schedule.batch_size)) {
      std::size_t end = std::min(
          order.size(), begin + static_cast<std::size_t>(schedule.batch_size));
      nn::Matrix x = gather_rows(train.features, order, begin, end);
      std::vector<int> y = gather_labels(train.labels, order, begin, end);
      nn::ParamSet gs, gh;
      double gate = 0.0;
      double loss = mixture_loss_and_grads(mix, x, y, &gs, &gh, &gate);
      nn::adam_step(mix.w_s, gs, adam_s);
      nn::adam_step(mix.w_h, gh, adam_h);
      double weight = static_cast<double>(end - begin);
      loss_sum += loss * weight;
      gate_sum += gate * weight;
      rows += static_cast<long>(end - begin);
    }
    double val = validation_loss();
    if (log != nullptr) {
      EpochEntry e;
      e.epoch = epoch;
      e.stage = "mixture";
      e.train_loss = loss_sum / static_cast<double>(rows);
      e.val_loss = val;
      e.has_gate = true;
      e.mean_gate = gate_sum / static_cast<double>(rows);
      log->push_back(std::move(e));
    }
    if (val < best_val) {
      best_val = val;
      best_s = mix.w_s;
      best_h = mix.w_h;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= schedule.patience) {
      break;
    }
  }

  mix.w_s = best_s;
  mix.w_h = best_h;
  if (nn::params_digest(mix.w_g) != frozen_digest) {
    throw InternalError("frozen global parameters changed during mixture training");
  }
  return {mix.w_s, mix.w_h};
}

void write_personalization_log(const PersonalizationLog& log,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "epoch,stage,train_loss,val_loss,mean_gate_value\n";
  for (const auto& e : log) {
    out << e.epoch << "," << e.stage << "," << fmt_double(e.train_loss) << ","
        << fmt_double(e.val_loss) << ",";
    if (e.has_gate) out << fmt_double(e.mean_gate);
    out << "\n";
  }
}

}  // namespace fedmoe::perso
