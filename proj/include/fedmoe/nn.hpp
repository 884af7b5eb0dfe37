#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fedmoe/common.hpp"

namespace fedmoe::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OutputActivation { Softmax, SigmoidScalar };

// Dense network description: layer_widths = {input dim, hidden..., output
// dim}. Hidden activation is ReLU throughout; the output layer is either a
// row-wise softmax or a single sigmoid unit.
struct MlpSpec {
  std::vector<int> layer_widths;
  OutputActivation output = OutputActivation::Softmax;

  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  // Number of affine layers.
  int depth() const { return static_cast<int>(layer_widths.size()) - 1; }

  void validate() const;
};

// One named tensor. Weights carry a {rows, cols} shape, biases {rows}; the
// payload is held as a rows x cols matrix either way (biases are column
// vectors). Values are flattened row-major.
struct ParamEntry {
  std::string name;
  std::vector<std::int64_t> dims;
  Matrix value;

  std::int64_t count() const { return value.rows() * value.cols(); }
};

// Ordered collection of named tensors. Entry order is fixed per experiment
// (layer order, weight before bias) and is the flatten/serialize order.
struct ParamSet {
  std::vector<ParamEntry> entries;

  std::int64_t total_len() const;
  bool empty() const { return entries.empty(); }
};

bool same_template(const ParamSet& a, const ParamSet& b);
ParamSet zeros_like(const ParamSet& p);

// Seeded init: He-scaled normal weights, zero biases. All clients of one
// experiment start from the same draw, which is what makes averaging in
// parameter space meaningful.
ParamSet init_mlp_params(const MlpSpec& spec, Rng& rng);

// The spec's parameters must match these shapes exactly.
void check_params_match(const MlpSpec& spec, const ParamSet& params);

Vector flatten(const ParamSet& p);
ParamSet unflatten(const Vector& v, const ParamSet& templ);

// Per-layer activations kept for backprop. post[0] is the input batch,
// post[l] the output of layer l (post-activation), pre[l-1] its
// pre-activation.
struct ForwardCache {
  std::vector<Matrix> pre;
  std::vector<Matrix> post;
  const Matrix& output() const { return post.back(); }
};

// Batch is n x input_dim, one example per row. Softmax outputs are n x C
// rows on the probability simplex; sigmoid-scalar outputs are n x 1 values
// in (0, 1).
Matrix forward(const MlpSpec& spec, const ParamSet& params,
               const Matrix& batch);
ForwardCache forward_cached(const MlpSpec& spec, const ParamSet& params,
                            const Matrix& batch);

// Mean negative log-likelihood. Probabilities are clamped at 1e-12 before
// the log so confidently wrong predictions stay finite.
double cross_entropy(const Matrix& probs, const std::vector<int>& labels);

// Fused softmax + cross-entropy backward pass. Returns (loss, grads);
// gradient shapes mirror `params`.
std::pair<double, ParamSet> backward(const MlpSpec& spec,
                                     const ParamSet& params,
                                     const Matrix& batch,
                                     const std::vector<int>& labels);

// Backprop from an arbitrary upstream gradient w.r.t. the post-activation
// network output (n x C for softmax, n x 1 for sigmoid). Used by the
// mixture training where the loss is taken on the combined prediction.
// If d_input is non-null it receives the gradient w.r.t. the input batch.
ParamSet backward_from_output(const MlpSpec& spec, const ParamSet& params,
                              const ForwardCache& cache,
                              const Matrix& d_output,
                              Matrix* d_input = nullptr);

struct AdamState {
  ParamSet m;
  ParamSet v;
  long t = 0;
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam(const ParamSet& templ, double eta, double beta1 = 0.9,
                    double beta2 = 0.999, double epsilon = 1e-8);

// Standard Adam update with bias correction:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  t <- t+1
//   w <- w - eta * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Throws NumericError on non-finite gradients.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state);

// Flat binary layout: u32 entry count, then per entry u32 name length,
// name bytes, u32 ndims, u64 dims; then all values as little-endian 64-bit
// floats in flatten order.
void save_params(const ParamSet& p, std::ostream& out);
ParamSet load_params(std::istream& in);
void save_params_file(const ParamSet& p, const std::string& path);
ParamSet load_params_file(const std::string& path);
std::vector<std::uint8_t> serialize_params(const ParamSet& p);

// FNV-1a over the serialized bytes; used for freeze/read-only checks.
std::uint64_t params_digest(const ParamSet& p);

}  // namespace fedmoe::nn
