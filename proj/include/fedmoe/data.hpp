#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmoe/common.hpp"
#include "fedmoe/nn.hpp"

namespace fedmoe::data {

using nn::Matrix;

struct LabeledDataset {
  Matrix features;  // n x d, one example per row
  std::vector<int> labels;
  int num_classes = 0;

  long size() const { return static_cast<long>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  LabeledDataset subset(const std::vector<int>& indices) const;
  void validate() const;
};

enum class PartitionScheme { MajorityFraction, Dirichlet };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::MajorityFraction;
  double p = 0.0;      // majority-fraction share held by the two majority classes
  double alpha = 0.0;  // Dirichlet concentration
  int num_clients = 0;
  int samples_per_client = 0;
  std::uint64_t seed = 0;

  void validate(int num_classes) const;
};

// One client's data. The three splits are disjoint index sets into the base
// dataset; the local test mirrors the client's train-split label proportions.
struct ClientDataBundle {
  LabeledDataset train;
  LabeledDataset validation;
  LabeledDataset local_test;
  std::vector<int> train_indices;
  std::vector<int> validation_indices;
  std::vector<int> local_test_indices;
  bool opt_in = true;
  int local_test_requested = 0;
};

// Notes emitted by partitioning/bundling (padding events, shrunken local
// test sets). Purely informational.
struct PartitionReport {
  std::vector<std::string> notes;
};

// Balanced Gaussian blobs: per-class counts equal up to +-1, class means
// drawn on a sphere of radius class_separation, unit isotropic noise.
LabeledDataset gen_synthetic(int num_classes, int dim, long n_total,
                             double class_separation, std::uint64_t seed);

// IDX-format reader (big-endian magic 0x00000803 for images, 0x00000801 for
// labels). Pixel bytes are scaled to [0, 1].
LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path);

// CSV export, header f0..f{d-1},label.
void write_csv(const LabeledDataset& ds, const std::string& path);

// `excluded[i] != 0` marks base indices the partitioner must not touch
// (e.g. the global test set). Pass {} for no exclusions.
using IndexMask = std::vector<char>;

// Client i's two majority classes are ((2i) mod C, (2i+1) mod C); they hold
// round(p * n_k) samples split evenly, the rest is drawn uniformly over the
// remaining classes. Within a client sampling is without replacement;
// clients draw independently of each other.
std::vector<std::vector<int>> partition_majority(const LabeledDataset& ds,
                                                 const PartitionSpec& spec,
                                                 const IndexMask& excluded = {});

// Per class, a Dirichlet(alpha) proportion vector over clients decides the
// split of that class's pool (largest-remainder rounding); client totals are
// then subsampled or padded to samples_per_client.
std::vector<std::vector<int>> partition_dirichlet(
    const LabeledDataset& ds, const PartitionSpec& spec,
    const IndexMask& excluded = {}, PartitionReport* report = nullptr);

// Class-balanced test set indices, disjoint from `excluded`. If size is not
// divisible by the class count the largest smaller multiple is used.
std::vector<int> make_global_test_indices(const LabeledDataset& ds, int size,
                                          std::uint64_t seed,
                                          const IndexMask& excluded = {});

// Splits each client's partition into stratified train/validation parts and
// draws a fresh local test set mirroring the train-split label proportions.
// Local tests avoid `excluded` and the client's own indices.
std::vector<ClientDataBundle> make_bundles(const LabeledDataset& ds,
                                           const std::vector<std::vector<int>>& partitions,
                                           double train_fraction,
                                           int local_test_size,
                                           std::uint64_t seed,
                                           const IndexMask& excluded = {},
                                           PartitionReport* report = nullptr);

std::vector<int> class_counts(const LabeledDataset& ds,
                              const std::vector<int>& indices);

}  // namespace fedmoe::data
