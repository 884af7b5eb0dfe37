#include "fedmoe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

namespace fedmoe::data {

LabeledDataset LabeledDataset::subset(const std::vector<int>& indices) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.features = Matrix(static_cast<Eigen::Index>(indices.size()),
                        features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int idx = indices[i];
    if (idx < 0 || idx >= size()) {
      throw InternalError("subset index " + std::to_string(idx) +
                          " out of range");
    }
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(idx);
    out.labels.push_back(labels[static_cast<std::size_t>(idx)]);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (size() == 0) throw DataError("dataset is empty");
  if (features.rows() != size()) {
    throw DataError("feature rows do not match label count");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw DataError("label " + std::to_string(y) + " out of range [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

void PartitionSpec::validate(int num_classes) const {
  if (num_clients < 1) throw ConfigError("partition needs num_clients >= 1");
  if (samples_per_client < 1) {
    throw ConfigError("partition needs samples_per_client >= 1");
  }
  if (scheme == PartitionScheme::MajorityFraction) {
    if (num_classes < 2) {
      throw ConfigError("majority-fraction partition needs >= 2 classes");
    }
    double iid_rate = 2.0 / static_cast<double>(num_classes);
    if (p < iid_rate - 1e-9 || p > 1.0 + 1e-9) {
      throw ConfigError("majority fraction p=" + std::to_string(p) +
                        " outside feasible range [" + std::to_string(iid_rate) +
                        ", 1.0]");
    }
    if (p * samples_per_client < 2.0 - 1e-9) {
      throw ConfigError("p * samples_per_client must be >= 2");
    }
    if (num_classes == 2 && p < 1.0 - 1e-9) {
      throw ConfigError("with 2 classes only p=1.0 is feasible");
    }
  } else {
    if (!(alpha > 0.0)) throw ConfigError("dirichlet alpha must be > 0");
  }
}

std::vector<int> class_counts(const LabeledDataset& ds,
                              const std::vector<int>& indices) {
  std::vector<int> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (int idx : indices) {
    counts[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(idx)])]++;
  }
  return counts;
}

LabeledDataset gen_synthetic(int num_classes, int dim, long n_total,
                             double class_separation, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("gen_synthetic needs >= 2 classes");
  if (dim < 2) throw ConfigError("gen_synthetic needs dim >= 2");
  if (n_total < num_classes) {
    throw ConfigError("gen_synthetic needs n_total >= num_classes");
  }
  Rng rng(seed);
  // Class means on a sphere of radius class_separation.
  Matrix means(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    for (int j = 0; j < dim; ++j) means(c, j) = rng.normal();
    double norm = means.row(c).norm();
    if (norm == 0.0) norm = 1.0;
    means.row(c) *= class_separation / norm;
  }
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.features = Matrix(n_total, dim);
  ds.labels.reserve(static_cast<std::size_t>(n_total));
  long row = 0;
  for (int c = 0; c < num_classes; ++c) {
    long count = n_total / num_classes + (c < n_total % num_classes ? 1 : 0);
    for (long i = 0; i < count; ++i, ++row) {
      for (int j = 0; j < dim; ++j) {
        ds.features(row, j) = means(c, j) + rng.normal();
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path,
                          long& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) {
    throw FormatError(path + ": truncated at byte " + std::to_string(offset));
  }
  offset += 4;
  return (static_cast<std::uint32_t>(b[0]) << 24) |
         (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) |
         static_cast<std::uint32_t>(b[3]);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open '" + images_path + "'");
  long off = 0;
  std::uint32_t magic = read_be_u32(img, images_path, off);
  if (magic != kIdxImagesMagic) {
    throw FormatError(images_path + ": bad magic " + hex32(magic) +
                      " at byte 0, expected " + hex32(kIdxImagesMagic));
  }
  std::uint32_t count = read_be_u32(img, images_path, off);
  std::uint32_t rows = read_be_u32(img, images_path, off);
  std::uint32_t cols = read_be_u32(img, images_path, off);
  long pixels = static_cast<long>(count) * rows * cols;
  std::vector<unsigned char> raw(static_cast<std::size_t>(pixels));
  img.read(reinterpret_cast<char*>(raw.data()), pixels);
  if (img.gcount() != pixels) {
    throw FormatError(images_path + ": truncated at byte " +
                      std::to_string(off + img.gcount()));
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot open '" + labels_path + "'");
  long loff = 0;
  std::uint32_t lmagic = read_be_u32(lab, labels_path, loff);
  if (lmagic != kIdxLabelsMagic) {
    throw FormatError(labels_path + ": bad magic " + hex32(lmagic) +
                      " at byte 0, expected " + hex32(kIdxLabelsMagic));
  }
  std::uint32_t lcount = read_be_u32(lab, labels_path, loff);
  if (lcount != count) {
    throw FormatError("image count " + std::to_string(count) +
                      " does not match label count " + std::to_string(lcount));
  }
  std::vector<unsigned char> raw_labels(lcount);
  lab.read(reinterpret_cast<char*>(raw_labels.data()), lcount);
  if (lab.gcount() != static_cast<long>(lcount)) {
    throw FormatError(labels_path + ": truncated at byte " +
                      std::to_string(loff + lab.gcount()));
  }

  LabeledDataset ds;
  long d = static_cast<long>(rows) * cols;
  ds.features = Matrix(count, d);
  ds.labels.reserve(count);
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    for (long j = 0; j < d; ++j) {
      ds.features(i, j) =
          static_cast<double>(raw[static_cast<std::size_t>(i) *
                                  static_cast<std::size_t>(d) +
                                  static_cast<std::size_t>(j)]) /
          255.0;
    }
    int y = raw_labels[i];
    max_label = std::max(max_label, y);
    ds.labels.push_back(y);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

void write_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  for (int j = 0; j < ds.dim(); ++j) {
    out << "f" << j << ",";
  }
  out << "label\n";
  for (long i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.dim(); ++j) {
      out << fmt_double(ds.features(i, j)) << ",";
    }
    out << ds.labels[static_cast<std::size_t>(i)] << "\n";
  }
}

namespace {

std::vector<std::vector<int>> class_pools(const LabeledDataset& ds,
                                          const IndexMask& excluded) {
  std::vector<std::vector<int>> pools(
      static_cast<std::size_t>(ds.num_classes));
  for (long i = 0; i < ds.size(); ++i) {
    if (!excluded.empty() && excluded[static_cast<std::size_t>(i)]) continue;
    pools[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]
        .push_back(static_cast<int>(i));
  }
  return pools;
}

// Draws distinct examples per class for one client: each class pool is
// copied and shuffled lazily on first use, then consumed from the back.
class PoolSampler {
 public:
  PoolSampler(const std::vector<std::vector<int>>& pools, Rng& rng)
      : pools_(pools), rng_(rng), shuffled_(pools.size()),
        primed_(pools.size(), false) {}

  // Excluded indices are skipped at draw time (used for "fresh examples
  // distinct from the client's own data").
  void exclude(const std::vector<int>& indices) {
    for (int i : indices) banned_.insert(i);
  }

  bool try_draw(int c, int& out) {
    auto& pool = shuffled_[static_cast<std::size_t>(c)];
    if (!primed_[static_cast<std::size_t>(c)]) {
      pool = pools_[static_cast<std::size_t>(c)];
      rng_.shuffle(pool);
      primed_[static_cast<std::size_t>(c)] = true;
    }
    while (!pool.empty()) {
      int idx = pool.back();
      pool.pop_back();
      if (banned_.count(idx) == 0) {
        out = idx;
        return true;
      }
    }
    return false;
  }

  int draw(int c, int client_id) {
    int out;
    if (!try_draw(c, out)) {
      throw DataError("class " + std::to_string(c) +
                      " pool exhausted while building client " +
                      std::to_string(client_id) +
                      "; use a larger base dataset");
    }
    return out;
  }

 private:
  const std::vector<std::vector<int>>& pools_;
  Rng& rng_;
  std::vector<std::vector<int>> shuffled_;
  std::vector<bool> primed_;
  std::unordered_set<int> banned_;
};

}  // namespace

std::vector<std::vector<int>> partition_majority(const LabeledDataset& ds,
                                                 const PartitionSpec& spec,
                                                 const IndexMask& excluded) {
  ds.validate();
  spec.validate(ds.num_classes);
  const int C = ds.num_classes;
  const int n_k = spec.samples_per_client;
  auto pools = class_pools(ds, excluded);

  std::vector<std::vector<int>> result(
      static_cast<std::size_t>(spec.num_clients));
  for (int i = 0; i < spec.num_clients; ++i) {
    Rng rng(derive_seed(spec.seed, {seed_tag("majority-client"),
                                    static_cast<std::uint64_t>(i)}));
    PoolSampler sampler(pools, rng);
    int c1 = (2 * i) % C;
    int c2 = (2 * i + 1) % C;
    long m = std::lround(spec.p * n_k);
    long m1 = m - m / 2;
    long m2 = m / 2;

    auto& list = result[static_cast<std::size_t>(i)];
    list.reserve(static_cast<std::size_t>(n_k));
    for (long j = 0; j < m1; ++j) list.push_back(sampler.draw(c1, i));
    for (long j = 0; j < m2; ++j) list.push_back(sampler.draw(c2, i));

    // Minority samples: uniform class choice over the remaining classes.
    std::vector<int> minority_classes;
    for (int c = 0; c < C; ++c) {
      if (c != c1 && c != c2) minority_classes.push_back(c);
    }
    for (long j = m; j < n_k; ++j) {
      int c = minority_classes[static_cast<std::size_t>(
          rng.below(minority_classes.size()))];
      list.push_back(sampler.draw(c, i));
    }
    rng.shuffle(list);
  }
  return result;
}

std::vector<std::vector<int>> partition_dirichlet(const LabeledDataset& ds,
                                                  const PartitionSpec& spec,
                                                  const IndexMask& excluded,
                                                  PartitionReport* report) {
  ds.validate();
  spec.validate(ds.num_classes);
  const int C = ds.num_classes;
  const int K = spec.num_clients;
  const int n_k = spec.samples_per_client;
  auto pools = class_pools(ds, excluded);

  Rng rng(derive_seed(spec.seed, {seed_tag("dirichlet")}));
  std::vector<std::vector<int>> alloc(static_cast<std::size_t>(K));
  // Per class: draw proportions over clients, slice the shuffled pool.
  for (int c = 0; c < C; ++c) {
    auto pool = pools[static_cast<std::size_t>(c)];
    rng.shuffle(pool);
    std::vector<double> q = rng.dirichlet(spec.alpha, K);
    std::vector<long> counts =
        largest_remainder(q, static_cast<long>(pool.size()));
    std::size_t cursor = 0;
    for (int j = 0; j < K; ++j) {
      for (long t = 0; t < counts[static_cast<std::size_t>(j)]; ++t) {
        alloc[static_cast<std::size_t>(j)].push_back(pool[cursor++]);
      }
    }
  }

  std::vector<std::vector<int>> result(static_cast<std::size_t>(K));
  for (int j = 0; j < K; ++j) {
    Rng crng(derive_seed(spec.seed, {seed_tag("dirichlet-client"),
                                     static_cast<std::uint64_t>(j)}));
    auto& mine = alloc[static_cast<std::size_t>(j)];
    crng.shuffle(mine);
    if (static_cast<long>(mine.size()) >= n_k) {
      mine.resize(static_cast<std::size_t>(n_k));
    } else {
      long deficit = n_k - static_cast<long>(mine.size());
      std::vector<int> counts = class_counts(ds, mine);
      std::vector<double> weights(counts.begin(), counts.end());
      if (mine.empty()) {
        // Degenerate draw gave this client nothing; keep the alpha -> 0
        // spirit and fill from a single random class.
        weights.assign(static_cast<std::size_t>(C), 0.0);
        weights[static_cast<std::size_t>(crng.below(
            static_cast<std::uint64_t>(C)))] = 1.0;
      }
      std::vector<long> targets = largest_remainder(weights, deficit);
      PoolSampler sampler(pools, crng);
      sampler.exclude(mine);
      long added = 0;
      for (int c = 0; c < C; ++c) {
        for (long t = 0; t < targets[static_cast<std::size_t>(c)]; ++t) {
          int idx;
          if (!sampler.try_draw(c, idx)) break;
          mine.push_back(idx);
          ++added;
        }
      }
      if (report != nullptr) {
        std::ostringstream note;
        note << "client " << j << " padded by " << added << " of " << deficit
             << " missing examples";
        report->notes.push_back(note.str());
      }
      crng.shuffle(mine);
    }
    result[static_cast<std::size_t>(j)] = std::move(mine);
  }
  return result;
}

std::vector<int> make_global_test_indices(const LabeledDataset& ds, int size,
                                          std::uint64_t seed,
                                          const IndexMask& excluded) {
  ds.validate();
  const int C = ds.num_classes;
  int per_class = size / C;
  if (per_class < 1) throw ConfigError("global test size below one per class");
  if (size % C != 0) {
    std::cerr << "global test size " << size << " not divisible by " << C
              << " classes; using " << per_class * C << "\n";
  }
  auto pools = class_pools(ds, excluded);
  Rng rng(derive_seed(seed, {seed_tag("global-test")}));
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(per_class) * C);
  for (int c = 0; c < C; ++c) {
    const auto& pool = pools[static_cast<std::size_t>(c)];
    if (static_cast<int>(pool.size()) < per_class) {
      throw DataError("class " + std::to_string(c) + " has only " +
                      std::to_string(pool.size()) +
                      " free examples, global test needs " +
                      std::to_string(per_class));
    }
    for (int idx : rng.sample(pool, static_cast<std::size_t>(per_class))) {
      out.push_back(idx);
    }
  }
  return out;
}

std::vector<ClientDataBundle> make_bundles(
    const LabeledDataset& ds, const std::vector<std::vector<int>>& partitions,
    double train_fraction, int local_test_size, std::uint64_t seed,
    const IndexMask& excluded, PartitionReport* report) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  auto pools = class_pools(ds, excluded);
  std::vector<ClientDataBundle> bundles;
  bundles.reserve(partitions.size());

  for (std::size_t i = 0; i < partitions.size(); ++i) {
    const auto& part = partitions[i];
    if (part.empty()) throw DataError("client " + std::to_string(i) +
                                      " has an empty partition");
    Rng rng(derive_seed(seed, {seed_tag("bundle"), i}));

    // Stratified train/validation split: validation takes its share of each
    // class so both splits mirror the client distribution.
    std::vector<int> counts = class_counts(ds, part);
    long n = static_cast<long>(part.size());
    long val_total = n - std::lround(train_fraction * static_cast<double>(n));
    std::vector<double> weights(counts.begin(), counts.end());
    std::vector<long> val_per_class = largest_remainder(weights, val_total);

    ClientDataBundle b;
    b.local_test_requested = local_test_size;
    std::vector<long> val_left = val_per_class;
    // Walk the (already shuffled) partition backwards so validation picks
    // are a random slice per class.
    std::vector<char> is_val(part.size(), 0);
    for (std::size_t k = part.size(); k > 0; --k) {
      int cls = ds.labels[static_cast<std::size_t>(part[k - 1])];
      if (val_left[static_cast<std::size_t>(cls)] > 0) {
        is_val[k - 1] = 1;
        val_left[static_cast<std::size_t>(cls)]--;
      }
    }
    for (std::size_t k = 0; k < part.size(); ++k) {
      (is_val[k] ? b.validation_indices : b.train_indices).push_back(part[k]);
    }

    // Local test mirrors the train-split label proportions with fresh
    // examples.
    std::vector<int> train_counts = class_counts(ds, b.train_indices);
    std::vector<double> tweights(train_counts.begin(), train_counts.end());
    std::vector<long> targets = largest_remainder(tweights, local_test_size);
    PoolSampler sampler(pools, rng);
    sampler.exclude(part);
    long missing = 0;
    for (int c = 0; c < ds.num_classes; ++c) {
      for (long t = 0; t < targets[static_cast<std::size_t>(c)]; ++t) {
        int idx;
        if (!sampler.try_draw(c, idx)) {
          ++missing;
          continue;
        }
        b.local_test_indices.push_back(idx);
      }
    }
    if (missing > 0 && report != nullptr) {
      std::ostringstream note;
      note << "client " << i << " local test short by " << missing
           << " examples (pool exhausted)";
      report->notes.push_back(note.str());
    }
    rng.shuffle(b.local_test_indices);

    b.train = ds.subset(b.train_indices);
    b.validation = ds.subset(b.validation_indices);
    b.local_test = ds.subset(b.local_test_indices);
    bundles.push_back(std::move(b));
  }
  return bundles;
}

}  // namespace fedmoe::data
