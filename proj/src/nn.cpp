#include "fedmoe/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace fedmoe::nn {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix softmax_rows(const Matrix& z) {
  Matrix shifted = z.colwise() - z.rowwise().maxCoeff();
  Matrix e = shifted.array().exp().matrix();
  return (e.array().colwise() / e.rowwise().sum().array()).matrix();
}

double sigmoid_stable(double z) {
  double h;
  if (z >= 0.0) {
    h = 1.0 / (1.0 + std::exp(-z));
  } else {
    double e = std::exp(z);
    h = e / (1.0 + e);
  }
  // Keep the value strictly inside (0, 1) for extreme logits.
  if (h <= 0.0) h = 1e-15;
  if (h >= 1.0) h = 1.0 - 1e-15;
  return h;
}

Matrix sigmoid(const Matrix& z) {
  return z.unaryExpr([](double v) { return sigmoid_stable(v); });
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_widths.size() < 3) {
    throw ConfigError("MlpSpec needs at least one hidden layer");
  }
  for (std::size_t i = 0; i < layer_widths.size(); ++i) {
    if (layer_widths[i] < 1) {
      throw ConfigError("MlpSpec layer " + std::to_string(i) +
                        " has non-positive width");
    }
  }
  if (output == OutputActivation::SigmoidScalar && output_dim() != 1) {
    throw ConfigError("sigmoid-scalar output requires output dim 1, got " +
                      std::to_string(output_dim()));
  }
}

std::int64_t ParamSet::total_len() const {
  std::int64_t n = 0;
  for (const auto& e : entries) n += e.count();
  return n;
}

bool same_template(const ParamSet& a, const ParamSet& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& ea = a.entries[i];
    const auto& eb = b.entries[i];
    if (ea.name != eb.name || ea.dims != eb.dims ||
        ea.value.rows() != eb.value.rows() ||
        ea.value.cols() != eb.value.cols()) {
      return false;
    }
  }
  return true;
}

ParamSet zeros_like(const ParamSet& p) {
  ParamSet out;
  out.entries.reserve(p.entries.size());
  for (const auto& e : p.entries) {
    out.entries.push_back(
        {e.name, e.dims, Matrix::Zero(e.value.rows(), e.value.cols())});
  }
  return out;
}

ParamSet init_mlp_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet p;
  for (int l = 0; l < spec.depth(); ++l) {
    int fan_in = spec.layer_widths[static_cast<std::size_t>(l)];
    int fan_out = spec.layer_widths[static_cast<std::size_t>(l) + 1];
    double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    Matrix w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) w(r, c) = scale * rng.normal();
    }
    std::string base = "l" + std::to_string(l);
    p.entries.push_back({base + ".w", {fan_out, fan_in}, std::move(w)});
    p.entries.push_back({base + ".b", {fan_out}, Matrix::Zero(fan_out, 1)});
  }
  return p;
}

void check_params_match(const MlpSpec& spec, const ParamSet& params) {
  if (params.entries.size() != static_cast<std::size_t>(2 * spec.depth())) {
    throw ConfigError("ParamSet has " + std::to_string(params.entries.size()) +
                      " entries, spec expects " +
                      std::to_string(2 * spec.depth()));
  }
  for (int l = 0; l < spec.depth(); ++l) {
    int fan_in = spec.layer_widths[static_cast<std::size_t>(l)];
    int fan_out = spec.layer_widths[static_cast<std::size_t>(l) + 1];
    const auto& w = params.entries[static_cast<std::size_t>(2 * l)];
    const auto& b = params.entries[static_cast<std::size_t>(2 * l) + 1];
    if (w.value.rows() != fan_out || w.value.cols() != fan_in) {
      throw ConfigError("layer " + std::to_string(l) + " weight shape " +
                        shape_str(w.value) + ", expected " +
                        std::to_string(fan_out) + "x" +
                        std::to_string(fan_in));
    }
    if (b.value.rows() != fan_out || b.value.cols() != 1) {
      throw ConfigError("layer " + std::to_string(l) + " bias shape " +
                        shape_str(b.value) + ", expected " +
                        std::to_string(fan_out) + "x1");
    }
  }
}

Vector flatten(const ParamSet& p) {
  Vector v(p.total_len());
  std::int64_t k = 0;
  for (const auto& e : p.entries) {
    for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
        v(k++) = e.value(r, c);
      }
    }
  }
  return v;
}

ParamSet unflatten(const Vector& v, const ParamSet& templ) {
  if (v.size() != templ.total_len()) {
    throw InternalError("unflatten: vector length " +
                        std::to_string(v.size()) + " != template length " +
                        std::to_string(templ.total_len()));
  }
  ParamSet out = templ;
  std::int64_t k = 0;
  for (auto& e : out.entries) {
    for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
        e.value(r, c) = v(k++);
      }
    }
  }
  return out;
}

ForwardCache forward_cached(const MlpSpec& spec, const ParamSet& params,
                            const Matrix& batch) {
  check_params_match(spec, params);
  if (batch.cols() != spec.input_dim()) {
    throw ConfigError("batch has " + std::to_string(batch.cols()) +
                      " features, spec input dim is " +
                      std::to_string(spec.input_dim()));
  }
  ForwardCache cache;
  cache.pre.reserve(static_cast<std::size_t>(spec.depth()));
  cache.post.reserve(static_cast<std::size_t>(spec.depth()) + 1);
  cache.post.push_back(batch);
  for (int l = 0; l < spec.depth(); ++l) {
    const Matrix& w = params.entries[static_cast<std::size_t>(2 * l)].value;
    const Matrix& b = params.entries[static_cast<std::size_t>(2 * l) + 1].value;
    Matrix z = cache.post.back() * w.transpose();
    z.rowwise() += b.col(0).transpose();
    if (l + 1 < spec.depth()) {
      cache.post.push_back(relu(z));
    } else if (spec.output == OutputActivation::Softmax) {
      cache.post.push_back(softmax_rows(z));
    } else {
      cache.post.push_back(sigmoid(z));
    }
    cache.pre.push_back(std::move(z));
  }
  return cache;
}

Matrix forward(const MlpSpec& spec, const ParamSet& params,
               const Matrix& batch) {
  return forward_cached(spec, params, batch).output();
}

double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(probs.rows()) + " rows");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) {
      throw DataError("label " + std::to_string(y) + " out of range [0, " +
                      std::to_string(probs.cols()) + ") at row " +
                      std::to_string(i));
    }
    sum -= std::log(std::max(probs(i, y), 1e-12));
  }
  return sum / static_cast<double>(probs.rows());
}

namespace {

// Shared backprop loop: takes the gradient w.r.t. the last pre-activation
// and walks the affine layers down to the input.
ParamSet backprop_affine(const MlpSpec& spec, const ParamSet& params,
                         const ForwardCache& cache, Matrix d_pre,
                         Matrix* d_input) {
  ParamSet grads = zeros_like(params);
  for (int l = spec.depth() - 1; l >= 0; --l) {
    const Matrix& w = params.entries[static_cast<std::size_t>(2 * l)].value;
    const Matrix& a_prev = cache.post[static_cast<std::size_t>(l)];
    grads.entries[static_cast<std::size_t>(2 * l)].value =
        d_pre.transpose() * a_prev;
    grads.entries[static_cast<std::size_t>(2 * l) + 1].value =
        d_pre.colwise().sum().transpose();
    if (l > 0) {
      Matrix d_act = d_pre * w;
      const Matrix& z_prev = cache.pre[static_cast<std::size_t>(l) - 1];
      d_pre = ((z_prev.array() > 0.0).cast<double>() * d_act.array()).matrix();
    } else if (d_input != nullptr) {
      *d_input = d_pre * w;
    }
  }
  return grads;
}

}  // namespace

std::pair<double, ParamSet> backward(const MlpSpec& spec,
                                     const ParamSet& params,
                                     const Matrix& batch,
                                     const std::vector<int>& labels) {
  if (spec.output != OutputActivation::Softmax) {
    throw ConfigError("backward with class labels requires a softmax output");
  }
  ForwardCache cache = forward_cached(spec, params, batch);
  const Matrix& probs = cache.output();
  double loss = cross_entropy(probs, labels);
  // Softmax + cross-entropy fuse to (P - Y) / n at the last pre-activation.
  // Rows whose true-class probability sits below the clamp are on the flat
  // part of the clamped loss and contribute no gradient.
  Matrix d_pre = probs;
  double inv_n = 1.0 / static_cast<double>(batch.rows());
  for (Eigen::Index i = 0; i < d_pre.rows(); ++i) {
    if (probs(i, labels[static_cast<std::size_t>(i)]) < 1e-12) {
      d_pre.row(i).setZero();
      continue;
    }
    d_pre(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  d_pre *= inv_n;
  return {loss, backprop_affine(spec, params, cache, std::move(d_pre), nullptr)};
}

ParamSet backward_from_output(const MlpSpec& spec, const ParamSet& params,
                              const ForwardCache& cache,
                              const Matrix& d_output, Matrix* d_input) {
  const Matrix& out = cache.output();
  if (d_output.rows() != out.rows() || d_output.cols() != out.cols()) {
    throw ConfigError("d_output shape " + shape_str(d_output) +
                      " does not match network output " + shape_str(out));
  }
  Matrix d_pre;
  if (spec.output == OutputActivation::Softmax) {
    // Row-wise softmax Jacobian: dz_c = p_c (dy_c - sum_j dy_j p_j).
    Vector dot = (d_output.array() * out.array()).rowwise().sum().matrix();
    d_pre =
        (out.array() * (d_output.array().colwise() - dot.array())).matrix();
  } else {
    d_pre =
        (d_output.array() * out.array() * (1.0 - out.array())).matrix();
  }
  return backprop_affine(spec, params, cache, std::move(d_pre), d_input);
}

AdamState make_adam(const ParamSet& templ, double eta, double beta1,
                    double beta2, double epsilon) {
  AdamState s;
  s.m = zeros_like(templ);
  s.v = zeros_like(templ);
  s.t = 0;
  s.eta = eta;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
  if (!same_template(params, grads) || !same_template(params, state.m)) {
    throw InternalError("adam_step: parameter/gradient templates differ");
  }
  for (const auto& g : grads.entries) {
    if (!g.value.allFinite()) {
      throw NumericError("non-finite gradient in entry '" + g.name + "'");
    }
  }
  state.t += 1;
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& w = params.entries[i].value;
    const auto& g = grads.entries[i].value;
    auto& m = state.m.entries[i].value;
    auto& v = state.v.entries[i].value;
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square())
            .matrix();
    w.array() -=
        state.eta * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("truncated ParamSet stream at byte " +
                             std::to_string(in.gcount()));
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("truncated ParamSet stream");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) {
  std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_params(const ParamSet& p, std::ostream& out) {
  put_u32(out, static_cast<std::uint32_t>(p.entries.size()));
  for (const auto& e : p.entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u64(out, static_cast<std::uint64_t>(d));
  }
  for (const auto& e : p.entries) {
    for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
        put_f64(out, e.value(r, c));
      }
    }
  }
}

ParamSet load_params(std::istream& in) {
  ParamSet p;
  std::uint32_t count = get_u32(in);
  p.entries.resize(count);
  for (auto& e : p.entries) {
    std::uint32_t name_len = get_u32(in);
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    if (!in) throw FormatError("truncated ParamSet stream in entry name");
    std::uint32_t ndims = get_u32(in);
    if (ndims < 1 || ndims > 2) {
      throw FormatError("entry '" + e.name + "' has unsupported rank " +
                        std::to_string(ndims));
    }
    e.dims.resize(ndims);
    for (auto& d : e.dims) d = static_cast<std::int64_t>(get_u64(in));
    std::int64_t rows = e.dims[0];
    std::int64_t cols = ndims == 2 ? e.dims[1] : 1;
    if (rows < 0 || cols < 0) {
      throw FormatError("entry '" + e.name + "' has negative dims");
    }
    e.value.resize(rows, cols);
  }
  for (auto& e : p.entries) {
    for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.value.cols(); ++c) {
        e.value(r, c) = get_f64(in);
      }
    }
  }
  return p;
}

void save_params_file(const ParamSet& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  save_params(p, out);
}

ParamSet load_params_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_params(in);
}

std::vector<std::uint8_t> serialize_params(const ParamSet& p) {
  std::ostringstream os(std::ios::binary);
  save_params(p, os);
  std::string s = os.str();
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::uint64_t params_digest(const ParamSet& p) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint8_t byte : serialize_params(p)) {
    h = (h ^ byte) * 1099511628211ULL;
  }
  return h;
}

}  // namespace fedmoe::nn
