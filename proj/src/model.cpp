#include "fedacross/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace fedacross {

namespace {

constexpr std::uint32_t kModelMagic = 0x504D4146;  // "FAMP"
constexpr std::uint32_t kModelVersion = 1;

[[noreturn]] void shape_error(const std::string& what) { throw Error(ErrorCode::Shape, what); }

void add_bias_rows(Matrix& m, std::span<const double> bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
  }
}

Vector column_sums(const Matrix& m) {
  Vector s(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) s[j] += row[j];
  }
  return s;
}

/// a^T * b for equally tall a and b.
Matrix transposed_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto ar = a.row(r);
    auto br = b.row(r);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double ai = ar[i];
      if (ai == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) out_row[j] += ai * br[j];
    }
  }
  return out;
}

void check_psi(const AdaptationParams& psi, std::size_t m) {
  if (psi.weights.rows() != m || psi.weights.cols() != m || psi.gamma.size() != m ||
      psi.beta.size() != m || psi.mu.size() != m || psi.sigma.size() != m) {
    shape_error("adaptation parameters inconsistent with embedding dim " + std::to_string(m));
  }
}

struct Forward {
  std::vector<Matrix> inputs;   // input of each extractor layer
  std::vector<Matrix> pre;      // pre-activation of each extractor layer
  Matrix embedding;             // extractor output
  Matrix xhat;                  // normalised adaptation pre-activation
  Matrix adapted;               // adaptation output
  Matrix logits;
  BatchStats stats;
};

Forward forward_batch(const ModelParams& params, const Matrix& batch, Mode mode) {
  Forward f;
  Matrix h = batch;
  const auto& layers = params.phi.layers;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (h.cols() != layers[l].weights.cols()) {
      shape_error("extractor layer " + std::to_string(l) + ": expected input dim " +
                  std::to_string(layers[l].weights.cols()) + ", got " + std::to_string(h.cols()));
    }
    Matrix z = matmul_transposed(h, layers[l].weights);
    add_bias_rows(z, layers[l].bias);
    f.inputs.push_back(std::move(h));
    h = z;
    if (l + 1 < layers.size()) {
      for (double& v : h.data()) v = std::max(v, 0.0);
    }
    f.pre.push_back(std::move(z));
  }
  f.embedding = std::move(h);

  const auto& psi = params.psi;
  const std::size_t m = psi.dim();
  check_psi(psi, f.embedding.cols());
  const std::size_t n = f.embedding.rows();
  Matrix a = matmul_transposed(f.embedding, psi.weights);
  for (double& v : a.data()) v += psi.bias;

  Vector mean(m), stddev(m);
  if (mode == Mode::Train) {
    if (n < 2) throw Error(ErrorCode::Statistics, "train-mode batch needs at least 2 samples");
    mean = column_sums(a);
    for (double& v : mean) v /= static_cast<double>(n);
    Vector var(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double d = a(i, j) - mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < m; ++j) {
      stddev[j] = std::sqrt(var[j] / static_cast<double>(n) + psi.bn_epsilon);
    }
  } else {
    mean = psi.mu;
    stddev = psi.sigma;
  }

  f.xhat = Matrix(n, m);
  f.adapted = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double xh = (a(i, j) - mean[j]) / stddev[j];
      f.xhat(i, j) = xh;
      f.adapted(i, j) = xh * psi.gamma[j] + psi.beta[j];
    }
  }
  f.stats = {std::move(mean), std::move(stddev)};

  if (params.nu.weights.cols() != m) shape_error("classifier input dim mismatch");
  f.logits = matmul_transposed(f.adapted, params.nu.weights);
  add_bias_rows(f.logits, params.nu.bias);
  return f;
}

void check_labels(const Matrix& batch, std::span<const ClassId> labels) {
  if (batch.rows() == 0) shape_error("empty batch");
  if (labels.size() != batch.rows()) {
    shape_error("batch has " + std::to_string(batch.rows()) + " rows but " +
                std::to_string(labels.size()) + " labels");
  }
}

double xavier_std(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

ModelParams init_model(const ModelShape& shape, const InitConfig& init, Rng& rng) {
  if (shape.input_dim == 0 || shape.embedding_dim == 0 || shape.class_count == 0)
    throw Error(ErrorCode::Config, "model dimensions must be positive");
  ModelParams p;
  std::vector<std::size_t> dims{shape.input_dim};
  dims.insert(dims.end(), shape.hidden.begin(), shape.hidden.end());
  dims.push_back(shape.embedding_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l + 1] == 0) throw Error(ErrorCode::Config, "layer widths must be positive");
    DenseLayer layer{Matrix(dims[l + 1], dims[l]), Vector(dims[l + 1], 0.0)};
    const double sd = xavier_std(dims[l], dims[l + 1]);
    for (double& w : layer.weights.data()) w = rng.normal(0.0, sd);
    p.phi.layers.push_back(std::move(layer));
  }

  const std::size_t m = shape.embedding_dim;
  auto& psi = p.psi;
  psi.weights = Matrix(m, m);
  for (double& w : psi.weights.data()) w = rng.normal(0.0, init.linear_std);
  psi.bias = 0.0;
  psi.gamma.assign(m, 1.0);
  if (init.xavier_gamma) {
    const double sd = xavier_std(m, m);
    for (double& g : psi.gamma) g = rng.normal(0.0, sd);
  }
  psi.beta.assign(m, 0.0);
  psi.mu.assign(m, 0.0);
  psi.sigma.assign(m, 1.0);
  psi.bn_momentum = init.bn_momentum;
  psi.bn_epsilon = init.bn_epsilon;

  p.nu.weights = Matrix(shape.class_count, m);
  for (double& w : p.nu.weights.data()) w = rng.normal(0.0, init.linear_std);
  p.nu.bias.assign(shape.class_count, 0.0);
  return p;
}

void validate(const ModelParams& params) {
  const auto& layers = params.phi.layers;
  if (layers.empty()) shape_error("extractor has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weights.rows())
      shape_error("extractor layer " + std::to_string(l) + " bias size mismatch");
    if (l > 0 && layers[l].weights.cols() != layers[l - 1].weights.rows())
      shape_error("extractor layers " + std::to_string(l - 1) + "/" + std::to_string(l) +
                  " do not chain");
    if (!all_finite(layers[l].weights.data()) || !all_finite(layers[l].bias))
      shape_error("extractor layer " + std::to_string(l) + " has non-finite values");
  }
  const std::size_t m = params.phi.output_dim();
  check_psi(params.psi, m);
  const auto& psi = params.psi;
  if (!(psi.bn_epsilon > 0.0)) shape_error("bn_epsilon must be positive");
  if (!(psi.bn_momentum > 0.0 && psi.bn_momentum <= 1.0)) shape_error("bn_momentum must lie in (0, 1]");
  for (double s : psi.sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) shape_error("sigma entries must be positive and finite");
  }
  if (!all_finite(psi.weights.data()) || !std::isfinite(psi.bias) || !all_finite(psi.gamma) ||
      !all_finite(psi.beta) || !all_finite(psi.mu))
    shape_error("adaptation parameters have non-finite values");
  if (params.nu.weights.cols() != m || params.nu.bias.size() != params.nu.weights.rows() ||
      params.nu.weights.rows() == 0)
    shape_error("classifier shape mismatch");
  if (!all_finite(params.nu.weights.data()) || !all_finite(params.nu.bias))
    shape_error("classifier has non-finite values");
}

Vector extractor_forward(const ExtractorParams& phi, std::span<const double> x) {
  Vector h(x.begin(), x.end());
  for (std::size_t l = 0; l < phi.layers.size(); ++l) {
    const auto& layer = phi.layers[l];
    if (h.size() != layer.weights.cols()) {
      shape_error("extractor layer " + std::to_string(l) + ": expected input dim " +
                  std::to_string(layer.weights.cols()) + ", got " + std::to_string(h.size()));
    }
    Vector z = matvec(layer.weights, h);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
    if (l + 1 < phi.layers.size()) {
      for (double& v : z) v = std::max(v, 0.0);
    }
    h = std::move(z);
  }
  return h;
}

Matrix extractor_forward(const ExtractorParams& phi, const Matrix& batch) {
  Matrix h = batch;
  for (std::size_t l = 0; l < phi.layers.size(); ++l) {
    const auto& layer = phi.layers[l];
    if (h.cols() != layer.weights.cols()) {
      shape_error("extractor layer " + std::to_string(l) + ": expected input dim " +
                  std::to_string(layer.weights.cols()) + ", got " + std::to_string(h.cols()));
    }
    Matrix z = matmul_transposed(h, layer.weights);
    add_bias_rows(z, layer.bias);
    if (l + 1 < phi.layers.size()) {
      for (double& v : z.data()) v = std::max(v, 0.0);
    }
    h = std::move(z);
  }
  return h;
}

Vector adaptation_forward(const AdaptationParams& psi, std::span<const double> x) {
  check_psi(psi, x.size());
  Vector z = matvec(psi.weights, x);
  for (std::size_t j = 0; j < z.size(); ++j) {
    z[j] = ((z[j] + psi.bias) - psi.mu[j]) / psi.sigma[j] * psi.gamma[j] + psi.beta[j];
  }
  return z;
}

Matrix adaptation_forward(AdaptationParams& psi, const Matrix& batch, Mode mode) {
  check_psi(psi, batch.cols());
  const std::size_t n = batch.rows();
  const std::size_t m = psi.dim();
  Matrix a = matmul_transposed(batch, psi.weights);
  for (double& v : a.data()) v += psi.bias;
  if (mode == Mode::Eval) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        a(i, j) = (a(i, j) - psi.mu[j]) / psi.sigma[j] * psi.gamma[j] + psi.beta[j];
    return a;
  }
  if (n < 2) throw Error(ErrorCode::Statistics, "train-mode batch needs at least 2 samples");
  BatchStats stats{column_sums(a), Vector(m, 0.0)};
  for (double& v : stats.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = a(i, j) - stats.mean[j];
      stats.stddev[j] += d * d;
    }
  }
  for (double& s : stats.stddev) s = std::sqrt(s / static_cast<double>(n) + psi.bn_epsilon);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      a(i, j) = (a(i, j) - stats.mean[j]) / stats.stddev[j] * psi.gamma[j] + psi.beta[j];
  update_running_stats(psi, stats);
  return a;
}

void update_running_stats(AdaptationParams& psi, const BatchStats& stats) {
  const double k = psi.bn_momentum;
  for (std::size_t j = 0; j < psi.dim(); ++j) {
    psi.mu[j] = (1.0 - k) * psi.mu[j] + k * stats.mean[j];
    psi.sigma[j] = (1.0 - k) * psi.sigma[j] + k * stats.stddev[j];
  }
}

Vector classifier_forward(const ClassifierParams& nu, std::span<const double> z) {
  Vector logits = matvec(nu.weights, z);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += nu.bias[i];
  return logits;
}

Vector embed(const ModelParams& params, std::span<const double> x) {
  return adaptation_forward(params.psi, extractor_forward(params.phi, x));
}

Matrix embed(const ModelParams& params, const Matrix& batch) {
  AdaptationParams psi = params.psi;
  return adaptation_forward(psi, extractor_forward(params.phi, batch), Mode::Eval);
}

Gradients model_backward(const ModelParams& params, const Matrix& batch,
                         std::span<const ClassId> labels, double epsilon) {
  if (params.frozen_phi && params.frozen_nu && params.frozen_psi)
    throw Error(ErrorCode::NoTrainable, "all parameter groups are frozen");
  check_labels(batch, labels);
  Forward f = forward_batch(params, batch, Mode::Train);
  const std::size_t n = batch.rows();
  const std::size_t m = params.psi.dim();
  const double inv_n = 1.0 / static_cast<double>(n);

  Gradients g;
  Matrix dlogits(n, params.class_count());
  for (std::size_t i = 0; i < n; ++i) {
    g.loss += label_smoothed_ce(f.logits.row(i), labels[i], epsilon);
    const Vector d = label_smoothed_ce_grad(f.logits.row(i), labels[i], epsilon);
    for (std::size_t c = 0; c < d.size(); ++c) dlogits(i, c) = d[c] * inv_n;
  }
  g.loss *= inv_n;
  g.stats = f.stats;

  if (!params.frozen_nu) {
    g.nu = ClassifierParams{transposed_matmul(dlogits, f.adapted), column_sums(dlogits)};
  }
  if (params.frozen_psi && params.frozen_phi) return g;

  const auto& psi = params.psi;
  const Matrix dadapted = matmul(dlogits, params.nu.weights);  // n x m

  // Batch-norm backward through the batch mean and variance.
  Vector dgamma(m, 0.0), dbeta(m, 0.0), mean_dxhat(m, 0.0), mean_dxhat_xhat(m, 0.0);
  Matrix dxhat(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double dz = dadapted(i, j);
      dgamma[j] += dz * f.xhat(i, j);
      dbeta[j] += dz;
      const double dx = dz * psi.gamma[j];
      dxhat(i, j) = dx;
      mean_dxhat[j] += dx * inv_n;
      mean_dxhat_xhat[j] += dx * f.xhat(i, j) * inv_n;
    }
  }
  Matrix dpre(n, m);
  double dbias = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = (dxhat(i, j) - mean_dxhat[j] - f.xhat(i, j) * mean_dxhat_xhat[j]) /
                       f.stats.stddev[j];
      dpre(i, j) = d;
      dbias += d;
    }
  }
  if (!params.frozen_psi) {
    g.psi = AdaptationGrads{transposed_matmul(dpre, f.embedding), dbias, std::move(dgamma),
                            std::move(dbeta)};
  }
  if (params.frozen_phi) return g;

  ExtractorParams dphi;
  dphi.layers.resize(params.phi.layers.size());
  Matrix dh = matmul(dpre, psi.weights);  // gradient w.r.t. extractor output
  for (std::size_t l = params.phi.layers.size(); l-- > 0;) {
    if (l + 1 < params.phi.layers.size()) {
      const auto& z = f.pre[l].data();
      auto& d = dh.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (z[i] <= 0.0) d[i] = 0.0;
      }
    }
    dphi.layers[l].weights = transposed_matmul(dh, f.inputs[l]);
    dphi.layers[l].bias = column_sums(dh);
    if (l > 0) dh = matmul(dh, params.phi.layers[l].weights);
  }
  g.phi = std::move(dphi);
  return g;
}

double mean_loss(const ModelParams& params, const Matrix& batch,
                 std::span<const ClassId> labels, double epsilon, Mode mode) {
  check_labels(batch, labels);
  const Forward f = forward_batch(params, batch, mode);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.rows(); ++i)
    loss += label_smoothed_ce(f.logits.row(i), labels[i], epsilon);
  return loss / static_cast<double>(batch.rows());
}

void freeze(ModelParams& params, std::span<const ParamGroup> groups) {
  bool phi = false, nu = false;
  for (ParamGroup group : groups) {
    switch (group) {
      case ParamGroup::Phi: phi = true; break;
      case ParamGroup::Nu: nu = true; break;
      case ParamGroup::Psi:
        throw Error(ErrorCode::Unsupported,
                    "the adaptation module is the client-trainable group and cannot be frozen");
    }
  }
  params.frozen_phi = phi;
  params.frozen_nu = nu;
}

Vector flatten(const ExtractorParams& phi) {
  Vector flat;
  for (const auto& layer : phi.layers) {
    flat.insert(flat.end(), layer.weights.data().begin(), layer.weights.data().end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void unflatten(ExtractorParams& phi, std::span<const double> flat) {
  std::size_t pos = 0;
  auto take = [&](std::span<double> dst) {
    if (pos + dst.size() > flat.size()) shape_error("unflatten extractor: too few values");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), dst.size(), dst.begin());
    pos += dst.size();
  };
  for (auto& layer : phi.layers) {
    take(layer.weights.data());
    take(layer.bias);
  }
  if (pos != flat.size()) shape_error("unflatten extractor: too many values");
}

Vector flatten_trainable(const AdaptationParams& psi) {
  Vector flat(psi.weights.data());
  flat.push_back(psi.bias);
  flat.insert(flat.end(), psi.gamma.begin(), psi.gamma.end());
  flat.insert(flat.end(), psi.beta.begin(), psi.beta.end());
  return flat;
}

Vector flatten(const AdaptationGrads& grads) {
  Vector flat(grads.weights.data());
  flat.push_back(grads.bias);
  flat.insert(flat.end(), grads.gamma.begin(), grads.gamma.end());
  flat.insert(flat.end(), grads.beta.begin(), grads.beta.end());
  return flat;
}

void unflatten_trainable(AdaptationParams& psi, std::span<const double> flat) {
  const std::size_t m = psi.dim();
  if (flat.size() != m * m + 1 + 2 * m) shape_error("unflatten adaptation: size mismatch");
  auto it = flat.begin();
  std::copy_n(it, m * m, psi.weights.data().begin());
  it += static_cast<std::ptrdiff_t>(m * m);
  psi.bias = *it++;
  std::copy_n(it, m, psi.gamma.begin());
  it += static_cast<std::ptrdiff_t>(m);
  std::copy_n(it, m, psi.beta.begin());
}

Vector flatten(const ClassifierParams& nu) {
  Vector flat(nu.weights.data());
  flat.insert(flat.end(), nu.bias.begin(), nu.bias.end());
  return flat;
}

void unflatten(ClassifierParams& nu, std::span<const double> flat) {
  const std::size_t nw = nu.weights.size();
  if (flat.size() != nw + nu.bias.size()) shape_error("unflatten classifier: size mismatch");
  std::copy_n(flat.begin(), nw, nu.weights.data().begin());
  std::copy(flat.begin() + static_cast<std::ptrdiff_t>(nw), flat.end(), nu.bias.begin());
}

void write(ByteWriter& w, const ExtractorParams& phi) {
  w.u32(static_cast<std::uint32_t>(phi.layers.size()));
  for (const auto& layer : phi.layers) {
    w.matrix(layer.weights);
    w.f64s(layer.bias);
  }
}

void write(ByteWriter& w, const AdaptationParams& psi) {
  w.matrix(psi.weights);
  w.f64(psi.bias);
  w.f64s(psi.gamma);
  w.f64s(psi.beta);
  w.f64s(psi.mu);
  w.f64s(psi.sigma);
  w.f64(psi.bn_momentum);
  w.f64(psi.bn_epsilon);
}

void write(ByteWriter& w, const ClassifierParams& nu) {
  w.matrix(nu.weights);
  w.f64s(nu.bias);
}

ExtractorParams read_extractor(ByteReader& r) {
  ExtractorParams phi;
  const std::uint32_t count = r.u32();
  for (std::uint32_t l = 0; l < count; ++l) {
    DenseLayer layer;
    layer.weights = r.matrix();
    layer.bias = r.f64s();
    phi.layers.push_back(std::move(layer));
  }
  return phi;
}

AdaptationParams read_adaptation(ByteReader& r) {
  AdaptationParams psi;
  psi.weights = r.matrix();
  psi.bias = r.f64();
  psi.gamma = r.f64s();
  psi.beta = r.f64s();
  psi.mu = r.f64s();
  psi.sigma = r.f64s();
  psi.bn_momentum = r.f64();
  psi.bn_epsilon = r.f64();
  return psi;
}

ClassifierParams read_classifier(ByteReader& r) {
  ClassifierParams nu;
  nu.weights = r.matrix();
  nu.bias = r.f64s();
  return nu;
}

Bytes serialize(const ExtractorParams& phi) {
  ByteWriter w;
  write(w, phi);
  return std::move(w).bytes();
}

Bytes serialize(const AdaptationParams& psi) {
  ByteWriter w;
  write(w, psi);
  return std::move(w).bytes();
}

Bytes serialize(const ClassifierParams& nu) {
  ByteWriter w;
  write(w, nu);
  return std::move(w).bytes();
}

void write(ByteWriter& w, const ModelParams& params) {
  w.u32(kModelMagic);
  w.u32(kModelVersion);
  write(w, params.phi);
  write(w, params.psi);
  write(w, params.nu);
  w.u8(static_cast<std::uint8_t>((params.frozen_phi ? 1 : 0) | (params.frozen_nu ? 2 : 0) |
                                 (params.frozen_psi ? 4 : 0)));
}

ModelParams read_model(ByteReader& r) {
  if (r.u32() != kModelMagic) throw Error(ErrorCode::Serialization, "not a model container");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    throw Error(ErrorCode::Serialization, "unsupported model format version " + std::to_string(version));
  ModelParams p;
  p.phi = read_extractor(r);
  p.psi = read_adaptation(r);
  p.nu = read_classifier(r);
  const std::uint8_t flags = r.u8();
  p.frozen_phi = flags & 1;
  p.frozen_nu = flags & 2;
  p.frozen_psi = flags & 4;
  return p;
}

Bytes serialize_model(const ModelParams& params) {
  ByteWriter w;
  write(w, params);
  return std::move(w).bytes();
}

ModelParams deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ModelParams p = read_model(r);
  r.expect_done("model container");
  validate(p);
  return p;
}

void save_model(const ModelParams& params, const std::string& path) {
  const Bytes bytes = serialize_model(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  const Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

std::string describe(const ModelParams& params, bool include_values) {
  std::ostringstream os;
  os << std::setprecision(17);
  auto dump = [&](const char* name, std::span<const double> values) {
    os << "  " << name << " [" << values.size() << "]";
    if (include_values) {
      for (double v : values) os << ' ' << v;
    }
    os << '\n';
  };
  os << "extractor: " << params.phi.layers.size() << " layer(s)"
     << (params.frozen_phi ? " (frozen)" : "") << '\n';
  for (std::size_t l = 0; l < params.phi.layers.size(); ++l) {
    const auto& layer = params.phi.layers[l];
    os << " layer " << l << ": " << layer.weights.rows() << "x" << layer.weights.cols() << '\n';
    dump("weights", layer.weights.data());
    dump("bias", layer.bias);
  }
  const auto& psi = params.psi;
  os << "adaptation: m=" << psi.dim() << " b=" << psi.bias << " bn_momentum=" << psi.bn_momentum
     << " bn_epsilon=" << psi.bn_epsilon << '\n';
  dump("W", psi.weights.data());
  dump("gamma", psi.gamma);
  dump("beta", psi.beta);
  dump("mu", psi.mu);
  dump("sigma", psi.sigma);
  os << "classifier: " << params.nu.weights.rows() << "x" << params.nu.weights.cols()
     << (params.frozen_nu ? " (frozen)" : "") << '\n';
  dump("weights", params.nu.weights.data());
  dump("bias", params.nu.bias);
  return os.str();
}

}  // namespace fedacross
