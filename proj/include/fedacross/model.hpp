#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedacross/bytes.hpp"
#include "fedacross/numerics.hpp"

namespace fedacross {

using ClassId = std::uint32_t;

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out

  bool operator==(const DenseLayer&) const = default;
};

/// Fully connected rectifier stack; ReLU between layers, none after the last.
struct ExtractorParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().weights.cols(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().weights.rows(); }
  bool operator==(const ExtractorParams&) const = default;
};

/// Domain-adaptive linear layer: z = ((W x + b) - mu) / sigma * gamma + beta.
/// The bias b is a single scalar broadcast over all dimensions. sigma holds the
/// running standard deviation (epsilon already folded in).
struct AdaptationParams {
  Matrix weights;  // m x m
  double bias = 0.0;
  Vector gamma;
  Vector beta;
  Vector mu;
  Vector sigma;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  std::size_t dim() const { return gamma.size(); }
  bool operator==(const AdaptationParams&) const = default;
};

struct ClassifierParams {
  Matrix weights;  // L x m
  Vector bias;     // L

  std::size_t class_count() const { return weights.rows(); }
  bool operator==(const ClassifierParams&) const = default;
};

enum class ParamGroup { Phi, Psi, Nu };

struct ModelParams {
  ExtractorParams phi;
  AdaptationParams psi;
  ClassifierParams nu;
  bool frozen_phi = false;
  bool frozen_nu = false;
  /// Not reachable through freeze(); only for evaluation-only copies.
  bool frozen_psi = false;

  std::size_t input_dim() const { return phi.input_dim(); }
  std::size_t embedding_dim() const { return psi.dim(); }
  std::size_t class_count() const { return nu.class_count(); }
  bool operator==(const ModelParams&) const = default;
};

struct ModelShape {
  std::size_t input_dim = 256;
  std::vector<std::size_t> hidden = {64};
  std::size_t embedding_dim = 32;
  std::size_t class_count = 10;
};

struct InitConfig {
  double linear_std = 0.01;
  /// gamma drawn Xavier-normal when true, set to ones otherwise.
  bool xavier_gamma = true;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
};

ModelParams init_model(const ModelShape& shape, const InitConfig& init, Rng& rng);
/// Validates dimension chaining and finiteness; throws Error(Shape).
void validate(const ModelParams& params);

enum class Mode { Train, Eval };

Vector extractor_forward(const ExtractorParams& phi, std::span<const double> x);
/// Batched: one input per row.
Matrix extractor_forward(const ExtractorParams& phi, const Matrix& batch);

/// Eval-mode adaptation of a single embedding using the stored statistics.
Vector adaptation_forward(const AdaptationParams& psi, std::span<const double> x);

struct BatchStats {
  Vector mean;
  Vector stddev;  // sqrt(var + eps), biased variance
};

/// Batched adaptation. Train mode normalises with the batch statistics
/// (needs >= 2 rows) and folds them into psi's running statistics; eval mode
/// uses the stored mu and sigma.
Matrix adaptation_forward(AdaptationParams& psi, const Matrix& batch, Mode mode);

/// Exponential moving average of the running statistics.
void update_running_stats(AdaptationParams& psi, const BatchStats& stats);

Vector classifier_forward(const ClassifierParams& nu, std::span<const double> z);

/// tau(x) = A(f(x)) in eval mode.
Vector embed(const ModelParams& params, std::span<const double> x);
Matrix embed(const ModelParams& params, const Matrix& batch);

struct AdaptationGrads {
  Matrix weights;
  double bias = 0.0;
  Vector gamma;
  Vector beta;
};

struct Gradients {
  std::optional<ExtractorParams> phi;
  std::optional<AdaptationGrads> psi;
  std::optional<ClassifierParams> nu;
  double loss = 0.0;
  /// Batch statistics seen by the train-mode forward pass.
  BatchStats stats;
};

/// Analytic gradients of the mean label-smoothed cross entropy over the batch,
/// with the adaptation layer in train mode (gradients flow through the batch
/// mean and variance). Frozen groups are left empty.
Gradients model_backward(const ModelParams& params, const Matrix& batch,
                         std::span<const ClassId> labels, double epsilon);

/// Mean label-smoothed cross entropy with the adaptation layer in the given
/// mode. Train mode does not touch the running statistics.
double mean_loss(const ModelParams& params, const Matrix& batch,
                 std::span<const ClassId> labels, double epsilon, Mode mode);

/// Sets the frozen flags to exactly the given groups. Psi cannot be frozen.
void freeze(ModelParams& params, std::span<const ParamGroup> groups);

// Flat parameter views used by the optimizer; gradients share the layout.
Vector flatten(const ExtractorParams& phi);
void unflatten(ExtractorParams& phi, std::span<const double> flat);
Vector flatten_trainable(const AdaptationParams& psi);
Vector flatten(const AdaptationGrads& grads);
void unflatten_trainable(AdaptationParams& psi, std::span<const double> flat);
Vector flatten(const ClassifierParams& nu);
void unflatten(ClassifierParams& nu, std::span<const double> flat);

// Binary layout: dims then row-major payloads, little-endian.
void write(ByteWriter& w, const ExtractorParams& phi);
void write(ByteWriter& w, const AdaptationParams& psi);
void write(ByteWriter& w, const ClassifierParams& nu);
ExtractorParams read_extractor(ByteReader& r);
AdaptationParams read_adaptation(ByteReader& r);
ClassifierParams read_classifier(ByteReader& r);

Bytes serialize(const ExtractorParams& phi);
Bytes serialize(const AdaptationParams& psi);
Bytes serialize(const ClassifierParams& nu);

/// Versioned container: magic "FAMP", format version, then phi, psi, nu, flags.
Bytes serialize_model(const ModelParams& params);
ModelParams deserialize_model(std::span<const std::uint8_t> bytes);
void write(ByteWriter& w, const ModelParams& params);
ModelParams read_model(ByteReader& r);

void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

/// Human-readable dump for debugging.
std::string describe(const ModelParams& params, bool include_values = false);

}  // namespace fedacross
