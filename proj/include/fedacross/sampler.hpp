#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedacross/data.hpp"
#include "fedacross/model.hpp"
#include "fedacross/numerics.hpp"

namespace fedacross {

struct SamplerConfig {
  /// Sigma starts as ridge * I so its inverse exists before any selection.
  double ridge = 1.0;
  /// Target fraction of stream observations sent for labelling.
  double budget = 0.2;
  double q_init = 0.2;
  double q_min = 1e-3;
  double q_max = 1.0;
  /// Lower bound on the empirical rate inside the controller.
  double rate_floor = 1e-3;
};

void validate(const SamplerConfig& config);

struct SamplerState {
  Matrix inv_cov;    // inverse of ridge * I + sum over selected tau tau^T
  Matrix sum_outer;  // sum over all observed tau tau^T
  std::uint64_t t = 0;
  std::uint64_t selected = 0;
  double q = 0.2;
  SamplerConfig config;
};

SamplerState make_sampler(std::size_t embedding_dim, const SamplerConfig& config);

/// q * tau^T inv_cov tau / tr(inv_cov * sum_outer / t), clamped to [0, 1].
/// Expects the current observation to be folded into t and sum_outer already.
double selection_probability(const SamplerState& state, std::span<const double> tau);

struct StreamDecision {
  bool keep = false;
  double probability = 0.0;
  /// Labelling frequency that produced `probability`.
  double q = 0.0;
  Vector embedding;
};

/// One stream step on a precomputed embedding: fold tau into the running
/// statistics, draw keep ~ Bernoulli(p), update inv_cov on keep, then adjust q.
StreamDecision observe_embedding(SamplerState& state, std::span<const double> tau, Rng& rng);
/// tau = embed(model, T(x)) with the deterministic transform.
StreamDecision observe(SamplerState& state, const Sample& x, const ModelParams& model, Rng& rng);

/// q <- clamp(q * budget / max(selected / t, floor), q_min, q_max).
void update_label_frequency(SamplerState& state);

class SampleStream {
 public:
  virtual ~SampleStream() = default;
  virtual std::optional<Sample> next() = 0;
};

/// Finite stream over a dataset in a seeded random order. Also serves file
/// streams via load_dataset.
class DatasetStream final : public SampleStream {
 public:
  DatasetStream(Dataset dataset, std::uint64_t seed);
  std::optional<Sample> next() override;

 private:
  Dataset dataset_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Unbounded stream of freshly rendered samples with uniformly random labels.
class GeneratorStream final : public SampleStream {
 public:
  GeneratorStream(BaseClasses base, DomainConfig domain, std::uint64_t seed,
                  std::optional<std::uint64_t> limit = std::nullopt);
  std::optional<Sample> next() override;

 private:
  BaseClasses base_;
  DomainConfig domain_;
  Rng rng_;
  Rng noise_;
  std::uint64_t produced_ = 0;
  std::optional<std::uint64_t> limit_;
};

struct TelemetryRow {
  std::uint64_t t = 0;
  std::uint64_t selected = 0;
  double q = 0.0;
  double p = 0.0;
  bool keep = false;
};

void write_telemetry_csv(std::span<const TelemetryRow> rows, const std::string& path, bool append);

using LabelOracle = std::function<ClassId(const Sample&)>;

struct PopulateResult {
  SupportSet support;
  std::uint64_t observed = 0;
  std::uint64_t labels_requested = 0;
  /// Labelled samples whose class quota was already met or not requested.
  std::uint64_t discarded = 0;
  std::vector<TelemetryRow> telemetry;
};

/// Streams until each requested class holds k labelled samples. Throws
/// Error(Exhaustion) with the per-class fill when the stream runs dry.
PopulateResult populate_support(SampleStream& stream, const ModelParams& model, std::size_t k,
                                std::span<const ClassId> classes, const LabelOracle& oracle,
                                SamplerState& state, Rng& rng);

}  // namespace fedacross
