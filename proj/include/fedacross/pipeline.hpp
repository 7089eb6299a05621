#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedacross/data.hpp"
#include "fedacross/messages.hpp"
#include "fedacross/model.hpp"
#include "fedacross/prototypes.hpp"
#include "fedacross/sampler.hpp"

namespace fedacross {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.001;
  std::size_t batch_size = 128;
  std::size_t epochs = 300;
  StepSchedule schedule;
  double label_smoothing = 0.1;
  /// Stop after this many epochs without a loss improvement; 0 disables.
  std::size_t patience = 0;
  bool augment = true;
};

void validate(const TrainConfig& config);

/// Epoch loop over shuffled mini-batches: transform, mean label-smoothed CE,
/// SGD with momentum on every unfrozen group, running-statistics update.
/// A trailing batch of one sample is merged into the previous batch because
/// train-mode batch statistics need two rows. Returns the mean loss per epoch.
std::vector<double> train(ModelParams& params, std::span<const Sample> samples,
                          const TrainConfig& config, Rng& rng);

struct PretrainResult {
  ModelParams params;
  PrototypeSet source_prototypes;
  std::vector<double> losses;
};

PretrainResult server_pretrain(const Dataset& source, ModelParams init, const TrainConfig& config,
                               Rng& rng);

std::vector<LabeledEmbedding> embed_samples(const ModelParams& params, std::span<const Sample> samples);

/// Eval-mode mean loss over the untransformed samples.
double support_loss(const ModelParams& params, std::span<const Sample> samples, double epsilon);
/// Fraction of samples whose classifier-head argmax matches the label.
double classifier_accuracy(const ModelParams& params, const Dataset& dataset);

struct ClientState {
  std::string client_id;
  ModelParams model;
  SupportSet support;
  PrototypeSet protos;
  std::optional<SamplerState> sampler;
  std::vector<double> losses;
};

/// Fine-tunes psi on the support set with phi and nu frozen, then rebuilds
/// the client prototypes. With k == 0 nothing is trained and the client keeps
/// the prototypes it already holds (the server's source prototypes).
AdaptedUpload client_adapt(ClientState& client, const RoundConfig& round, TrainConfig config);

/// Support-count-weighted mean of every psi field.
AdaptationParams fedavg_psi(std::span<const AdaptedUpload> uploads);

/// Nearest-prototype label of the embedded, deterministically transformed x.
/// The classifier head is not consulted.
ClassId client_infer(const ClientState& client, const Sample& x);

struct Accuracy {
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

Accuracy evaluate(const ClientState& client, std::span<const Sample> test);

}  // namespace fedacross
