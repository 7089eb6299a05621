#include "fedacross/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedacross {

void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw Error(ErrorCode::Config, "learning rate must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw Error(ErrorCode::Config, "momentum must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw Error(ErrorCode::Config, "weight decay must be non-negative");
  if (c.batch_size < 2) throw Error(ErrorCode::Config, "batch size must be at least 2");
  if (!(c.label_smoothing >= 0.0 && c.label_smoothing < 1.0))
    throw Error(ErrorCode::Config, "label smoothing must lie in [0, 1)");
  if (!(c.schedule.factor > 0.0 && c.schedule.factor <= 1.0))
    throw Error(ErrorCode::Config, "schedule factor must lie in (0, 1]");
}

std::vector<double> train(ModelParams& params, std::span<const Sample> samples,
                          const TrainConfig& config, Rng& rng) {
  validate(config);
  if (config.epochs == 0) return {};
  if (samples.size() < 2)
    throw Error(ErrorCode::Statistics, "training needs at least 2 samples for batch statistics");

  OptimState phi_state{{}, config.lr, config.momentum, config.weight_decay};
  OptimState psi_state = phi_state;
  OptimState nu_state = phi_state;

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> losses;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config.lr, config.schedule);
    phi_state.lr = psi_state.lr = nu_state.lr = lr;
    rng.shuffle(order);

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size)
      batches.emplace_back(start, std::min(order.size(), start + config.batch_size));
    if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double epoch_loss = 0.0;
    for (const auto& [begin, end] : batches) {
      std::vector<Sample> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const Sample& x = samples[order[i]];
        batch.push_back(config.augment ? augment(x, rng) : x);
      }
      const Matrix inputs = to_matrix(batch);
      const auto labels = labels_of(batch);
      const Gradients g = model_backward(params, inputs, labels, config.label_smoothing);
      if (!std::isfinite(g.loss))
        throw Error(ErrorCode::Divergence, "non-finite loss at epoch " + std::to_string(epoch));

      if (g.phi) {
        Vector p = flatten(params.phi);
        sgd_momentum_step(p, flatten(*g.phi), phi_state);
        unflatten(params.phi, p);
      }
      if (g.psi) {
        Vector p = flatten_trainable(params.psi);
        sgd_momentum_step(p, flatten(*g.psi), psi_state);
        unflatten_trainable(params.psi, p);
      }
      if (g.nu) {
        Vector p = flatten(params.nu);
        sgd_momentum_step(p, flatten(*g.nu), nu_state);
        unflatten(params.nu, p);
      }
      update_running_stats(params.psi, g.stats);
      epoch_loss += g.loss * static_cast<double>(end - begin);
    }
    epoch_loss /= static_cast<double>(samples.size());
    losses.push_back(epoch_loss);

    if (config.patience > 0) {
      if (epoch_loss < best - 1e-6) {
        best = epoch_loss;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    }
  }
  return losses;
}

std::vector<LabeledEmbedding> embed_samples(const ModelParams& params, std::span<const Sample> samples) {
  std::vector<LabeledEmbedding> out;
  if (samples.empty()) return out;
  std::vector<Sample> transformed;
  transformed.reserve(samples.size());
  for (const auto& s : samples) transformed.push_back(augment_deterministic(s));
  const Matrix e = embed(params, to_matrix(transformed));
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto row = e.row(i);
    out.push_back({Vector(row.begin(), row.end()), samples[i].label});
  }
  return out;
}

PretrainResult server_pretrain(const Dataset& source, ModelParams init, const TrainConfig& config,
                               Rng& rng) {
  if (source.empty()) throw Error(ErrorCode::Scarcity, "source dataset is empty");
  std::vector<bool> seen(source.class_count, false);
  for (const auto& s : source.samples) {
    if (s.label < seen.size()) seen[s.label] = true;
  }
  for (ClassId c = 0; c < source.class_count; ++c) {
    if (!seen[c]) throw Error(ErrorCode::Scarcity, "source dataset lacks class " + std::to_string(c));
  }
  if (init.class_count() != source.class_count)
    throw Error(ErrorCode::Config, "model class count does not match the source label space");

  PretrainResult out;
  out.params = std::move(init);
  out.params.frozen_phi = out.params.frozen_nu = out.params.frozen_psi = false;
  out.losses = train(out.params, source.samples, config, rng);
  out.source_prototypes = compute_prototypes(embed_samples(out.params, source.samples));
  return out;
}

double support_loss(const ModelParams& params, std::span<const Sample> samples, double epsilon) {
  if (samples.empty()) throw Error(ErrorCode::EmptySupport, "no samples");
  std::vector<Sample> transformed(samples.begin(), samples.end());
  const auto labels = labels_of(transformed);
  return mean_loss(params, to_matrix(transformed), labels, epsilon, Mode::Eval);
}

double classifier_accuracy(const ModelParams& params, const Dataset& dataset) {
  if (dataset.empty()) return 0.0;
  const Matrix e = embed(params, to_matrix(dataset.samples));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Vector logits = classifier_forward(params.nu, e.row(i));
    const auto pred = static_cast<ClassId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (pred == dataset.samples[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

AdaptedUpload client_adapt(ClientState& client, const RoundConfig& round, TrainConfig config) {
  const ParamGroup frozen[] = {ParamGroup::Phi, ParamGroup::Nu};
  freeze(client.model, frozen);

  AdaptedUpload upload;
  upload.client_id = client.client_id;
  if (round.k == 0) {
    if (client.protos.empty())
      throw Error(ErrorCode::NotReady, "k = 0 requires the server's source prototypes");
    upload.psi = client.model.psi;
    upload.prototypes = client.protos;
    upload.support_count = 0;
    return upload;
  }
  const std::vector<Sample> support = client.support.samples();
  if (support.empty())
    throw Error(ErrorCode::Scarcity, "support set is empty with k = " + std::to_string(round.k));

  config.lr = round.lr;
  config.epochs = round.epochs;
  Rng rng(derive_seed(round.seed, 0x7472616E));
  client.losses = train(client.model, support, config, rng);
  client.protos = compute_prototypes(embed_samples(client.model, support));

  upload.psi = client.model.psi;
  upload.prototypes = client.protos;
  upload.support_count = support.size();
  return upload;
}

AdaptationParams fedavg_psi(std::span<const AdaptedUpload> uploads) {
  if (uploads.empty()) throw Error(ErrorCode::Weighting, "no uploads to aggregate");
  double total = 0.0;
  for (const auto& u : uploads) total += static_cast<double>(u.support_count);
  if (!(total > 0.0)) throw Error(ErrorCode::Weighting, "total support weight is zero");

  const AdaptationParams& first = uploads.front().psi;
  for (const auto& u : uploads) {
    const auto& p = u.psi;
    if (p.weights.rows() != first.weights.rows() || p.weights.cols() != first.weights.cols() ||
        p.gamma.size() != first.gamma.size() || p.beta.size() != first.beta.size() ||
        p.mu.size() != first.mu.size() || p.sigma.size() != first.sigma.size())
      throw Error(ErrorCode::Shape, "uploads differ in adaptation shape");
  }

  // Anchored on the first upload so identical inputs come back bit-identical.
  AdaptationParams out = first;
  auto average = [&](auto get) {
    auto& dst = get(out);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double anchor = dst[i];
      double acc = 0.0;
      for (const auto& u : uploads) {
        acc += static_cast<double>(u.support_count) * (get(u.psi)[i] - anchor);
      }
      dst[i] = anchor + acc / total;
    }
  };
  average([](auto& p) -> auto& { return p.weights.data(); });
  average([](auto& p) -> auto& { return p.gamma; });
  average([](auto& p) -> auto& { return p.beta; });
  average([](auto& p) -> auto& { return p.mu; });
  average([](auto& p) -> auto& { return p.sigma; });
  double acc = 0.0;
  for (const auto& u : uploads) acc += static_cast<double>(u.support_count) * (u.psi.bias - first.bias);
  out.bias = first.bias + acc / total;
  return out;
}

ClassId client_infer(const ClientState& client, const Sample& x) {
  if (client.protos.empty()) throw Error(ErrorCode::NotReady, "client holds no prototypes");
  return nearest_label(embed(client.model, augment_deterministic(x).pixels), client.protos);
}

Accuracy evaluate(const ClientState& client, std::span<const Sample> test) {
  if (client.protos.empty()) throw Error(ErrorCode::NotReady, "client holds no prototypes");
  Accuracy acc;
  if (test.empty()) return acc;
  for (const auto& e : embed_samples(client.model, test)) {
    if (nearest_label(e.embedding, client.protos) == e.label) ++acc.correct;
    ++acc.total;
  }
  return acc;
}

}  // namespace fedacross
