#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedacross/data.hpp"
#include "fedacross/federation.hpp"
#include "fedacross/model.hpp"
#include "fedacross/pipeline.hpp"
#include "fedacross/sampler.hpp"

namespace fedacross {

struct ClientSpec {
  std::string id;
  DomainConfig domain;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::uint32_t repetitions = 1;
  std::uint32_t rounds = 1;
  std::uint32_t k = 5;
  std::vector<std::uint32_t> k_values{0, 3, 5, 10};
  std::uint32_t class_subset = 0;
  Strategy strategy = Strategy::OnDemand;
  bool sampling_enabled = false;
  bool upstream = true;
  /// Draw fresh support sets per repetition; otherwise every run reuses seed.
  bool redraw_support = true;
  TransportOptions transport;
  std::string output_dir = "results";

  BaseClasses base;
  std::size_t source_per_class = 60;
  std::size_t target_per_class = 40;
  double train_fraction = 0.5;
  DomainConfig source;
  std::map<std::uint32_t, ClientSpec> clients;

  ModelShape shape;
  InitConfig init;
  TrainConfig server_train;
  TrainConfig client_train;
  SamplerConfig sampler;
};

/// Defaults: one shifted target client, SGD settings as in the README.
ExperimentConfig default_config();

/// Sets one `section.key` entry. Client domains live in sections client0,
/// client1, ...; the `client` section holds client training settings.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);
/// Current value of one `section.key` entry, formatted as parse_config reads it.
std::string get_setting(const ExperimentConfig& config, const std::string& key);
/// Parses `section.key=value`.
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Reads a sectioned key-value file on top of the defaults.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text);
/// Inverse of parse_config for every known key.
std::string dump_config(const ExperimentConfig& config);

/// Throws Error(Config) listing every offending key.
void validate(const ExperimentConfig& config);

/// Datasets of one repetition, regenerated identically from the config.
struct ExperimentData {
  Dataset source;
  std::vector<std::pair<Dataset, Dataset>> targets;  // (train pool, test) per client, in client order
};

ExperimentData make_data(const ExperimentConfig& config, std::uint64_t run_seed);
ModelParams initial_model(const ExperimentConfig& config, std::uint64_t run_seed);
PretrainResult pretrain(const ExperimentConfig& config, std::uint64_t run_seed, const Dataset& source);

std::vector<ClientSetup> client_setups(const ExperimentConfig& config, const ExperimentData& data,
                                       const ModelParams& baseline);
RoundPlan round_plan(const ExperimentConfig& config, std::uint32_t round, std::uint64_t run_seed);

/// Accuracy of the source prototypes on each client's test split, restricted
/// to the classes that client is assigned in round 0.
std::vector<double> zero_shot_accuracy(const ExperimentConfig& config, const ExperimentData& data,
                                       const PretrainResult& pretrained, std::uint64_t run_seed);

struct RunResult {
  std::uint32_t run = 0;
  std::uint64_t seed = 0;
  std::vector<double> pretrain_losses;
  std::vector<double> zero_shot;
  std::vector<RoundMetrics> rounds;
  /// Mean final-round accuracy across responding clients.
  double accuracy = 0.0;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
  nlohmann::json summary;
};

/// Repetitions with seeds seed + run index. Writes metrics.csv, losses.csv,
/// summary.json (and telemetry.csv when sampling) when out_dir is non-empty.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir);

struct SweepRow {
  std::uint32_t k = 0;
  std::vector<double> accuracies;  // one per run
  double mean = 0.0;
  double stddev = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<double> zero_shot;  // per run, mean over clients
  nlohmann::json summary;
};

/// Pre-trains once per repetition and runs one round per k on a fresh server.
/// Writes sweep_k.csv, sweep_k_runs.csv and sweep_k.json.
SweepResult sweep_k(const ExperimentConfig& config, const std::string& out_dir);

struct StrategyReport {
  Strategy strategy = Strategy::OnDemand;
  std::vector<RoundMetrics> rounds;
  /// First-contact reply size for a client holding the baseline, measured
  /// against the final server state.
  std::uint64_t late_joiner_bytes = 0;
  MessageType late_joiner_reply = MessageType::Ack;
  std::vector<double> accuracies;  // final round, client order
};

struct StrategyComparison {
  std::vector<StrategyReport> reports;
  bool accuracies_identical = false;
  nlohmann::json summary;
};

/// One seeded run (repetition 0) under every transmission strategy.
/// Writes strategies.csv and strategies.json.
StrategyComparison compare_strategies(const ExperimentConfig& config, const std::string& out_dir);

/// Pre-trains on the configured source domain (repetition 0) and writes
/// model.bin, source_prototypes.csv and losses.csv into out_dir.
nlohmann::json pretrain_to(const ExperimentConfig& config, const std::string& out_dir,
                           PretrainResult* result = nullptr);

/// Socket server for clients in other processes. Uses `model` when given
/// (source prototypes are recomputed from the source domain), otherwise
/// pre-trains. Runs config.rounds rounds of config.clients.size() sessions.
nlohmann::json serve(const ExperimentConfig& config, const std::optional<ModelParams>& model,
                     const std::string& out_dir, const std::function<void(std::uint16_t)>& on_listening = {});

/// Socket client for one configured client id; one session per round.
/// `baseline` is the pre-installed model for pre_configured and
/// differential_sync.
nlohmann::json run_client(const ExperimentConfig& config, const std::string& client_id,
                          const std::optional<ModelParams>& baseline);

/// CSV with columns e0..e{m-1}, label, stage; header only for an empty dataset.
void export_embeddings(const ModelParams& model, const Dataset& dataset, const std::string& stage,
                       const std::string& path, bool append = false);

/// Embeddings of client 0's test split at the baseline (untrained), pretrained
/// and fine-tuned stages, in one CSV.
void export_stages(const ExperimentConfig& config, const std::string& path);

/// Process exit status for an error code: 2 config, 3 data scarcity,
/// 4 divergence, 5 transport, 1 anything else.
int exit_code_for(ErrorCode code);

nlohmann::json to_json(const RoundMetrics& metrics);

}  // namespace fedacross
