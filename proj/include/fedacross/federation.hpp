#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedacross/messages.hpp"
#include "fedacross/pipeline.hpp"
#include "fedacross/transport.hpp"

namespace fedacross {

enum class Strategy { OnDemand, PreConfigured, DifferentialSync };

const char* to_string(Strategy strategy);
Strategy parse_strategy(const std::string& name);

struct ServerState {
  ModelParams global;
  std::uint64_t version = 1;
  ModelParams baseline;
  std::uint64_t baseline_version = 1;
  PrototypeSet source_protos;
  PrototypeSet fused_protos;
  std::map<std::string, std::uint64_t> registry;
  std::vector<AdaptedUpload> pending_uploads;
};

/// Server state right after pre-training: global == baseline, version 1.
ServerState make_server(const PretrainResult& pretrained);

/// First-contact reply. OnDemand: ModelFull. PreConfigured: Ack (the client
/// must hold the baseline). DifferentialSync: ModelDelta from the baseline to
/// the current global, or ModelFull when the client's baseline is unknown.
Message transmit_params(const ServerState& server, const ClientHello& hello, Strategy strategy,
                        std::string* log = nullptr);

/// Client model from the server's first-contact reply.
ModelParams receive_params(const Message& reply, const std::optional<ModelParams>& installed,
                           std::uint64_t installed_version);

/// Server-side knobs for one round.
struct RoundPlan {
  std::uint32_t round = 0;
  std::uint32_t k = 5;
  /// Classes per client; 0 selects every class.
  std::uint32_t class_subset = 0;
  std::uint32_t epochs = 200;
  double lr = 0.1;
  std::uint64_t seed = 0;
  bool sampling_enabled = false;
  bool upstream = true;
  Strategy strategy = Strategy::OnDemand;
};

/// Per-client round configuration, derived from the plan and the client id.
RoundConfig round_config_for(const RoundPlan& plan, const std::string& client_id,
                             std::uint32_t class_count);

struct ClientSetup {
  std::string client_id;
  Dataset train_pool;
  Dataset test;
  std::optional<ModelParams> installed_baseline;
  std::uint64_t installed_version = 0;
  TrainConfig train;
  SamplerConfig sampler;
  /// Test hook: hang up right after the hello.
  bool drop_after_hello = false;
};

/// Fills client.support for the round: a static k-shot draw from the pool, or
/// the stream sampler over the pool when sampling is enabled. Returns the
/// number of labels requested.
std::uint64_t prepare_support(ClientState& client, const ClientSetup& setup, const RoundConfig& round,
                              std::vector<TelemetryRow>* telemetry = nullptr);

struct ClientOutcome {
  ClientState state;
  RoundConfig round;
  ClientReport report;
  AdaptedUpload upload;
  std::vector<TelemetryRow> telemetry;
};

/// Client half of one round session.
ClientOutcome run_client_session(Channel& channel, const ClientSetup& setup);

struct SessionOutcome {
  std::string client_id;
  bool responded = false;
  std::string error;
  MessageType first_contact = MessageType::Ack;
  std::uint64_t first_contact_bytes = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::optional<AdaptedUpload> upload;
  std::optional<ClientReport> report;
};

/// Server half of one round session against a read-only server snapshot.
/// Transport and protocol failures are captured in the outcome.
SessionOutcome serve_session(const ServerState& server, Channel& channel, const RoundPlan& plan);

/// Collect-then-aggregate: FedAvg over uploads with positive support, fused
/// client prototypes, registry update. Bumps the version only when psi was
/// aggregated.
void aggregate(ServerState& server, std::span<const SessionOutcome> outcomes);

enum class TransportKind { InProcess, Socket };

const char* to_string(TransportKind kind);
TransportKind parse_transport(const std::string& name);

struct TransportOptions {
  TransportKind kind = TransportKind::InProcess;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  Timeout timeout{120000};
};

struct ClientMetrics {
  std::string client_id;
  bool responded = false;
  std::string error;
  double accuracy = 0.0;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  std::uint64_t labels_requested = 0;
  std::uint64_t support_size = 0;
  MessageType first_contact = MessageType::Ack;
  std::uint64_t first_contact_bytes = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  /// Client-side only; empty when the client ran in another process.
  std::vector<double> losses;
  std::vector<TelemetryRow> telemetry;
};

struct RoundMetrics {
  std::uint32_t round = 0;
  std::uint64_t version_before = 0;
  std::uint64_t version_after = 0;
  std::vector<ClientMetrics> clients;
};

ClientMetrics to_metrics(const SessionOutcome& outcome);

/// One federated round: every client session runs concurrently, the server
/// aggregates at the barrier. Clients that fail or time out are recorded and
/// skipped.
RoundMetrics run_round(ServerState& server, std::span<const ClientSetup> clients,
                       const TransportOptions& transport, const RoundPlan& plan);

/// Socket server loop for one round with clients in other processes: accepts
/// `expected_clients` sessions, then aggregates.
RoundMetrics serve_round(ServerState& server, SocketListener& listener, std::size_t expected_clients,
                         const RoundPlan& plan, Timeout timeout);

}  // namespace fedacross
