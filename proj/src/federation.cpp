#include "fedacross/federation.hpp"

#include <algorithm>
#include <exception>
#include <iostream>
#include <memory>
#include <mutex>
#include <thread>

namespace fedacross {

namespace {

template <class T>
T expect(Message msg, const char* context) {
  if (auto* m = std::get_if<T>(&msg)) return std::move(*m);
  throw Error(ErrorCode::Protocol, std::string(context) + ": unexpected " + to_string(type_of(msg)));
}

std::uint64_t hash_id(const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::mutex log_mutex;

void log_line(const std::string& line) {
  std::lock_guard lock(log_mutex);
  std::clog << line << '\n';
}

}  // namespace

const char* to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::OnDemand: return "on_demand";
    case Strategy::PreConfigured: return "pre_configured";
    case Strategy::DifferentialSync: return "differential_sync";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "on_demand") return Strategy::OnDemand;
  if (name == "pre_configured") return Strategy::PreConfigured;
  if (name == "differential_sync") return Strategy::DifferentialSync;
  throw Error(ErrorCode::Config, "unknown transmission strategy '" + name +
                                     "' (expected on_demand, pre_configured or differential_sync)");
}

const char* to_string(TransportKind kind) {
  return kind == TransportKind::InProcess ? "in_process" : "socket";
}

TransportKind parse_transport(const std::string& name) {
  if (name == "in_process") return TransportKind::InProcess;
  if (name == "socket") return TransportKind::Socket;
  throw Error(ErrorCode::Config, "unknown transport '" + name + "' (expected in_process or socket)");
}

ServerState make_server(const PretrainResult& pretrained) {
  ServerState s;
  s.global = pretrained.params;
  s.baseline = pretrained.params;
  s.version = 1;
  s.baseline_version = 1;
  s.source_protos = pretrained.source_prototypes;
  return s;
}

Message transmit_params(const ServerState& server, const ClientHello& hello, Strategy strategy,
                        std::string* log) {
  switch (strategy) {
    case Strategy::OnDemand:
      return ModelFull{server.version, server.global};
    case Strategy::PreConfigured:
      if (!hello.has_baseline)
        throw Error(ErrorCode::Protocol,
                    "client " + hello.client_id + " has no pre-configured baseline");
      return Ack{0};
    case Strategy::DifferentialSync:
      if (!hello.has_baseline || hello.baseline_version != server.baseline_version) {
        const std::string note = "differential sync: client " + hello.client_id +
                                 " baseline unknown (has_baseline=" +
                                 std::to_string(hello.has_baseline) + ", version=" +
                                 std::to_string(hello.baseline_version) + "); sending full model";
        if (log) *log = note;
        log_line(note);
        return ModelFull{server.version, server.global};
      }
      return make_delta(server.baseline, server.baseline_version, server.global, server.version);
  }
  throw Error(ErrorCode::Protocol, "unknown strategy");
}

ModelParams receive_params(const Message& reply, const std::optional<ModelParams>& installed,
                           std::uint64_t installed_version) {
  if (const auto* full = std::get_if<ModelFull>(&reply)) return full->params;
  if (const auto* ack = std::get_if<Ack>(&reply)) {
    if (ack->code != 0)
      throw Error(ErrorCode::Protocol, "server rejected the hello (code " + std::to_string(ack->code) + ")");
    if (!installed) throw Error(ErrorCode::Protocol, "pre-configured strategy without an installed baseline");
    return *installed;
  }
  if (const auto* delta = std::get_if<ModelDelta>(&reply)) {
    if (!installed || delta->base_version != installed_version)
      throw Error(ErrorCode::Protocol, "model delta does not match the installed baseline");
    ModelParams p = apply_delta(*installed, *delta);
    validate(p);
    return p;
  }
  throw Error(ErrorCode::Protocol, std::string("unexpected first-contact reply ") + to_string(type_of(reply)));
}

RoundConfig round_config_for(const RoundPlan& plan, const std::string& client_id,
                             std::uint32_t class_count) {
  RoundConfig rc;
  rc.round = plan.round;
  rc.k = plan.k;
  rc.epochs = plan.epochs;
  rc.lr = plan.lr;
  rc.seed = derive_seed(derive_seed(plan.seed, hash_id(client_id)), plan.round);
  rc.sampling_enabled = plan.sampling_enabled;
  rc.upstream = plan.upstream;
  if (plan.class_subset == 0 || plan.class_subset >= class_count) {
    rc.classes = all_classes(class_count);
  } else {
    Rng rng(derive_seed(rc.seed, 0x636C6173));
    rc.classes = select_classes(class_count, plan.class_subset, rng);
  }
  return rc;
}

std::uint64_t prepare_support(ClientState& client, const ClientSetup& setup, const RoundConfig& round,
                              std::vector<TelemetryRow>* telemetry) {
  if (round.k == 0) {
    client.support = SupportSet{};
    return 0;
  }
  if (round.sampling_enabled) {
    SamplerState sampler = make_sampler(client.model.embedding_dim(), setup.sampler);
    DatasetStream stream(setup.train_pool, derive_seed(round.seed, 0x73747265));
    Rng rng(derive_seed(round.seed, 0x73616D70));
    auto oracle = [](const Sample& s) { return s.label; };
    PopulateResult filled = populate_support(stream, client.model, round.k, round.classes, oracle, sampler, rng);
    if (telemetry) *telemetry = std::move(filled.telemetry);
    client.support = std::move(filled.support);
    client.sampler = std::move(sampler);
    return filled.labels_requested;
  }
  Rng rng(derive_seed(round.seed, 0x73757070));
  client.support = build_support_set(setup.train_pool, round.k, round.classes, rng);
  return client.support.size();
}

ClientOutcome run_client_session(Channel& channel, const ClientSetup& setup) {
  channel.send(ClientHello{setup.client_id, setup.installed_baseline.has_value(), setup.installed_version});
  if (setup.drop_after_hello) {
    channel.close();
    throw Error(ErrorCode::Transport, "client " + setup.client_id + " dropped out");
  }
  const Message reply = channel.receive();
  ClientOutcome out;
  out.state.client_id = setup.client_id;
  out.state.model = receive_params(reply, setup.installed_baseline, setup.installed_version);
  out.round = expect<RoundConfig>(channel.receive(), "client round config");
  const RoundConfig& round = out.round;

  std::uint64_t labels_requested = 0;
  if (round.k == 0) {
    out.state.protos = expect<SourcePrototypes>(channel.receive(), "client source prototypes").prototypes;
  } else {
    labels_requested = prepare_support(out.state, setup, round, &out.telemetry);
  }

  out.upload = client_adapt(out.state, round, setup.train);
  const Dataset test = filter_classes(setup.test, round.classes);
  const Accuracy acc = evaluate(out.state, test.samples);
  out.report = ClientReport{setup.client_id, acc.correct, acc.total, labels_requested,
                            out.state.support.size()};

  if (round.upstream) {
    channel.send(out.upload);
  } else {
    channel.send(Ack{0});
  }
  channel.send(out.report);
  const Ack done = expect<Ack>(channel.receive(), "client final ack");
  if (done.code != 0) throw Error(ErrorCode::Protocol, "server rejected the round results");
  return out;
}

SessionOutcome serve_session(const ServerState& server, Channel& channel, const RoundPlan& plan) {
  SessionOutcome out;
  try {
    const ClientHello hello = expect<ClientHello>(channel.receive(), "server hello");
    out.client_id = hello.client_id;
    Message reply;
    try {
      reply = transmit_params(server, hello, plan.strategy);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Protocol) channel.send(Ack{1});
      throw;
    }
    const std::uint64_t before = channel.bytes_sent();
    channel.send(reply);
    out.first_contact = type_of(reply);
    out.first_contact_bytes = channel.bytes_sent() - before;

    const RoundConfig rc = round_config_for(plan, hello.client_id, server.global.class_count());
    channel.send(rc);
    if (rc.k == 0) channel.send(SourcePrototypes{server.source_protos});

    Message result = channel.receive();
    if (auto* upload = std::get_if<AdaptedUpload>(&result)) {
      if (upload->client_id != hello.client_id)
        throw Error(ErrorCode::Protocol, "upload client id does not match the session");
      out.upload = std::move(*upload);
    } else {
      expect<Ack>(std::move(result), "server upload");
    }
    out.report = expect<ClientReport>(channel.receive(), "server report");
    channel.send(Ack{0});
    out.responded = true;
  } catch (const Error& e) {
    out.responded = false;
    out.error = std::string(to_string(e.code())) + ": " + e.what();
  }
  out.bytes_down = channel.bytes_sent();
  out.bytes_up = channel.bytes_received();
  return out;
}

void aggregate(ServerState& server, std::span<const SessionOutcome> outcomes) {
  std::vector<const SessionOutcome*> ordered;
  for (const auto& o : outcomes) ordered.push_back(&o);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

  server.pending_uploads.clear();
  for (const auto* o : ordered) {
    if (!o->responded) continue;
    server.registry[o->client_id] = server.version;
    if (o->upload && o->upload->support_count > 0) server.pending_uploads.push_back(*o->upload);
  }
  if (server.pending_uploads.empty()) return;

  server.global.psi = fedavg_psi(server.pending_uploads);
  ++server.version;
  std::vector<PrototypeSet> sets;
  for (const auto& u : server.pending_uploads) sets.push_back(u.prototypes);
  server.fused_protos = fuse_prototypes(sets);
  server.pending_uploads.clear();
}

ClientMetrics to_metrics(const SessionOutcome& o) {
  ClientMetrics m;
  m.client_id = o.client_id;
  m.responded = o.responded;
  m.error = o.error;
  m.first_contact = o.first_contact;
  m.first_contact_bytes = o.first_contact_bytes;
  m.bytes_down = o.bytes_down;
  m.bytes_up = o.bytes_up;
  if (o.report) {
    m.correct = o.report->correct;
    m.total = o.report->total;
    m.accuracy = o.report->total == 0 ? 0.0 : static_cast<double>(o.report->correct) / o.report->total;
    m.labels_requested = o.report->labels_requested;
    m.support_size = o.report->support_size;
  }
  return m;
}

namespace {

RoundMetrics finish_round(ServerState& server, std::vector<SessionOutcome>& outcomes,
                          const RoundPlan& plan) {
  RoundMetrics metrics;
  metrics.round = plan.round;
  metrics.version_before = server.version;
  aggregate(server, outcomes);
  metrics.version_after = server.version;
  for (const auto& o : outcomes) metrics.clients.push_back(to_metrics(o));
  return metrics;
}

void run_client_thread(Channel& channel, const ClientSetup& setup, ClientMetrics& local) {
  try {
    ClientOutcome out = run_client_session(channel, setup);
    local.losses = std::move(out.state.losses);
    local.telemetry = std::move(out.telemetry);
  } catch (const std::exception& e) {
    if (!setup.drop_after_hello) log_line("client " + setup.client_id + " failed: " + e.what());
    channel.close();
  }
}

}  // namespace

RoundMetrics run_round(ServerState& server, std::span<const ClientSetup> clients,
                       const TransportOptions& transport, const RoundPlan& plan) {
  std::vector<SessionOutcome> outcomes(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) outcomes[i].client_id = clients[i].client_id;
  std::vector<ClientMetrics> local(clients.size());
  const ServerState& snapshot = server;
  auto attach_local = [&](RoundMetrics& metrics) {
    for (auto& m : metrics.clients) {
      for (std::size_t i = 0; i < clients.size(); ++i) {
        if (clients[i].client_id != m.client_id) continue;
        m.losses = std::move(local[i].losses);
        m.telemetry = std::move(local[i].telemetry);
      }
    }
  };

  if (transport.kind == TransportKind::InProcess) {
    std::vector<std::unique_ptr<Channel>> server_ends, client_ends;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      auto [s, c] = make_in_process_pair(transport.timeout);
      server_ends.push_back(std::move(s));
      client_ends.push_back(std::move(c));
    }
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      threads.emplace_back(run_client_thread, std::ref(*client_ends[i]), std::cref(clients[i]),
                           std::ref(local[i]));
      threads.emplace_back([&, i] {
        outcomes[i] = serve_session(snapshot, *server_ends[i], plan);
        if (outcomes[i].client_id.empty()) outcomes[i].client_id = clients[i].client_id;
        server_ends[i]->close();
      });
    }
    for (auto& t : threads) t.join();
    RoundMetrics metrics = finish_round(server, outcomes, plan);
    attach_local(metrics);
    return metrics;
  }

  SocketListener listener(transport.host, transport.port);
  std::vector<std::unique_ptr<Channel>> client_ends(clients.size());
  std::vector<std::thread> client_threads;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    client_threads.emplace_back([&, i] {
      try {
        client_ends[i] = connect_socket(transport.host, listener.port(), transport.timeout, transport.timeout);
      } catch (const std::exception& e) {
        log_line("client " + clients[i].client_id + " could not connect: " + e.what());
        return;
      }
      run_client_thread(*client_ends[i], clients[i], local[i]);
    });
  }
  RoundMetrics metrics = serve_round(server, listener, clients.size(), plan, transport.timeout);
  for (auto& t : client_threads) t.join();

  // Sessions arrive in connection order; report them in client order.
  std::vector<ClientMetrics> ordered;
  for (const auto& setup : clients) {
    auto it = std::find_if(metrics.clients.begin(), metrics.clients.end(),
                           [&](const ClientMetrics& m) { return m.client_id == setup.client_id; });
    if (it != metrics.clients.end()) {
      ordered.push_back(*it);
    } else {
      ClientMetrics missing;
      missing.client_id = setup.client_id;
      missing.error = "transport: no session established";
      ordered.push_back(missing);
    }
  }
  metrics.clients = std::move(ordered);
  attach_local(metrics);
  return metrics;
}

RoundMetrics serve_round(ServerState& server, SocketListener& listener, std::size_t expected_clients,
                         const RoundPlan& plan, Timeout timeout) {
  std::vector<std::unique_ptr<Channel>> channels;
  std::vector<SessionOutcome> outcomes;
  std::vector<std::thread> threads;
  std::mutex outcomes_mutex;
  const ServerState& snapshot = server;
  for (std::size_t i = 0; i < expected_clients; ++i) {
    std::unique_ptr<Channel> ch;
    try {
      ch = listener.accept(timeout, timeout);
    } catch (const Error& e) {
      log_line(std::string("server: ") + e.what());
      break;
    }
    channels.push_back(std::move(ch));
    Channel* raw = channels.back().get();
    threads.emplace_back([&, raw] {
      SessionOutcome o = serve_session(snapshot, *raw, plan);
      raw->close();
      std::lock_guard lock(outcomes_mutex);
      outcomes.push_back(std::move(o));
    });
  }
  for (auto& t : threads) t.join();
  std::sort(outcomes.begin(), outcomes.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  return finish_round(server, outcomes, plan);
}

}  // namespace fedacross
