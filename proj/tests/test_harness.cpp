#include <doctest.h>

#include <fstream>
#include <future>
#include <sstream>

#include "fedacross/harness.hpp"
#include "helpers.hpp"

using namespace fedacross;

namespace {

template <class F>
Error error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected an error");
  return Error(ErrorCode::Shape, "");
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("sectioned text on top of the defaults") {
  const std::string text =
      "# experiment settings\n"
      "[experiment]\n"
      "seed = 7\n"
      "k = 3\n"
      "strategy = differential_sync\n"
      "sampling_enabled = true\n"
      "[client]\n"
      "lr = 0.05\n"
      "[client1]\n"
      "id = phone\n"
      "noise_std = 0.2\n";
  const ExperimentConfig c = parse_config(text);
  CHECK(c.seed == 7);
  CHECK(c.k == 3);
  CHECK(c.strategy == Strategy::DifferentialSync);
  CHECK(c.sampling_enabled);
  CHECK(c.client_train.lr == 0.05);
  CHECK(c.server_train.lr == 0.01);
  REQUIRE(c.clients.count(1) == 1);
  CHECK(c.clients.at(1).id == "phone");
  CHECK(c.clients.at(1).domain.noise_std == 0.2);
  CHECK(get_setting(c, "client1.id") == "phone");
  CHECK(get_setting(c, "experiment.strategy") == "differential_sync");
}

TEST_CASE("default settings") {
  const ExperimentConfig c = default_config();
  CHECK(c.server_train.lr == 0.01);
  CHECK(c.server_train.momentum == 0.9);
  CHECK(c.server_train.weight_decay == 0.001);
  CHECK(c.server_train.batch_size == 128);
  CHECK(c.server_train.epochs == 300);
  CHECK(c.client_train.lr == 0.1);
  CHECK(c.client_train.batch_size == 32);
  CHECK(c.client_train.epochs == 200);
  CHECK(c.k_values == std::vector<std::uint32_t>{0, 3, 5, 10});
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("unknown keys are all reported") {
  const Error e = error_of([] { parse_config("[experiment]\nsed = 1\n[model]\nwidth = 3\n"); });
  CHECK(e.code() == ErrorCode::Config);
  const std::string what = e.what();
  CHECK(what.find("experiment.sed") != std::string::npos);
  CHECK(what.find("model.width") != std::string::npos);
  CHECK(error_of([] { parse_config("[experiment]\nk = many\n"); }).code() == ErrorCode::Config);
}

TEST_CASE("validation lists offending keys") {
  ExperimentConfig c = default_config();
  c.repetitions = 0;
  c.class_subset = 99;
  c.client_train.lr = -1.0;
  const Error e = error_of([&] { validate(c); });
  CHECK(e.code() == ErrorCode::Config);
  const std::string what = e.what();
  CHECK(what.find("experiment.repetitions") != std::string::npos);
  CHECK(what.find("experiment.class_subset") != std::string::npos);
  CHECK(what.find("client.") != std::string::npos);
}

TEST_CASE("dump and parse are inverse") {
  ExperimentConfig c = testing::small_config();
  apply_override(c, "experiment.clients=2");
  apply_override(c, "client1.rotation_deg=33.5");
  apply_override(c, "sampler.budget=0.3");
  const std::string text = dump_config(c);
  CHECK(dump_config(parse_config(text)) == text);

  const auto dir = testing::scratch("config_file");
  std::ofstream(dir / "c.ini") << text;
  CHECK(dump_config(load_config((dir / "c.ini").string())) == text);
  CHECK_THROWS_AS(load_config((dir / "missing.ini").string()), Error);
}

TEST_CASE("overrides") {
  ExperimentConfig c = default_config();
  apply_override(c, "experiment.k=10");
  CHECK(c.k == 10);
  apply_override(c, "server.milestones = 10, 20");
  CHECK(c.server_train.schedule.milestones == std::vector<std::size_t>{10, 20});
  CHECK(error_of([&] { apply_override(c, "experiment.k"); }).code() == ErrorCode::Config);
  CHECK(error_of([&] { apply_override(c, "nosection=1"); }).code() == ErrorCode::Config);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorCode::Config) == 2);
  CHECK(exit_code_for(ErrorCode::Scarcity) == 3);
  CHECK(exit_code_for(ErrorCode::Stratification) == 3);
  CHECK(exit_code_for(ErrorCode::EmptySupport) == 3);
  CHECK(exit_code_for(ErrorCode::Exhaustion) == 3);
  CHECK(exit_code_for(ErrorCode::Divergence) == 4);
  CHECK(exit_code_for(ErrorCode::Transport) == 5);
  CHECK(exit_code_for(ErrorCode::Shape) == 1);
}

}  // TEST_SUITE

TEST_SUITE("harness") {

TEST_CASE("k = 0 runs without client training") {
  ExperimentConfig c = testing::small_config();
  c.k = 0;
  const ExperimentResult r = run_experiment(c, "");
  REQUIRE(r.runs.size() == 1);
  for (const auto& m : r.runs[0].rounds.back().clients) {
    CHECK(m.responded);
    CHECK(m.losses.empty());
    CHECK(m.support_size == 0);
  }
  CHECK(r.summary["k0_semantics"].is_string());
}

TEST_CASE("identical configs give identical artifacts") {
  ExperimentConfig c = testing::small_config();
  c.repetitions = 2;
  c.sampling_enabled = true;
  c.sampler.budget = 0.9;
  c.sampler.q_init = 0.9;
  c.k = 3;
  const auto a = testing::scratch("determinism_a"), b = testing::scratch("determinism_b");
  run_experiment(c, a.string());
  run_experiment(c, b.string());
  for (const char* f : {"metrics.csv", "losses.csv", "summary.json", "telemetry.csv"}) {
    CAPTURE(f);
    const std::string x = testing::slurp(a / f);
    CHECK_FALSE(x.empty());
    CHECK(x == testing::slurp(b / f));
  }
  CHECK(std::filesystem::exists(a / "timing.json"));
  const auto summary = nlohmann::json::parse(testing::slurp(a / "summary.json"));
  CHECK(summary["runs"].size() == 2);
  CHECK(summary["runs"][1]["seed"] == c.seed + 1);
}

TEST_CASE("k sweep emits one row per k") {
  ExperimentConfig c = testing::small_config();
  c.repetitions = 2;
  const auto dir = testing::scratch("sweep");
  const SweepResult r = sweep_k(c, dir.string());
  REQUIRE(r.rows.size() == 3);
  for (const auto& row : r.rows) {
    CHECK(row.accuracies.size() == 2);
    CHECK(row.mean >= 0.0);
    CHECK(row.mean <= 1.0);
    CHECK(row.stddev >= 0.0);
  }
  const std::string csv = testing::slurp(dir / "sweep_k.csv");
  CHECK(csv.rfind("k,runs,accuracy_mean,accuracy_std\n", 0) == 0);
  CHECK(line_count(csv) == 4);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  for (std::uint32_t k : {0u, 3u, 5u}) {
    std::getline(lines, line);
    CHECK(line.rfind(std::to_string(k) + ",2,", 0) == 0);
  }
  CHECK(std::filesystem::exists(dir / "sweep_k_runs.csv"));
  CHECK(std::filesystem::exists(dir / "sweep_k.json"));
}

TEST_CASE("strategy comparison") {
  const ExperimentConfig c = testing::small_config();
  const auto dir = testing::scratch("strategies");
  const StrategyComparison r = compare_strategies(c, dir.string());
  CHECK(r.accuracies_identical);
  REQUIRE(r.reports.size() == 3);
  auto first = [&](std::size_t i) { return r.reports[i].rounds.front().clients.front().first_contact_bytes; };
  // Reports are ordered on_demand, pre_configured, differential_sync.
  CHECK(first(1) < first(2));
  CHECK(first(2) < first(0));
  CHECK(r.reports[1].late_joiner_bytes < r.reports[2].late_joiner_bytes);
  CHECK(r.reports[2].late_joiner_bytes < r.reports[0].late_joiner_bytes);
  CHECK(r.reports[2].late_joiner_reply == MessageType::ModelDelta);
  CHECK(std::filesystem::exists(dir / "strategies.csv"));
  CHECK(std::filesystem::exists(dir / "strategies.json"));
}

TEST_CASE("embedding export") {
  const ExperimentConfig c = testing::small_config();
  const ModelParams model = initial_model(c, 1);
  const auto dir = testing::scratch("export");

  Dataset empty;
  export_embeddings(model, empty, "baseline", (dir / "empty.csv").string());
  CHECK(testing::slurp(dir / "empty.csv") == "e0,e1,e2,e3,e4,e5,label,stage\n");

  const Dataset ds = generate_domain(c.base, c.source, 3, "source");
  export_embeddings(model, ds, "pretrained", (dir / "a.csv").string());
  export_embeddings(model, ds, "pretrained", (dir / "b.csv").string());
  const std::string a = testing::slurp(dir / "a.csv");
  CHECK(line_count(a) == ds.size() + 1);
  CHECK(a == testing::slurp(dir / "b.csv"));

  CHECK(error_of([&] { export_embeddings(model, ds, "x", (dir / "no" / "such" / "f.csv").string()); }).code() ==
        ErrorCode::Io);
}

TEST_CASE("stage export covers three stages") {
  const ExperimentConfig c = testing::small_config();
  const auto dir = testing::scratch("stages");
  export_stages(c, (dir / "stages.csv").string());
  const std::string text = testing::slurp(dir / "stages.csv");
  for (const char* stage : {",baseline\n", ",pretrained\n", ",fine-tuned\n"}) CHECK(text.find(stage) != std::string::npos);
}

TEST_CASE("pretrain artifacts") {
  const ExperimentConfig c = testing::small_config();
  const auto dir = testing::scratch("pretrain");
  PretrainResult r;
  const auto j = pretrain_to(c, dir.string(), &r);
  CHECK(j["epochs"] == c.server_train.epochs);
  CHECK(load_model((dir / "model.bin").string()) == r.params);
  CHECK(line_count(testing::slurp(dir / "losses.csv")) == c.server_train.epochs + 1);
  CHECK(line_count(testing::slurp(dir / "source_prototypes.csv")) == c.base.class_count + 1);
}

TEST_CASE("serve and client over a socket") {
  ExperimentConfig c = testing::small_config();
  apply_override(c, "experiment.clients=2");
  c.transport.kind = TransportKind::Socket;
  c.transport.port = 0;
  c.transport.timeout = Timeout{60000};
  const auto dir = testing::scratch("serve");
  std::promise<std::uint16_t> port;
  auto server = std::async(std::launch::async, [&] {
    return serve(c, std::nullopt, dir.string(), [&](std::uint16_t p) { port.set_value(p); });
  });
  ExperimentConfig cc = c;
  cc.transport.port = port.get_future().get();
  auto other = std::async(std::launch::async, [&] { return run_client(cc, "client1", std::nullopt); });
  const auto mine = run_client(cc, "client0", std::nullopt);
  const auto theirs = other.get();
  const auto summary = server.get();
  CHECK(summary["rounds"].size() == 1);
  CHECK(summary["rounds"][0]["version_after"] == 2);
  CHECK(mine["rounds"].size() == 1);
  CHECK(std::filesystem::exists(dir / "serve_metrics.csv"));
  CHECK(std::filesystem::exists(dir / "global.bin"));
  CHECK(error_of([&] { run_client(cc, "nobody", std::nullopt); }).code() == ErrorCode::Config);
}

}  // TEST_SUITE
