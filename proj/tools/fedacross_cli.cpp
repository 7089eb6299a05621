// Command-line front end over the C API.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedacross/fedacross.h"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> k;
  std::optional<std::string> strategy;
  std::optional<std::string> transport;
  std::optional<std::string> host;
  std::optional<std::uint32_t> port;
  std::optional<std::uint32_t> repetitions;
  std::optional<std::uint32_t> rounds;
  std::optional<bool> sampling;
  std::optional<bool> upstream;
  bool print_config = false;
};

int fail(fa_status status) {
  std::cerr << "error: " << fa_status_name(status) << ": " << fa_last_error() << '\n';
  return fa_exit_code(status);
}

struct ConfigHandle {
  fa_config* ptr = nullptr;
  ~ConfigHandle() { fa_config_free(ptr); }
};

struct ModelHandle {
  fa_model* ptr = nullptr;
  ~ModelHandle() { fa_model_free(ptr); }
};

struct DatasetHandle {
  fa_dataset* ptr = nullptr;
  ~DatasetHandle() { fa_dataset_free(ptr); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Sectioned key-value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a config key, section.key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "experiment.seed");
  cmd->add_option("-k,--k", c.k, "experiment.k");
  cmd->add_option("--strategy", c.strategy, "on_demand | pre_configured | differential_sync");
  cmd->add_option("--transport", c.transport, "in_process | socket");
  cmd->add_option("--host", c.host, "experiment.host");
  cmd->add_option("--port", c.port, "experiment.port");
  cmd->add_option("--repetitions", c.repetitions, "experiment.repetitions");
  cmd->add_option("--rounds", c.rounds, "experiment.rounds");
  cmd->add_option("--sampling", c.sampling, "experiment.sampling_enabled");
  cmd->add_option("--upstream", c.upstream, "experiment.upstream");
  cmd->add_flag("--print-config", c.print_config, "Print the effective configuration to stderr");
}

fa_status build_config(const Common& c, ConfigHandle& config) {
  fa_status st = c.config_path.empty() ? fa_config_default(&config.ptr) : fa_config_load(c.config_path.c_str(), &config.ptr);
  if (st != FA_OK) return st;
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      st = fa_config_set(config.ptr, s.c_str(), "");
      if (st != FA_OK) return st;
      continue;
    }
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  auto flag = [&](const char* key, const auto& opt) {
    if (!opt) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, bool>) kv.emplace_back(key, *opt ? "true" : "false");
    else if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, std::string>) kv.emplace_back(key, *opt);
    else kv.emplace_back(key, std::to_string(*opt));
  };
  flag("experiment.seed", c.seed);
  flag("experiment.k", c.k);
  flag("experiment.strategy", c.strategy);
  flag("experiment.transport", c.transport);
  flag("experiment.host", c.host);
  flag("experiment.port", c.port);
  flag("experiment.repetitions", c.repetitions);
  flag("experiment.rounds", c.rounds);
  flag("experiment.sampling_enabled", c.sampling);
  flag("experiment.upstream", c.upstream);
  for (const auto& [key, value] : kv) {
    st = fa_config_set(config.ptr, key.c_str(), value.c_str());
    if (st != FA_OK) return st;
  }
  if (c.print_config) {
    char* text = nullptr;
    st = fa_config_dump(config.ptr, &text);
    if (st != FA_OK) return st;
    std::cerr << text;
    fa_string_free(text);
  }
  return fa_config_validate(config.ptr);
}

int print_json(fa_status st, char*& json) {
  if (json) {
    std::cout << json << '\n';
    fa_string_free(json);
    json = nullptr;
  }
  return st == FA_OK ? 0 : fail(st);
}

std::string output_dir(const std::string& flag, const ConfigHandle& config) {
  if (!flag.empty()) return flag;
  char* value = nullptr;
  if (fa_config_get(config.ptr, "experiment.output_dir", &value) != FA_OK) return "results";
  std::string dir = value;
  fa_string_free(value);
  return dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated few-shot domain adaptation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fa_version()));

  Common common;
  std::string out;

  auto* pretrain = app.add_subcommand("pretrain", "Pre-train the server model on the source domain");
  add_common(pretrain, common);
  pretrain->add_option("-o,--out", out, "Output directory");

  auto* simulate = app.add_subcommand("simulate", "Run the configured experiment end to end");
  add_common(simulate, common);
  simulate->add_option("-o,--out", out, "Output directory");

  auto* sweep = app.add_subcommand("sweep-k", "Accuracy over experiment.k_values");
  add_common(sweep, common);
  sweep->add_option("-o,--out", out, "Output directory");

  auto* compare = app.add_subcommand("compare-strategies", "Bytes transferred per transmission strategy");
  add_common(compare, common);
  compare->add_option("-o,--out", out, "Output directory");

  std::string model_path;
  auto* serve = app.add_subcommand("serve", "Socket server for clients in other processes");
  add_common(serve, common);
  serve->add_option("-o,--out", out, "Output directory");
  serve->add_option("--model", model_path, "Pre-trained model; pre-trains when omitted")->check(CLI::ExistingFile);

  std::string client_id, baseline_path;
  auto* client = app.add_subcommand("client", "Connect to a server as one configured client");
  add_common(client, common);
  client->add_option("--id", client_id, "Client id from the config")->required();
  client->add_option("--baseline", baseline_path, "Pre-installed baseline model")->check(CLI::ExistingFile);

  std::string dataset_path, domain, split = "test", stage = "pretrained";
  auto* exporter = app.add_subcommand("export-embeddings", "Write embeddings as CSV");
  add_common(exporter, common);
  exporter->add_option("-o,--out", out, "Output CSV file")->required();
  exporter->add_option("--model", model_path, "Model file; without it all three stages are exported")
      ->check(CLI::ExistingFile);
  exporter->add_option("--dataset", dataset_path, "Dataset container file")->check(CLI::ExistingFile);
  exporter->add_option("--domain", domain, "source or a client id (instead of --dataset)");
  exporter->add_option("--split", split, "all | train | test");
  exporter->add_option("--stage", stage, "Stage tag written to every row");

  CLI11_PARSE(app, argc, argv);

  ConfigHandle config;
  if (fa_status st = build_config(common, config); st != FA_OK) return fail(st);

  char* json = nullptr;
  if (*pretrain) {
    return print_json(fa_pretrain(config.ptr, output_dir(out, config).c_str(), nullptr, &json), json);
  }
  if (*simulate) return print_json(fa_simulate(config.ptr, output_dir(out, config).c_str(), &json), json);
  if (*sweep) return print_json(fa_sweep_k(config.ptr, output_dir(out, config).c_str(), &json), json);
  if (*compare) return print_json(fa_compare_strategies(config.ptr, output_dir(out, config).c_str(), &json), json);
  if (*serve) {
    ModelHandle model;
    if (!model_path.empty()) {
      if (fa_status st = fa_model_load(model_path.c_str(), &model.ptr); st != FA_OK) return fail(st);
    }
    auto announce = [](uint16_t port, void*) {
      std::cerr << "listening on port " << port << std::endl;
    };
    return print_json(fa_serve(config.ptr, model.ptr, out.empty() ? "" : out.c_str(), announce, nullptr, &json),
                      json);
  }
  if (*client) {
    ModelHandle baseline;
    if (!baseline_path.empty()) {
      if (fa_status st = fa_model_load(baseline_path.c_str(), &baseline.ptr); st != FA_OK) return fail(st);
    }
    return print_json(fa_run_client(config.ptr, client_id.c_str(), baseline.ptr, &json), json);
  }
  if (*exporter) {
    if (model_path.empty()) {
      const fa_status st = fa_export_stages(config.ptr, out.c_str());
      return st == FA_OK ? 0 : fail(st);
    }
    ModelHandle model;
    DatasetHandle dataset;
    if (fa_status st = fa_model_load(model_path.c_str(), &model.ptr); st != FA_OK) return fail(st);
    fa_status st = FA_OK;
    if (!dataset_path.empty()) st = fa_dataset_load(dataset_path.c_str(), &dataset.ptr);
    else st = fa_dataset_generate(config.ptr, domain.empty() ? "source" : domain.c_str(),
                                  domain.empty() || domain == "source" ? "all" : split.c_str(), &dataset.ptr);
    if (st != FA_OK) return fail(st);
    st = fa_export_embeddings(model.ptr, dataset.ptr, stage.c_str(), out.c_str());
    return st == FA_OK ? 0 : fail(st);
  }
  return 1;
}
