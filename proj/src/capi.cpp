#include "fedacross/fedacross.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "fedacross/harness.hpp"

struct fa_config {
  fedacross::ExperimentConfig value;
};

struct fa_model {
  fedacross::ModelParams value;
};

struct fa_dataset {
  fedacross::Dataset value;
};

namespace {

thread_local std::string last_error;

fa_status status_of(fedacross::ErrorCode code) {
  return static_cast<fa_status>(static_cast<int>(code) + FA_ERR_SHAPE);
}

template <class F>
fa_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return FA_OK;
  } catch (const fedacross::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    last_error = e.what();
    return FA_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown exception";
    return FA_ERR_INTERNAL;
  }
}

fa_status invalid(const char* what) {
  last_error = what;
  return FA_ERR_INVALID_ARGUMENT;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit_json(const nlohmann::json& j, char** out_json) {
  if (out_json) *out_json = copy_string(j.dump());
}

std::string dir_of(const char* out_dir) { return out_dir ? out_dir : ""; }

}  // namespace

static_assert(static_cast<int>(fedacross::ErrorCode::Serialization) + FA_ERR_SHAPE == FA_ERR_SERIALIZATION,
              "status codes must mirror ErrorCode");

extern "C" {

const char* fa_last_error(void) { return last_error.c_str(); }

const char* fa_status_name(fa_status status) {
  switch (status) {
    case FA_OK: return "ok";
    case FA_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case FA_ERR_INTERNAL: return "internal";
    default:
      if (status > FA_ERR_INVALID_ARGUMENT && status <= FA_ERR_SERIALIZATION)
        return fedacross::to_string(static_cast<fedacross::ErrorCode>(status - FA_ERR_SHAPE));
      return "unknown";
  }
}

int fa_exit_code(fa_status status) {
  if (status == FA_OK) return 0;
  if (status > FA_ERR_INVALID_ARGUMENT && status <= FA_ERR_SERIALIZATION)
    return fedacross::exit_code_for(static_cast<fedacross::ErrorCode>(status - FA_ERR_SHAPE));
  return 1;
}

const char* fa_version(void) { return "1.0.0"; }

void fa_string_free(char* s) { std::free(s); }

fa_status fa_config_default(fa_config** out) {
  if (!out) return invalid("out is null");
  return guarded([&] { *out = new fa_config{fedacross::default_config()}; });
}

fa_status fa_config_load(const char* path, fa_config** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] { *out = new fa_config{fedacross::load_config(path)}; });
}

fa_status fa_config_set(fa_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return invalid("config, key and value must be non-null");
  return guarded([&] { fedacross::apply_setting(config->value, key, value); });
}

fa_status fa_config_get(const fa_config* config, const char* key, char** out_value) {
  if (!config || !key || !out_value) return invalid("config, key and out_value must be non-null");
  return guarded([&] { *out_value = copy_string(fedacross::get_setting(config->value, key)); });
}

fa_status fa_config_validate(const fa_config* config) {
  if (!config) return invalid("config is null");
  return guarded([&] { fedacross::validate(config->value); });
}

fa_status fa_config_dump(const fa_config* config, char** out_text) {
  if (!config || !out_text) return invalid("config and out_text must be non-null");
  return guarded([&] { *out_text = copy_string(fedacross::dump_config(config->value)); });
}

void fa_config_free(fa_config* config) { delete config; }

fa_status fa_pretrain(const fa_config* config, const char* out_dir, fa_model** out_model, char** out_json) {
  if (!config) return invalid("config is null");
  return guarded([&] {
    fedacross::PretrainResult result;
    const auto j = fedacross::pretrain_to(config->value, dir_of(out_dir), &result);
    if (out_model) *out_model = new fa_model{std::move(result.params)};
    emit_json(j, out_json);
  });
}

fa_status fa_simulate(const fa_config* config, const char* out_dir, char** out_json) {
  if (!config) return invalid("config is null");
  return guarded([&] { emit_json(fedacross::run_experiment(config->value, dir_of(out_dir)).summary, out_json); });
}

fa_status fa_sweep_k(const fa_config* config, const char* out_dir, char** out_json) {
  if (!config) return invalid("config is null");
  return guarded([&] { emit_json(fedacross::sweep_k(config->value, dir_of(out_dir)).summary, out_json); });
}

fa_status fa_compare_strategies(const fa_config* config, const char* out_dir, char** out_json) {
  if (!config) return invalid("config is null");
  return guarded([&] {
    const auto result = fedacross::compare_strategies(config->value, dir_of(out_dir));
    emit_json(result.summary, out_json);
    if (!result.accuracies_identical)
      throw fedacross::Error(fedacross::ErrorCode::Protocol, "strategies produced different accuracies");
  });
}

fa_status fa_serve(const fa_config* config, const fa_model* model, const char* out_dir,
                   fa_listening_fn on_listening, void* user, char** out_json) {
  if (!config) return invalid("config is null");
  return guarded([&] {
    std::optional<fedacross::ModelParams> params;
    if (model) params = model->value;
    std::function<void(std::uint16_t)> cb;
    if (on_listening) cb = [&](std::uint16_t port) { on_listening(port, user); };
    emit_json(fedacross::serve(config->value, params, dir_of(out_dir), cb), out_json);
  });
}

fa_status fa_run_client(const fa_config* config, const char* client_id, const fa_model* baseline,
                        char** out_json) {
  if (!config || !client_id) return invalid("config and client_id must be non-null");
  return guarded([&] {
    std::optional<fedacross::ModelParams> params;
    if (baseline) params = baseline->value;
    emit_json(fedacross::run_client(config->value, client_id, params), out_json);
  });
}

fa_status fa_export_embeddings(const fa_model* model, const fa_dataset* dataset, const char* stage,
                               const char* path) {
  if (!model || !dataset || !stage || !path) return invalid("model, dataset, stage and path must be non-null");
  return guarded([&] { fedacross::export_embeddings(model->value, dataset->value, stage, path); });
}

fa_status fa_export_stages(const fa_config* config, const char* path) {
  if (!config || !path) return invalid("config and path must be non-null");
  return guarded([&] { fedacross::export_stages(config->value, path); });
}

fa_status fa_model_init(const fa_config* config, uint64_t seed, fa_model** out) {
  if (!config || !out) return invalid("config and out must be non-null");
  return guarded([&] { *out = new fa_model{fedacross::initial_model(config->value, seed)}; });
}

fa_status fa_model_load(const char* path, fa_model** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] { *out = new fa_model{fedacross::load_model(path)}; });
}

fa_status fa_model_save(const fa_model* model, const char* path) {
  if (!model || !path) return invalid("model and path must be non-null");
  return guarded([&] { fedacross::save_model(model->value, path); });
}

fa_status fa_model_dims(const fa_model* model, size_t* input_dim, size_t* embedding_dim, size_t* class_count) {
  if (!model) return invalid("model is null");
  if (input_dim) *input_dim = model->value.input_dim();
  if (embedding_dim) *embedding_dim = model->value.embedding_dim();
  if (class_count) *class_count = model->value.class_count();
  last_error.clear();
  return FA_OK;
}

fa_status fa_model_embed(const fa_model* model, const double* inputs, size_t rows, double* out) {
  if (!model || (rows > 0 && (!inputs || !out))) return invalid("model, inputs and out must be non-null");
  return guarded([&] {
    const std::size_t d = model->value.input_dim();
    const std::size_t m = model->value.embedding_dim();
    for (std::size_t r = 0; r < rows; ++r) {
      const auto z = fedacross::embed(model->value, std::span<const double>(inputs + r * d, d));
      std::copy(z.begin(), z.end(), out + r * m);
    }
  });
}

void fa_model_free(fa_model* model) { delete model; }

fa_status fa_dataset_generate(const fa_config* config, const char* domain, const char* split, fa_dataset** out) {
  if (!config || !domain || !out) return invalid("config, domain and out must be non-null");
  return guarded([&] {
    const auto& c = config->value;
    const std::string which = domain;
    const std::string part = split ? split : "all";
    if (part != "all" && part != "train" && part != "test")
      throw fedacross::Error(fedacross::ErrorCode::Config, "split must be all, train or test");
    if (which == "source") {
      if (part != "all") throw fedacross::Error(fedacross::ErrorCode::Config, "the source domain is not split");
      *out = new fa_dataset{fedacross::generate_domain(c.base, c.source, c.source_per_class, "source")};
      return;
    }
    for (const auto& [index, spec] : c.clients) {
      if (spec.id != which) continue;
      if (part == "all") {
        *out = new fa_dataset{fedacross::generate_domain(c.base, spec.domain, c.target_per_class, spec.id)};
        return;
      }
      const auto data = fedacross::make_data(c, c.seed);
      std::size_t i = 0;
      for (const auto& entry : c.clients) {
        if (entry.first == index) break;
        ++i;
      }
      *out = new fa_dataset{part == "train" ? data.targets[i].first : data.targets[i].second};
      return;
    }
    throw fedacross::Error(fedacross::ErrorCode::Config, "unknown domain '" + which + "'");
  });
}

fa_status fa_dataset_load(const char* path, fa_dataset** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] { *out = new fa_dataset{fedacross::load_dataset(path)}; });
}

fa_status fa_dataset_save(const fa_dataset* dataset, const char* path) {
  if (!dataset || !path) return invalid("dataset and path must be non-null");
  return guarded([&] { fedacross::save_dataset(dataset->value, path); });
}

fa_status fa_dataset_size(const fa_dataset* dataset, size_t* count) {
  if (!dataset || !count) return invalid("dataset and count must be non-null");
  *count = dataset->value.size();
  last_error.clear();
  return FA_OK;
}

void fa_dataset_free(fa_dataset* dataset) { delete dataset; }

}  // extern "C"
