#ifndef FEDACROSS_H
#define FEDACROSS_H

#include <stddef.h>
#include <stdint.h>

#if defined(FEDACROSS_BUILDING)
#define FA_API __attribute__((visibility("default")))
#else
#define FA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct fa_config fa_config;
typedef struct fa_model fa_model;
typedef struct fa_dataset fa_dataset;

typedef enum fa_status {
  FA_OK = 0,
  FA_ERR_INVALID_ARGUMENT = 1,
  FA_ERR_SHAPE = 2,
  FA_ERR_INDEX = 3,
  FA_ERR_DEGENERATE_UPDATE = 4,
  FA_ERR_STATISTICS = 5,
  FA_ERR_CONFIG = 6,
  FA_ERR_SCARCITY = 7,
  FA_ERR_STRATIFICATION = 8,
  FA_ERR_EMPTY_SUPPORT = 9,
  FA_ERR_NOT_READY = 10,
  FA_ERR_UNSUPPORTED = 11,
  FA_ERR_NO_TRAINABLE = 12,
  FA_ERR_DEGENERATE_STREAM = 13,
  FA_ERR_EXHAUSTION = 14,
  FA_ERR_WEIGHTING = 15,
  FA_ERR_PROTOCOL = 16,
  FA_ERR_TRANSPORT = 17,
  FA_ERR_DIVERGENCE = 18,
  FA_ERR_IO = 19,
  FA_ERR_SERIALIZATION = 20,
  FA_ERR_INTERNAL = 21
} fa_status;

/* Message of the last failing call on this thread; "" after success. */
FA_API const char* fa_last_error(void);
FA_API const char* fa_status_name(fa_status status);
/* Suggested process exit code: 0 ok, 2 config, 3 data scarcity,
   4 divergence, 5 transport, 1 otherwise. */
FA_API int fa_exit_code(fa_status status);
FA_API const char* fa_version(void);

/* Strings returned through char** are owned by the caller. */
FA_API void fa_string_free(char* s);

/* Configuration */
FA_API fa_status fa_config_default(fa_config** out);
FA_API fa_status fa_config_load(const char* path, fa_config** out);
/* key is "section.key", e.g. "experiment.k" or "client1.noise_std". */
FA_API fa_status fa_config_set(fa_config* config, const char* key, const char* value);
FA_API fa_status fa_config_get(const fa_config* config, const char* key, char** out_value);
FA_API fa_status fa_config_validate(const fa_config* config);
FA_API fa_status fa_config_dump(const fa_config* config, char** out_text);
FA_API void fa_config_free(fa_config* config);

/* Experiments. Each writes its artifacts into out_dir (NULL or "" skips
   files) and returns a JSON summary through out_json (may be NULL). */
FA_API fa_status fa_pretrain(const fa_config* config, const char* out_dir, fa_model** out_model, char** out_json);
FA_API fa_status fa_simulate(const fa_config* config, const char* out_dir, char** out_json);
FA_API fa_status fa_sweep_k(const fa_config* config, const char* out_dir, char** out_json);
FA_API fa_status fa_compare_strategies(const fa_config* config, const char* out_dir, char** out_json);

typedef void (*fa_listening_fn)(uint16_t port, void* user);
/* model may be NULL to pre-train from the config. */
FA_API fa_status fa_serve(const fa_config* config, const fa_model* model, const char* out_dir,
                          fa_listening_fn on_listening, void* user, char** out_json);
/* baseline may be NULL when the client holds no pre-installed model. */
FA_API fa_status fa_run_client(const fa_config* config, const char* client_id, const fa_model* baseline,
                               char** out_json);

FA_API fa_status fa_export_embeddings(const fa_model* model, const fa_dataset* dataset, const char* stage,
                                      const char* path);
FA_API fa_status fa_export_stages(const fa_config* config, const char* path);

/* Models */
FA_API fa_status fa_model_init(const fa_config* config, uint64_t seed, fa_model** out);
FA_API fa_status fa_model_load(const char* path, fa_model** out);
FA_API fa_status fa_model_save(const fa_model* model, const char* path);
FA_API fa_status fa_model_dims(const fa_model* model, size_t* input_dim, size_t* embedding_dim,
                               size_t* class_count);
/* rows x input_dim inputs, row-major; out receives rows x embedding_dim. */
FA_API fa_status fa_model_embed(const fa_model* model, const double* inputs, size_t rows, double* out);
FA_API void fa_model_free(fa_model* model);

/* Datasets. domain is "source" or a configured client id; split selects
   "all", "train" or "test". */
FA_API fa_status fa_dataset_generate(const fa_config* config, const char* domain, const char* split,
                                     fa_dataset** out);
FA_API fa_status fa_dataset_load(const char* path, fa_dataset** out);
FA_API fa_status fa_dataset_save(const fa_dataset* dataset, const char* path);
FA_API fa_status fa_dataset_size(const fa_dataset* dataset, size_t* count);
FA_API void fa_dataset_free(fa_dataset* dataset);

#ifdef __cplusplus
}
#endif

#endif /* FEDACROSS_H */
