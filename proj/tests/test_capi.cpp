// Exercises the shared library through its C header only.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedacross/fedacross.h"

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fedacross_capi_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  fa_string_free(s);
  return out;
}

fa_config* small_config() {
  fa_config* c = nullptr;
  REQUIRE(fa_config_default(&c) == FA_OK);
  const char* settings[][2] = {
      {"data.classes", "4"},          {"data.height", "8"},          {"data.width", "8"},
      {"data.source_per_class", "24"}, {"data.target_per_class", "24"}, {"model.hidden", "16"},
      {"model.embedding_dim", "6"},   {"server.epochs", "10"},       {"server.milestones", "8"},
      {"server.batch_size", "16"},    {"client.epochs", "10"},       {"client.milestones", "8"},
      {"client.batch_size", "8"},     {"experiment.k", "3"},
  };
  for (const auto& kv : settings) REQUIRE(fa_config_set(c, kv[0], kv[1]) == FA_OK);
  return c;
}

}  // namespace

TEST_CASE("config handles") {
  fa_config* c = nullptr;
  REQUIRE(fa_config_default(&c) == FA_OK);
  CHECK(fa_config_set(c, "experiment.k", "7") == FA_OK);
  char* v = nullptr;
  REQUIRE(fa_config_get(c, "experiment.k", &v) == FA_OK);
  CHECK(take(v) == "7");
  CHECK(fa_config_set(c, "experiment.nope", "1") == FA_ERR_CONFIG);
  CHECK(std::string(fa_last_error()).find("experiment.nope") != std::string::npos);
  CHECK(fa_config_validate(c) == FA_OK);
  CHECK(std::string(fa_last_error()).empty());
  char* text = nullptr;
  REQUIRE(fa_config_dump(c, &text) == FA_OK);
  CHECK(take(text).find("[experiment]") != std::string::npos);
  fa_config_free(c);
}

TEST_CASE("null arguments") {
  fa_config* c = nullptr;
  CHECK(fa_config_default(nullptr) == FA_ERR_INVALID_ARGUMENT);
  CHECK(fa_config_set(nullptr, "experiment.k", "1") == FA_ERR_INVALID_ARGUMENT);
  CHECK(fa_config_get(nullptr, "experiment.k", nullptr) == FA_ERR_INVALID_ARGUMENT);
  CHECK(fa_model_init(nullptr, 1, nullptr) == FA_ERR_INVALID_ARGUMENT);
  CHECK(fa_dataset_size(nullptr, nullptr) == FA_ERR_INVALID_ARGUMENT);
  CHECK(fa_config_load(nullptr, &c) == FA_ERR_INVALID_ARGUMENT);
  CHECK(std::string(fa_last_error()).size() > 0);
}

TEST_CASE("status names and exit codes") {
  CHECK(std::string(fa_status_name(FA_OK)) == "ok");
  CHECK(std::string(fa_status_name(FA_ERR_PROTOCOL)) == "protocol");
  CHECK(fa_exit_code(FA_OK) == 0);
  CHECK(fa_exit_code(FA_ERR_CONFIG) == 2);
  CHECK(fa_exit_code(FA_ERR_SCARCITY) == 3);
  CHECK(fa_exit_code(FA_ERR_DIVERGENCE) == 4);
  CHECK(fa_exit_code(FA_ERR_TRANSPORT) == 5);
  CHECK(fa_exit_code(FA_ERR_INTERNAL) == 1);
}

TEST_CASE("models") {
  fa_config* c = small_config();
  fa_model* m = nullptr;
  REQUIRE(fa_model_init(c, 3, &m) == FA_OK);
  size_t d = 0, e = 0, l = 0;
  REQUIRE(fa_model_dims(m, &d, &e, &l) == FA_OK);
  CHECK(d == 64);
  CHECK(e == 6);
  CHECK(l == 4);

  std::vector<double> x(2 * d, 0.25), z(2 * e, NAN);
  REQUIRE(fa_model_embed(m, x.data(), 2, z.data()) == FA_OK);
  for (double v : z) CHECK(std::isfinite(v));
  for (size_t j = 0; j < e; ++j) CHECK(z[j] == z[e + j]);

  const auto dir = scratch("model");
  const std::string path = (dir / "m.bin").string();
  REQUIRE(fa_model_save(m, path.c_str()) == FA_OK);
  fa_model* back = nullptr;
  REQUIRE(fa_model_load(path.c_str(), &back) == FA_OK);
  std::vector<double> z2(2 * e);
  REQUIRE(fa_model_embed(back, x.data(), 2, z2.data()) == FA_OK);
  CHECK(z == z2);
  CHECK(fa_model_load((dir / "missing.bin").string().c_str(), &back) != FA_OK);
  fa_model_free(back);
  fa_model_free(m);
  fa_config_free(c);
}

TEST_CASE("datasets and export") {
  fa_config* c = small_config();
  fa_dataset* all = nullptr;
  fa_dataset* train = nullptr;
  fa_dataset* test = nullptr;
  REQUIRE(fa_dataset_generate(c, "source", "all", &all) == FA_OK);
  REQUIRE(fa_dataset_generate(c, "client0", "train", &train) == FA_OK);
  REQUIRE(fa_dataset_generate(c, "client0", "test", &test) == FA_OK);
  size_t n = 0, a = 0, b = 0;
  fa_dataset_size(all, &n);
  fa_dataset_size(train, &a);
  fa_dataset_size(test, &b);
  CHECK(n == 96);
  CHECK(a + b == 96);
  CHECK(fa_dataset_generate(c, "nowhere", "all", &all) == FA_ERR_CONFIG);

  const auto dir = scratch("data");
  const std::string path = (dir / "d.bin").string();
  REQUIRE(fa_dataset_save(test, path.c_str()) == FA_OK);
  fa_dataset* back = nullptr;
  REQUIRE(fa_dataset_load(path.c_str(), &back) == FA_OK);
  size_t m = 0;
  fa_dataset_size(back, &m);
  CHECK(m == b);

  fa_model* model = nullptr;
  REQUIRE(fa_model_init(c, 1, &model) == FA_OK);
  REQUIRE(fa_export_embeddings(model, back, "baseline", (dir / "e.csv").string().c_str()) == FA_OK);
  CHECK(std::filesystem::exists(dir / "e.csv"));

  fa_model_free(model);
  fa_dataset_free(back);
  fa_dataset_free(all);
  fa_dataset_free(train);
  fa_dataset_free(test);
  fa_config_free(c);
}

TEST_CASE("simulate returns a summary") {
  fa_config* c = small_config();
  const auto dir = scratch("simulate");
  char* json = nullptr;
  REQUIRE(fa_simulate(c, dir.string().c_str(), &json) == FA_OK);
  const auto j = nlohmann::json::parse(take(json));
  CHECK(j.contains("runs"));
  CHECK(std::filesystem::exists(dir / "metrics.csv"));

  fa_config_set(c, "experiment.repetitions", "0");
  CHECK(fa_simulate(c, nullptr, nullptr) == FA_ERR_CONFIG);
  fa_config_free(c);
}
