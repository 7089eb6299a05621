#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "fedacross/harness.hpp"
#include "fedacross/model.hpp"

namespace testing {

/// Model with every adaptation field randomised, so all code paths carry signal.
inline fedacross::ModelParams random_model(fedacross::Rng& rng, std::size_t d, std::vector<std::size_t> hidden,
                                           std::size_t m, std::size_t L, double weight_std = 0.5) {
  fedacross::ModelShape shape{d, std::move(hidden), m, L};
  fedacross::InitConfig init;
  auto p = fedacross::init_model(shape, init, rng);
  for (auto& layer : p.phi.layers) {
    for (auto& w : layer.weights.data()) w = rng.normal(0.0, weight_std);
    for (auto& b : layer.bias) b = rng.normal(0.0, 0.1);
  }
  for (auto& w : p.psi.weights.data()) w = rng.normal(0.0, weight_std);
  p.psi.bias = rng.normal(0.0, 0.2);
  for (std::size_t i = 0; i < m; ++i) {
    p.psi.gamma[i] = rng.uniform(0.5, 1.5);
    p.psi.beta[i] = rng.normal(0.0, 0.2);
    p.psi.mu[i] = rng.normal(0.0, 0.2);
    p.psi.sigma[i] = rng.uniform(0.5, 2.0);
  }
  for (auto& w : p.nu.weights.data()) w = rng.normal(0.0, weight_std);
  for (auto& b : p.nu.bias) b = rng.normal(0.0, 0.1);
  return p;
}

inline fedacross::Matrix random_matrix(std::size_t rows, std::size_t cols, fedacross::Rng& rng) {
  fedacross::Matrix a(rows, cols);
  for (auto& v : a.data()) v = rng.normal();
  return a;
}

/// A fast experiment: 8x8 glyphs, 4 classes, short schedules.
inline fedacross::ExperimentConfig small_config() {
  auto c = fedacross::default_config();
  for (const char* kv : {"data.classes=4", "data.height=8", "data.width=8", "data.source_per_class=24",
                         "data.target_per_class=24", "model.hidden=16", "model.embedding_dim=6",
                         "server.epochs=20", "server.milestones=15", "server.batch_size=16",
                         "client.epochs=15", "client.milestones=10", "client.batch_size=8",
                         "experiment.k_values=0,3,5"})
    fedacross::apply_override(c, kv);
  return c;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedacross_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
