#include <doctest.h>

#include <cstdio>
#include <string>

#include "fedacross/numerics.hpp"

#ifndef FEDACROSS_RNG_DUMP
#error "FEDACROSS_RNG_DUMP must name the rng_dump helper"
#endif

namespace {

std::string run(const std::string& cmd) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  CHECK(pclose(p) == 0);
  return out;
}

std::string in_process(std::uint64_t seed) {
  fedacross::Rng rng(seed);
  std::string out;
  char line[256];
  for (int i = 0; i < 64; ++i) {
    const auto u = static_cast<unsigned long long>(rng.next_u64());
    const double a = rng.uniform();
    const double b = rng.normal();
    const std::size_t k = rng.index(1000);
    const auto d = static_cast<unsigned long long>(fedacross::derive_seed(seed, i));
    std::snprintf(line, sizeof line, "%llu %a %a %zu %llu\n", u, a, b, k, d);
    out += line;
  }
  return out;
}

}  // namespace

TEST_SUITE("process") {

TEST_CASE("generator streams agree across processes") {
  for (std::uint64_t seed : {0ull, 42ull, 18446744073709551615ull}) {
    CAPTURE(seed);
    const std::string cmd = std::string(FEDACROSS_RNG_DUMP) + " " + std::to_string(seed);
    const std::string a = run(cmd);
    CHECK(a == run(cmd));
    CHECK(a == in_process(seed));
  }
}

}  // TEST_SUITE
