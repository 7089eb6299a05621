#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedacross/bytes.hpp"
#include "fedacross/model.hpp"
#include "fedacross/prototypes.hpp"

namespace fedacross {

enum class MessageType : std::uint8_t {
  ClientHello = 1,
  ModelFull = 2,
  ModelDelta = 3,
  RoundConfig = 4,
  AdaptedUpload = 5,
  SourcePrototypes = 6,
  Ack = 7,
  ClientReport = 8,
};

const char* to_string(MessageType type);

struct ClientHello {
  std::string client_id;
  bool has_baseline = false;
  std::uint64_t baseline_version = 0;
  bool operator==(const ClientHello&) const = default;
};

struct ModelFull {
  std::uint64_t version = 0;
  ModelParams params;
  bool operator==(const ModelFull&) const = default;
};

/// Bitwise XOR of the IEEE-754 words of each parameter group against the
/// baseline. Unchanged groups are omitted, so baseline ^ delta == global
/// byte for byte.
struct ModelDelta {
  std::uint64_t base_version = 0;
  std::uint64_t version = 0;
  std::optional<std::vector<std::uint64_t>> phi;
  std::optional<std::vector<std::uint64_t>> psi;
  std::optional<std::vector<std::uint64_t>> nu;
  bool operator==(const ModelDelta&) const = default;
};

struct RoundConfig {
  std::uint32_t round = 0;
  std::uint32_t k = 0;
  std::vector<ClassId> classes;
  std::uint32_t epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  bool sampling_enabled = false;
  bool upstream = true;
  bool operator==(const RoundConfig&) const = default;
};

/// Only adaptation parameters and prototypes travel upstream; no samples.
struct AdaptedUpload {
  std::string client_id;
  AdaptationParams psi;
  PrototypeSet prototypes;
  std::uint64_t support_count = 0;
  bool operator==(const AdaptedUpload&) const = default;
};

struct SourcePrototypes {
  PrototypeSet prototypes;
  bool operator==(const SourcePrototypes&) const = default;
};

struct Ack {
  std::uint32_t code = 0;
  bool operator==(const Ack&) const = default;
};

/// Client-side evaluation on its local hold-back set.
struct ClientReport {
  std::string client_id;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  std::uint64_t labels_requested = 0;
  std::uint64_t support_size = 0;
  bool operator==(const ClientReport&) const = default;
};

using Message = std::variant<ClientHello, ModelFull, ModelDelta, RoundConfig, AdaptedUpload,
                             SourcePrototypes, Ack, ClientReport>;

MessageType type_of(const Message& msg);

/// Payload: format version byte followed by the fields, little-endian.
Bytes encode_payload(const Message& msg);
Message decode_payload(MessageType type, std::span<const std::uint8_t> payload);

/// Frame: 4-byte big-endian length of (tag + payload), 1-byte tag, payload.
Bytes encode_frame(const Message& msg);
Message decode_frame(std::span<const std::uint8_t> frame);
constexpr std::size_t kFrameHeaderSize = 4;
constexpr std::uint32_t kMaxFrameLength = 256u << 20;
std::uint32_t read_frame_length(std::span<const std::uint8_t, 4> header);

std::vector<std::uint64_t> group_words(const ModelParams& params, ParamGroup group);
void set_group_words(ModelParams& params, ParamGroup group, std::span<const std::uint64_t> words);

ModelDelta make_delta(const ModelParams& baseline, std::uint64_t base_version,
                      const ModelParams& global, std::uint64_t version);
ModelParams apply_delta(const ModelParams& baseline, const ModelDelta& delta);

}  // namespace fedacross
