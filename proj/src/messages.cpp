#include "fedacross/messages.hpp"

#include <algorithm>

namespace fedacross {

namespace {

constexpr std::uint8_t kPayloadVersion = 1;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void write_words(ByteWriter& w, const std::optional<std::vector<std::uint64_t>>& words) {
  w.u8(words ? 1 : 0);
  if (!words) return;
  w.u32(static_cast<std::uint32_t>(words->size()));
  for (std::uint64_t v : *words) w.u64(v);
}

std::optional<std::vector<std::uint64_t>> read_words(ByteReader& r) {
  const std::uint8_t present = r.u8();
  if (present > 1) throw Error(ErrorCode::Serialization, "bad delta group flag");
  if (!present) return std::nullopt;
  const std::uint32_t n = r.u32();
  if (static_cast<std::size_t>(n) * 8 > r.remaining())
    throw Error(ErrorCode::Serialization, "delta group exceeds payload");
  std::vector<std::uint64_t> words(n);
  for (auto& v : words) v = r.u64();
  return words;
}

bool read_flag(ByteReader& r) {
  const std::uint8_t v = r.u8();
  if (v > 1) throw Error(ErrorCode::Serialization, "bad boolean byte");
  return v == 1;
}

void append_words(std::vector<std::uint64_t>& out, std::span<const double> values) {
  for (double v : values) out.push_back(bits_of(v));
}

}  // namespace

const char* to_string(MessageType type) {
  switch (type) {
    case MessageType::ClientHello: return "ClientHello";
    case MessageType::ModelFull: return "ModelFull";
    case MessageType::ModelDelta: return "ModelDelta";
    case MessageType::RoundConfig: return "RoundConfig";
    case MessageType::AdaptedUpload: return "AdaptedUpload";
    case MessageType::SourcePrototypes: return "SourcePrototypes";
    case MessageType::Ack: return "Ack";
    case MessageType::ClientReport: return "ClientReport";
  }
  return "Unknown";
}

MessageType type_of(const Message& msg) {
  return static_cast<MessageType>(msg.index() + 1);
}

Bytes encode_payload(const Message& msg) {
  ByteWriter w;
  w.u8(kPayloadVersion);
  std::visit(Overloaded{
                 [&](const ClientHello& m) {
                   w.str(m.client_id);
                   w.u8(m.has_baseline ? 1 : 0);
                   w.u64(m.baseline_version);
                 },
                 [&](const ModelFull& m) {
                   w.u64(m.version);
                   write(w, m.params);
                 },
                 [&](const ModelDelta& m) {
                   w.u64(m.base_version);
                   w.u64(m.version);
                   write_words(w, m.phi);
                   write_words(w, m.psi);
                   write_words(w, m.nu);
                 },
                 [&](const RoundConfig& m) {
                   w.u32(m.round);
                   w.u32(m.k);
                   w.u32(static_cast<std::uint32_t>(m.classes.size()));
                   for (ClassId c : m.classes) w.u32(c);
                   w.u32(m.epochs);
                   w.f64(m.lr);
                   w.u64(m.seed);
                   w.u8(m.sampling_enabled ? 1 : 0);
                   w.u8(m.upstream ? 1 : 0);
                 },
                 [&](const AdaptedUpload& m) {
                   w.str(m.client_id);
                   write(w, m.psi);
                   write(w, m.prototypes);
                   w.u64(m.support_count);
                 },
                 [&](const SourcePrototypes& m) { write(w, m.prototypes); },
                 [&](const Ack& m) { w.u32(m.code); },
                 [&](const ClientReport& m) {
                   w.str(m.client_id);
                   w.u64(m.correct);
                   w.u64(m.total);
                   w.u64(m.labels_requested);
                   w.u64(m.support_size);
                 },
             },
             msg);
  return std::move(w).bytes();
}

Message decode_payload(MessageType type, std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  const std::uint8_t version = r.u8();
  if (version != kPayloadVersion)
    throw Error(ErrorCode::Serialization, "unsupported payload version " + std::to_string(version));
  Message out;
  switch (type) {
    case MessageType::ClientHello: {
      ClientHello m;
      m.client_id = r.str();
      m.has_baseline = read_flag(r);
      m.baseline_version = r.u64();
      out = std::move(m);
      break;
    }
    case MessageType::ModelFull: {
      ModelFull m;
      m.version = r.u64();
      m.params = read_model(r);
      validate(m.params);
      out = std::move(m);
      break;
    }
    case MessageType::ModelDelta: {
      ModelDelta m;
      m.base_version = r.u64();
      m.version = r.u64();
      m.phi = read_words(r);
      m.psi = read_words(r);
      m.nu = read_words(r);
      out = std::move(m);
      break;
    }
    case MessageType::RoundConfig: {
      RoundConfig m;
      m.round = r.u32();
      m.k = r.u32();
      const std::uint32_t n = r.u32();
      if (static_cast<std::size_t>(n) * 4 > r.remaining())
        throw Error(ErrorCode::Serialization, "class list exceeds payload");
      for (std::uint32_t i = 0; i < n; ++i) m.classes.push_back(r.u32());
      m.epochs = r.u32();
      m.lr = r.f64();
      m.seed = r.u64();
      m.sampling_enabled = read_flag(r);
      m.upstream = read_flag(r);
      out = std::move(m);
      break;
    }
    case MessageType::AdaptedUpload: {
      AdaptedUpload m;
      m.client_id = r.str();
      m.psi = read_adaptation(r);
      m.prototypes = read_prototypes(r);
      m.support_count = r.u64();
      out = std::move(m);
      break;
    }
    case MessageType::SourcePrototypes: {
      out = SourcePrototypes{read_prototypes(r)};
      break;
    }
    case MessageType::Ack: {
      out = Ack{r.u32()};
      break;
    }
    case MessageType::ClientReport: {
      ClientReport m;
      m.client_id = r.str();
      m.correct = r.u64();
      m.total = r.u64();
      m.labels_requested = r.u64();
      m.support_size = r.u64();
      out = std::move(m);
      break;
    }
    default:
      throw Error(ErrorCode::Serialization,
                  "unknown message tag " + std::to_string(static_cast<int>(type)));
  }
  r.expect_done(to_string(type));
  return out;
}

Bytes encode_frame(const Message& msg) {
  const Bytes payload = encode_payload(msg);
  const auto length = static_cast<std::uint32_t>(payload.size() + 1);
  Bytes frame;
  frame.reserve(kFrameHeaderSize + length);
  for (int shift = 24; shift >= 0; shift -= 8) frame.push_back(static_cast<std::uint8_t>(length >> shift));
  frame.push_back(static_cast<std::uint8_t>(type_of(msg)));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

std::uint32_t read_frame_length(std::span<const std::uint8_t, 4> header) {
  return (static_cast<std::uint32_t>(header[0]) << 24) | (static_cast<std::uint32_t>(header[1]) << 16) |
         (static_cast<std::uint32_t>(header[2]) << 8) | static_cast<std::uint32_t>(header[3]);
}

Message decode_frame(std::span<const std::uint8_t> frame) {
  if (frame.size() < kFrameHeaderSize + 1) throw Error(ErrorCode::Serialization, "frame too short");
  const std::uint32_t length = read_frame_length(frame.first<4>());
  if (length == 0 || length > kMaxFrameLength || frame.size() != kFrameHeaderSize + length)
    throw Error(ErrorCode::Serialization, "frame length does not match payload");
  const auto tag = frame[kFrameHeaderSize];
  if (tag < 1 || tag > static_cast<std::uint8_t>(MessageType::ClientReport))
    throw Error(ErrorCode::Serialization, "unknown message tag " + std::to_string(tag));
  return decode_payload(static_cast<MessageType>(tag), frame.subspan(kFrameHeaderSize + 1));
}

std::vector<std::uint64_t> group_words(const ModelParams& params, ParamGroup group) {
  std::vector<std::uint64_t> out;
  switch (group) {
    case ParamGroup::Phi:
      append_words(out, flatten(params.phi));
      break;
    case ParamGroup::Psi: {
      const auto& psi = params.psi;
      append_words(out, psi.weights.data());
      out.push_back(bits_of(psi.bias));
      append_words(out, psi.gamma);
      append_words(out, psi.beta);
      append_words(out, psi.mu);
      append_words(out, psi.sigma);
      out.push_back(bits_of(psi.bn_momentum));
      out.push_back(bits_of(psi.bn_epsilon));
      break;
    }
    case ParamGroup::Nu:
      append_words(out, flatten(params.nu));
      break;
  }
  return out;
}

void set_group_words(ModelParams& params, ParamGroup group, std::span<const std::uint64_t> words) {
  if (words.size() != group_words(params, group).size())
    throw Error(ErrorCode::Shape, "delta group size does not match the baseline");
  Vector values(words.size());
  std::transform(words.begin(), words.end(), values.begin(), double_of);
  switch (group) {
    case ParamGroup::Phi:
      unflatten(params.phi, values);
      break;
    case ParamGroup::Psi: {
      auto& psi = params.psi;
      auto it = values.begin();
      auto take = [&](std::span<double> dst) {
        std::copy_n(it, dst.size(), dst.begin());
        it += static_cast<std::ptrdiff_t>(dst.size());
      };
      take(psi.weights.data());
      psi.bias = *it++;
      take(psi.gamma);
      take(psi.beta);
      take(psi.mu);
      take(psi.sigma);
      psi.bn_momentum = *it++;
      psi.bn_epsilon = *it++;
      break;
    }
    case ParamGroup::Nu:
      unflatten(params.nu, values);
      break;
  }
}

ModelDelta make_delta(const ModelParams& baseline, std::uint64_t base_version,
                      const ModelParams& global, std::uint64_t version) {
  ModelDelta delta{base_version, version, {}, {}, {}};
  auto diff = [&](ParamGroup g) -> std::optional<std::vector<std::uint64_t>> {
    auto a = group_words(baseline, g);
    const auto b = group_words(global, g);
    if (a.size() != b.size()) throw Error(ErrorCode::Shape, "global and baseline shapes differ");
    bool any = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] ^= b[i];
      any |= a[i] != 0;
    }
    if (!any) return std::nullopt;
    return a;
  };
  delta.phi = diff(ParamGroup::Phi);
  delta.psi = diff(ParamGroup::Psi);
  delta.nu = diff(ParamGroup::Nu);
  return delta;
}

ModelParams apply_delta(const ModelParams& baseline, const ModelDelta& delta) {
  ModelParams out = baseline;
  auto apply = [&](ParamGroup g, const std::optional<std::vector<std::uint64_t>>& words) {
    if (!words) return;
    auto base = group_words(baseline, g);
    if (base.size() != words->size())
      throw Error(ErrorCode::Shape, "delta group size does not match the baseline");
    for (std::size_t i = 0; i < base.size(); ++i) base[i] ^= (*words)[i];
    set_group_words(out, g, base);
  };
  apply(ParamGroup::Phi, delta.phi);
  apply(ParamGroup::Psi, delta.psi);
  apply(ParamGroup::Nu, delta.nu);
  return out;
}

}  // namespace fedacross
