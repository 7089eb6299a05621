#include "fedacross/prototypes.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace fedacross {

std::uint64_t PrototypeSet::total_support() const {
  std::uint64_t n = 0;
  for (const auto& [c, p] : prototypes) n += p.support_count;
  return n;
}

PrototypeSet compute_prototypes(std::span<const LabeledEmbedding> embeddings) {
  if (embeddings.empty()) throw Error(ErrorCode::EmptySupport, "no embeddings to build prototypes from");
  PrototypeSet out;
  out.embedding_dim = embeddings.front().embedding.size();
  for (const auto& e : embeddings) {
    if (e.embedding.size() != out.embedding_dim)
      throw Error(ErrorCode::Shape, "embeddings differ in dimension");
    auto [it, inserted] = out.prototypes.try_emplace(e.label);
    Prototype& p = it->second;
    if (inserted) {
      p.class_id = e.label;
      p.vector.assign(out.embedding_dim, 0.0);
    }
    for (std::size_t j = 0; j < out.embedding_dim; ++j) p.vector[j] += e.embedding[j];
    ++p.support_count;
  }
  for (auto& [c, p] : out.prototypes) {
    for (double& v : p.vector) v /= static_cast<double>(p.support_count);
  }
  return out;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_query(std::span<const double> query, const PrototypeSet& protos) {
  if (protos.empty()) throw Error(ErrorCode::NotReady, "prototype set is empty");
  if (query.size() != protos.embedding_dim)
    throw Error(ErrorCode::Shape, "query dim " + std::to_string(query.size()) +
                                      " does not match prototype dim " +
                                      std::to_string(protos.embedding_dim));
}

}  // namespace

ClassId nearest_label(std::span<const double> query, const PrototypeSet& protos) {
  check_query(query, protos);
  ClassId best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  // Map iteration is in ascending class order, so strict < keeps the lowest index on ties.
  for (const auto& [c, p] : protos.prototypes) {
    const double d = squared_distance(query, p.vector);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

Prediction nearest_prototype(std::span<const double> query, const PrototypeSet& protos) {
  check_query(query, protos);
  Prediction out;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& [c, p] : protos.prototypes) {
    const double d = squared_distance(query, p.vector);
    out.distances.emplace_back(c, std::sqrt(d));
    if (d < best_d) {
      best_d = d;
      out.label = c;
    }
  }
  return out;
}

PrototypeSet fuse_prototypes(std::span<const PrototypeSet> sets) {
  PrototypeSet out;
  bool have_dim = false;
  for (const auto& set : sets) {
    if (set.empty()) continue;
    if (!have_dim) {
      out.embedding_dim = set.embedding_dim;
      have_dim = true;
    } else if (set.embedding_dim != out.embedding_dim) {
      throw Error(ErrorCode::Shape, "prototype sets differ in embedding dim");
    }
  }
  for (const auto& set : sets) {
    for (const auto& [c, p] : set.prototypes) {
      if (p.vector.size() != out.embedding_dim)
        throw Error(ErrorCode::Shape, "prototype vector dim mismatch");
      auto [it, inserted] = out.prototypes.try_emplace(c);
      Prototype& f = it->second;
      if (inserted) {
        f.class_id = c;
        f.vector.assign(out.embedding_dim, 0.0);
      }
      const auto w = static_cast<double>(p.support_count);
      for (std::size_t j = 0; j < out.embedding_dim; ++j) f.vector[j] += w * p.vector[j];
      f.support_count += p.support_count;
    }
  }
  for (auto& [c, f] : out.prototypes) {
    if (f.support_count == 0)
      throw Error(ErrorCode::Weighting, "class " + std::to_string(c) + " has zero total support");
    for (double& v : f.vector) v /= static_cast<double>(f.support_count);
  }
  return out;
}

void write(ByteWriter& w, const PrototypeSet& protos) {
  w.u32(static_cast<std::uint32_t>(protos.embedding_dim));
  w.u32(static_cast<std::uint32_t>(protos.prototypes.size()));
  for (const auto& [c, p] : protos.prototypes) {
    w.u32(c);
    w.u64(p.support_count);
    for (double v : p.vector) w.f64(v);
  }
}

PrototypeSet read_prototypes(ByteReader& r) {
  PrototypeSet out;
  out.embedding_dim = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Prototype p;
    p.class_id = r.u32();
    p.support_count = r.u64();
    p.vector.resize(out.embedding_dim);
    for (double& v : p.vector) v = r.f64();
    if (!out.prototypes.emplace(p.class_id, p).second)
      throw Error(ErrorCode::Serialization, "duplicate prototype class " + std::to_string(p.class_id));
  }
  return out;
}

void write_prototypes_csv(const PrototypeSet& protos, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "class,support_count";
  for (std::size_t j = 0; j < protos.embedding_dim; ++j) out << ",e" << j;
  out << '\n' << std::setprecision(17);
  for (const auto& [c, p] : protos.prototypes) {
    out << c << ',' << p.support_count;
    for (double v : p.vector) out << ',' << v;
    out << '\n';
  }
}

}  // namespace fedacross
