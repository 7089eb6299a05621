#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedacross/bytes.hpp"
#include "fedacross/model.hpp"

namespace fedacross {

struct Prototype {
  ClassId class_id = 0;
  Vector vector;
  std::uint64_t support_count = 0;

  bool operator==(const Prototype&) const = default;
};

/// At most one prototype per class, all of dimension embedding_dim.
struct PrototypeSet {
  std::map<ClassId, Prototype> prototypes;
  std::size_t embedding_dim = 0;

  bool empty() const { return prototypes.empty(); }
  std::size_t size() const { return prototypes.size(); }
  std::uint64_t total_support() const;
  bool operator==(const PrototypeSet&) const = default;
};

struct LabeledEmbedding {
  Vector embedding;
  ClassId label = 0;
};

/// Per-class arithmetic mean of the embeddings.
PrototypeSet compute_prototypes(std::span<const LabeledEmbedding> embeddings);

struct Prediction {
  ClassId label = 0;
  /// Euclidean distance to each prototype, in class order.
  std::vector<std::pair<ClassId, double>> distances;
};

/// Nearest prototype in L2; ties go to the lowest class index.
Prediction nearest_prototype(std::span<const double> query, const PrototypeSet& protos);
/// Label only; skips the square roots.
ClassId nearest_label(std::span<const double> query, const PrototypeSet& protos);

/// Support-count-weighted mean per class; counts are summed.
PrototypeSet fuse_prototypes(std::span<const PrototypeSet> sets);

// Fixed-width entries: class id, count, vector. Size depends on (L, m) only.
void write(ByteWriter& w, const PrototypeSet& protos);
PrototypeSet read_prototypes(ByteReader& r);

/// CSV: class,support_count,e0..e{m-1}.
void write_prototypes_csv(const PrototypeSet& protos, const std::string& path);

}  // namespace fedacross
