#include "fedacross/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace fedacross {

void validate(const SamplerConfig& c) {
  if (!(c.ridge > 0.0)) throw Error(ErrorCode::Config, "sampler ridge must be positive");
  if (!(c.budget > 0.0 && c.budget <= 1.0)) throw Error(ErrorCode::Config, "sampler budget must lie in (0, 1]");
  if (!(c.q_min > 0.0 && c.q_min < c.q_max && c.q_max <= 1.0))
    throw Error(ErrorCode::Config, "sampler requires 0 < q_min < q_max <= 1");
  if (!(c.q_init > c.q_min && c.q_init <= c.q_max))
    throw Error(ErrorCode::Config, "sampler q_init must lie in (q_min, q_max]");
  if (!(c.rate_floor > 0.0)) throw Error(ErrorCode::Config, "sampler rate floor must be positive");
}

SamplerState make_sampler(std::size_t embedding_dim, const SamplerConfig& config) {
  validate(config);
  SamplerState s;
  s.inv_cov = Matrix::identity(embedding_dim);
  for (double& v : s.inv_cov.data()) v /= config.ridge;
  s.sum_outer = Matrix(embedding_dim, embedding_dim);
  s.q = config.q_init;
  s.config = config;
  return s;
}

double selection_probability(const SamplerState& state, std::span<const double> tau) {
  const std::size_t m = state.inv_cov.rows();
  if (tau.size() != m)
    throw Error(ErrorCode::Shape, "embedding dim " + std::to_string(tau.size()) +
                                      " does not match sampler dim " + std::to_string(m));
  if (state.t == 0) throw Error(ErrorCode::DegenerateStream, "no observations folded in yet");
  // tr(A B) for symmetric B is the element-wise inner product.
  const double trace = dot(state.inv_cov.data(), state.sum_outer.data()) / static_cast<double>(state.t);
  if (!(trace > 1e-12)) throw Error(ErrorCode::DegenerateStream, "trace normaliser <= 1e-12");
  const double quad = dot(tau, matvec(state.inv_cov, tau));
  return std::clamp(state.q * quad / trace, 0.0, 1.0);
}

StreamDecision observe_embedding(SamplerState& state, std::span<const double> tau, Rng& rng) {
  const std::size_t m = state.inv_cov.rows();
  if (tau.size() != m)
    throw Error(ErrorCode::Shape, "embedding dim " + std::to_string(tau.size()) +
                                      " does not match sampler dim " + std::to_string(m));
  ++state.t;
  for (std::size_t i = 0; i < m; ++i) {
    auto row = state.sum_outer.row(i);
    for (std::size_t j = 0; j < m; ++j) row[j] += tau[i] * tau[j];
  }
  StreamDecision d;
  d.q = state.q;
  d.probability = selection_probability(state, tau);
  d.keep = rng.bernoulli(d.probability);
  d.embedding.assign(tau.begin(), tau.end());
  if (d.keep) {
    state.inv_cov = sherman_morrison_update(state.inv_cov, tau);
    ++state.selected;
  }
  update_label_frequency(state);
  return d;
}

StreamDecision observe(SamplerState& state, const Sample& x, const ModelParams& model, Rng& rng) {
  const Vector tau = embed(model, augment_deterministic(x).pixels);
  return observe_embedding(state, tau, rng);
}

void update_label_frequency(SamplerState& state) {
  if (state.t == 0) return;
  const auto& c = state.config;
  const double rate = static_cast<double>(state.selected) / static_cast<double>(state.t);
  state.q = std::clamp(state.q * c.budget / std::max(rate, c.rate_floor), c.q_min, c.q_max);
}

DatasetStream::DatasetStream(Dataset dataset, std::uint64_t seed) : dataset_(std::move(dataset)) {
  order_.resize(dataset_.samples.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order_);
}

std::optional<Sample> DatasetStream::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  return dataset_.samples[order_[pos_++]];
}

GeneratorStream::GeneratorStream(BaseClasses base, DomainConfig domain, std::uint64_t seed,
                                 std::optional<std::uint64_t> limit)
    : base_(base), domain_(domain), rng_(seed), noise_(domain.seed), limit_(limit) {
  if (base_.class_count == 0) throw Error(ErrorCode::Config, "class count must be positive");
}

std::optional<Sample> GeneratorStream::next() {
  if (limit_ && produced_ >= *limit_) return std::nullopt;
  const auto label = static_cast<ClassId>(rng_.index(base_.class_count));
  // Instance indices beyond any finite dataset range keep streamed samples fresh.
  const std::uint64_t index = (1ULL << 32) + produced_;
  Sample s{apply_domain(render_base(base_, label, index), base_.height, base_.width, domain_, noise_),
           base_.height, base_.width, label, produced_};
  ++produced_;
  return s;
}

void write_telemetry_csv(std::span<const TelemetryRow> rows, const std::string& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  if (!append || out.tellp() == 0) out << "t,selected,q_t,p_t,keep\n";
  out << std::setprecision(17);
  for (const auto& r : rows)
    out << r.t << ',' << r.selected << ',' << r.q << ',' << r.p << ',' << (r.keep ? 1 : 0) << '\n';
}

PopulateResult populate_support(SampleStream& stream, const ModelParams& model, std::size_t k,
                                std::span<const ClassId> classes, const LabelOracle& oracle,
                                SamplerState& state, Rng& rng) {
  PopulateResult result;
  result.support.k = k;
  result.support.classes.assign(classes.begin(), classes.end());
  for (ClassId c : classes) result.support.per_class[c];
  if (k == 0 || classes.empty()) return result;

  std::size_t unfilled = classes.size();
  while (unfilled > 0) {
    std::optional<Sample> x = stream.next();
    if (!x) {
      std::ostringstream os;
      os << "stream exhausted after " << result.observed << " observations; fill:";
      for (ClassId c : classes) os << ' ' << c << '=' << result.support.per_class[c].size() << '/' << k;
      throw Error(ErrorCode::Exhaustion, os.str());
    }
    ++result.observed;
    const StreamDecision d = observe(state, *x, model, rng);
    result.telemetry.push_back({state.t, state.selected, d.q, d.probability, d.keep});
    if (!d.keep) continue;
    ++result.labels_requested;
    x->label = oracle(*x);
    auto it = result.support.per_class.find(x->label);
    if (it == result.support.per_class.end() || it->second.size() >= k) {
      ++result.discarded;
      continue;
    }
    it->second.push_back(std::move(*x));
    if (it->second.size() == k) --unfilled;
  }
  return result;
}

}  // namespace fedacross
