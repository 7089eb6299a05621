#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedacross/model.hpp"
#include "fedacross/numerics.hpp"

namespace fedacross {

/// Single-channel image, pixels in [0, 1], flattened row-major (d = H * W).
struct Sample {
  Vector pixels;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  ClassId label = 0;
  std::uint64_t id = 0;

  bool operator==(const Sample&) const = default;
};

/// Class-conditional glyph family shared by every domain of one task. Glyph
/// geometry comes from glyph_seed; per-instance jitter from variation_seed.
struct BaseClasses {
  std::uint32_t class_count = 10;
  std::uint32_t height = 16;
  std::uint32_t width = 16;
  std::uint64_t glyph_seed = 7;
  std::uint64_t variation_seed = 11;
};

struct DomainConfig {
  double brightness_shift = 0.0;
  double contrast_scale = 1.0;
  double noise_std = 0.0;
  double rotation_deg = 0.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string domain_id;
  std::uint32_t class_count = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  bool operator==(const Dataset&) const = default;
};

/// Noise-free rendering of instance `index` of class `label`.
Vector render_base(const BaseClasses& base, ClassId label, std::uint64_t index);

/// Rotation (bilinear, zero fill), contrast about 0.5, brightness, additive
/// Gaussian noise, then clamp to [0, 1].
Vector apply_domain(std::span<const double> pixels, std::uint32_t height, std::uint32_t width,
                    const DomainConfig& domain, Rng& noise);

Dataset generate_domain(const BaseClasses& base, const DomainConfig& domain,
                        std::size_t n_per_class, std::string domain_id = "domain");

/// Explicit decisions of one augmentation draw.
struct AugmentParams {
  bool flip = false;
  double crop_scale = 1.0;  // area fraction of the crop window
  double crop_x = 0.5;      // window offset as a fraction of the free slack
  double crop_y = 0.5;
  double brightness = 1.0;  // multiplicative factor
  double contrast = 1.0;    // factor about the image mean

  static AugmentParams identity() { return {}; }
  static AugmentParams draw(Rng& rng);
};

Sample flip_horizontal(const Sample& x);
Sample apply_augment(const Sample& x, const AugmentParams& params);
/// Random flip (p = 0.5), resized crop (scale U[0.7, 1]), +-10% brightness and
/// contrast jitter. Labels are preserved; output is clamped to [0, 1].
Sample augment(const Sample& x, Rng& rng);
/// Inference-path transform: all randomness disabled.
inline const Sample& augment_deterministic(const Sample& x) { return x; }

struct SupportSet {
  std::size_t k = 0;
  std::vector<ClassId> classes;
  std::map<ClassId, std::vector<Sample>> per_class;

  std::size_t size() const;
  /// All samples in ascending class order.
  std::vector<Sample> samples() const;
  /// Throws unless every selected class holds exactly k samples.
  void check_balanced() const;
};

/// Exactly k samples per requested class, drawn without replacement.
SupportSet build_support_set(const Dataset& dataset, std::size_t k,
                             std::span<const ClassId> classes, Rng& rng);

/// Random subset of `count` classes out of [0, class_count), ascending.
std::vector<ClassId> select_classes(std::uint32_t class_count, std::size_t count, Rng& rng);
std::vector<ClassId> all_classes(std::uint32_t class_count);

/// Stratified split; per class round(n * train_fraction) go to train.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  double test_fraction, Rng& rng);

/// Rows restricted to the given classes.
Dataset filter_classes(const Dataset& dataset, std::span<const ClassId> classes);

Matrix to_matrix(std::span<const Sample> samples);
std::vector<ClassId> labels_of(std::span<const Sample> samples);

// Binary container: magic "FADS", version, H, W, L, count, domain id, then
// per sample: id, label, H * W pixels.
Bytes serialize(const Dataset& dataset);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
/// CSV manifest: index,id,label.
void write_manifest(const Dataset& dataset, const std::string& path);

}  // namespace fedacross
