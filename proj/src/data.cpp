#include "fedacross/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

namespace fedacross {

namespace {

constexpr std::uint32_t kDatasetMagic = 0x53444146;  // "FADS"
constexpr std::uint32_t kDatasetVersion = 1;
constexpr int kStrokesPerGlyph = 3;

struct Stroke {
  double x0, y0, x1, y1, thickness;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double segment_distance(double px, double py, const Stroke& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (s.x0 + t * dx);
  const double ey = py - (s.y0 + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

std::vector<Stroke> glyph_strokes(const BaseClasses& base, ClassId label) {
  Rng rng(derive_seed(base.glyph_seed, label));
  std::vector<Stroke> strokes;
  for (int s = 0; s < kStrokesPerGlyph; ++s) {
    strokes.push_back({rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85),
                       rng.uniform(0.15, 0.85), rng.uniform(0.05, 0.09)});
  }
  return strokes;
}

/// Bilinear lookup with edge clamping.
double bilinear_clamped(std::span<const double> img, std::uint32_t h, std::uint32_t w, double y,
                        double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::uint32_t>(std::floor(y));
  const auto x0 = static_cast<std::uint32_t>(std::floor(x));
  const std::uint32_t y1 = std::min(y0 + 1, h - 1);
  const std::uint32_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
  const double bottom = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
  return top * (1.0 - fy) + bottom * fy;
}

/// Bilinear lookup treating everything outside the grid as zero.
double bilinear_zero(std::span<const double> img, std::uint32_t h, std::uint32_t w, double y,
                     double x) {
  const double fy0 = std::floor(y);
  const double fx0 = std::floor(x);
  const double fy = y - fy0;
  const double fx = x - fx0;
  auto at = [&](double yy, double xx) {
    if (yy < 0 || xx < 0 || yy >= h || xx >= w) return 0.0;
    return img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
  };
  return (at(fy0, fx0) * (1 - fx) + at(fy0, fx0 + 1) * fx) * (1 - fy) +
         (at(fy0 + 1, fx0) * (1 - fx) + at(fy0 + 1, fx0 + 1) * fx) * fy;
}

void check_pixels(const Sample& x) {
  if (x.pixels.size() != static_cast<std::size_t>(x.height) * x.width)
    throw Error(ErrorCode::Shape, "sample pixel count does not match its height x width");
}

}  // namespace

Vector render_base(const BaseClasses& base, ClassId label, std::uint64_t index) {
  const auto strokes = glyph_strokes(base, label);
  Rng rng(derive_seed(derive_seed(base.variation_seed, label), index));
  const double shift_x = rng.uniform(-0.08, 0.08);
  const double shift_y = rng.uniform(-0.08, 0.08);
  const double scale = rng.uniform(0.9, 1.1);
  const double intensity = rng.uniform(0.75, 1.0);
  std::vector<Stroke> placed;
  for (const auto& s : strokes) {
    auto place = [&](double v, double shift) { return 0.5 + (v - 0.5) * scale + shift; };
    placed.push_back({place(s.x0 + rng.uniform(-0.03, 0.03), shift_x),
                      place(s.y0 + rng.uniform(-0.03, 0.03), shift_y),
                      place(s.x1 + rng.uniform(-0.03, 0.03), shift_x),
                      place(s.y1 + rng.uniform(-0.03, 0.03), shift_y),
                      s.thickness * rng.uniform(0.85, 1.15)});
  }
  constexpr double kSoftness = 0.06;
  Vector pixels(static_cast<std::size_t>(base.height) * base.width, 0.0);
  for (std::uint32_t i = 0; i < base.height; ++i) {
    for (std::uint32_t j = 0; j < base.width; ++j) {
      const double py = (i + 0.5) / base.height;
      const double px = (j + 0.5) / base.width;
      double v = 0.0;
      for (const auto& s : placed) {
        const double d = segment_distance(px, py, s);
        v = std::max(v, clamp01(1.0 - (d - s.thickness) / kSoftness));
      }
      pixels[i * base.width + j] = intensity * v;
    }
  }
  return pixels;
}

Vector apply_domain(std::span<const double> pixels, std::uint32_t height, std::uint32_t width,
                    const DomainConfig& domain, Rng& noise) {
  Vector out(pixels.begin(), pixels.end());
  if (domain.rotation_deg != 0.0) {
    const double theta = domain.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
    for (std::uint32_t i = 0; i < height; ++i) {
      for (std::uint32_t j = 0; j < width; ++j) {
        // Inverse-map each output pixel into the source grid.
        const double dy = i - cy, dx = j - cx;
        const double sy = cy + c * dy - s * dx;
        const double sx = cx + s * dy + c * dx;
        out[i * width + j] = bilinear_zero(pixels, height, width, sy, sx);
      }
    }
  }
  for (double& p : out) {
    if (domain.contrast_scale != 1.0) p = (p - 0.5) * domain.contrast_scale + 0.5;
    p += domain.brightness_shift;
    if (domain.noise_std > 0.0) p += noise.normal(0.0, domain.noise_std);
    p = clamp01(p);
  }
  return out;
}

Dataset generate_domain(const BaseClasses& base, const DomainConfig& domain,
                        std::size_t n_per_class, std::string domain_id) {
  if (base.class_count == 0) throw Error(ErrorCode::Config, "class count must be positive");
  if (base.height == 0 || base.width == 0) throw Error(ErrorCode::Config, "image size must be positive");
  if (n_per_class == 0) throw Error(ErrorCode::Config, "n_per_class must be at least 1");
  Dataset ds;
  ds.domain_id = std::move(domain_id);
  ds.class_count = base.class_count;
  ds.height = base.height;
  ds.width = base.width;
  Rng noise(domain.seed);
  std::uint64_t id = 0;
  for (ClassId c = 0; c < base.class_count; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const Vector clean = render_base(base, c, i);
      ds.samples.push_back(
          {apply_domain(clean, base.height, base.width, domain, noise), base.height, base.width, c, id++});
    }
  }
  return ds;
}

AugmentParams AugmentParams::draw(Rng& rng) {
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.crop_scale = rng.uniform(0.7, 1.0);
  p.crop_x = rng.uniform();
  p.crop_y = rng.uniform();
  p.brightness = rng.uniform(0.9, 1.1);
  p.contrast = rng.uniform(0.9, 1.1);
  return p;
}

Sample flip_horizontal(const Sample& x) {
  check_pixels(x);
  Sample out = x;
  for (std::uint32_t i = 0; i < x.height; ++i) {
    auto row = std::span(out.pixels).subspan(static_cast<std::size_t>(i) * x.width, x.width);
    std::reverse(row.begin(), row.end());
  }
  return out;
}

Sample apply_augment(const Sample& x, const AugmentParams& params) {
  check_pixels(x);
  Sample src = params.flip ? flip_horizontal(x) : x;
  const std::uint32_t h = x.height, w = x.width;
  Sample out = src;

  const double side = std::sqrt(std::clamp(params.crop_scale, 0.0, 1.0));
  const double ch = side * h, cw = side * w;
  const double y0 = std::clamp(params.crop_y, 0.0, 1.0) * (h - ch);
  const double x0 = std::clamp(params.crop_x, 0.0, 1.0) * (w - cw);
  for (std::uint32_t i = 0; i < h; ++i) {
    for (std::uint32_t j = 0; j < w; ++j) {
      const double sy = y0 + (i + 0.5) * ch / h - 0.5;
      const double sx = x0 + (j + 0.5) * cw / w - 0.5;
      out.pixels[i * w + j] = bilinear_clamped(src.pixels, h, w, sy, sx);
    }
  }

  if (params.brightness != 1.0) {
    for (double& p : out.pixels) p *= params.brightness;
  }
  if (params.contrast != 1.0) {
    double mean = 0.0;
    for (double p : out.pixels) mean += p;
    mean /= static_cast<double>(out.pixels.size());
    for (double& p : out.pixels) p = (p - mean) * params.contrast + mean;
  }
  for (double& p : out.pixels) p = clamp01(p);
  return out;
}

Sample augment(const Sample& x, Rng& rng) { return apply_augment(x, AugmentParams::draw(rng)); }

std::size_t SupportSet::size() const {
  std::size_t n = 0;
  for (const auto& [c, samples] : per_class) n += samples.size();
  return n;
}

std::vector<Sample> SupportSet::samples() const {
  std::vector<Sample> out;
  for (const auto& [c, samples] : per_class) out.insert(out.end(), samples.begin(), samples.end());
  return out;
}

void SupportSet::check_balanced() const {
  for (ClassId c : classes) {
    auto it = per_class.find(c);
    const std::size_t n = it == per_class.end() ? 0 : it->second.size();
    if (n != k) {
      throw Error(ErrorCode::Scarcity, "support set unbalanced: class " + std::to_string(c) +
                                           " holds " + std::to_string(n) + " of " + std::to_string(k));
    }
  }
  if (per_class.size() > classes.size())
    throw Error(ErrorCode::Scarcity, "support set holds classes outside its selection");
}

SupportSet build_support_set(const Dataset& dataset, std::size_t k,
                             std::span<const ClassId> classes, Rng& rng) {
  SupportSet out;
  out.k = k;
  out.classes.assign(classes.begin(), classes.end());
  for (ClassId c : classes) {
    if (c >= dataset.class_count)
      throw Error(ErrorCode::Index, "class " + std::to_string(c) + " outside label space");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      if (dataset.samples[i].label == c) idx.push_back(i);
    }
    if (idx.size() < k) {
      throw Error(ErrorCode::Scarcity, "class " + std::to_string(c) + " has " +
                                           std::to_string(idx.size()) + " samples, need " +
                                           std::to_string(k));
    }
    rng.shuffle(idx);
    auto& bucket = out.per_class[c];
    for (std::size_t i = 0; i < k; ++i) bucket.push_back(dataset.samples[idx[i]]);
  }
  return out;
}

std::vector<ClassId> all_classes(std::uint32_t class_count) {
  std::vector<ClassId> out(class_count);
  for (ClassId c = 0; c < class_count; ++c) out[c] = c;
  return out;
}

std::vector<ClassId> select_classes(std::uint32_t class_count, std::size_t count, Rng& rng) {
  if (count > class_count)
    throw Error(ErrorCode::Config, "cannot select " + std::to_string(count) + " of " +
                                       std::to_string(class_count) + " classes");
  std::vector<ClassId> all = all_classes(class_count);
  rng.shuffle(all);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  double test_fraction, Rng& rng) {
  if (train_fraction < 0.0 || test_fraction < 0.0 ||
      std::abs(train_fraction + test_fraction - 1.0) > 1e-9)
    throw Error(ErrorCode::Config, "split fractions must be non-negative and sum to 1");
  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->domain_id = dataset.domain_id;
    d->class_count = dataset.class_count;
    d->height = dataset.height;
    d->width = dataset.width;
  }
  std::map<ClassId, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) by_class[dataset.samples[i].label].push_back(i);
  for (auto& [c, idx] : by_class) {
    if (idx.size() < 2)
      throw Error(ErrorCode::Stratification,
                  "class " + std::to_string(c) + " has fewer than 2 samples; cannot stratify");
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::llround(idx.size() * train_fraction));
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? train : test).samples.push_back(dataset.samples[idx[i]]);
  }
  return {std::move(train), std::move(test)};
}

Dataset filter_classes(const Dataset& dataset, std::span<const ClassId> classes) {
  Dataset out = dataset;
  out.samples.clear();
  for (const auto& s : dataset.samples) {
    if (std::find(classes.begin(), classes.end(), s.label) != classes.end()) out.samples.push_back(s);
  }
  return out;
}

Matrix to_matrix(std::span<const Sample> samples) {
  if (samples.empty()) return {};
  const std::size_t d = samples.front().pixels.size();
  Matrix m(samples.size(), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].pixels.size() != d) throw Error(ErrorCode::Shape, "samples differ in dimension");
    std::copy(samples[i].pixels.begin(), samples[i].pixels.end(), m.row(i).begin());
  }
  return m;
}

std::vector<ClassId> labels_of(std::span<const Sample> samples) {
  std::vector<ClassId> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

Bytes serialize(const Dataset& dataset) {
  ByteWriter w;
  w.u32(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(dataset.height);
  w.u32(dataset.width);
  w.u32(dataset.class_count);
  w.u64(dataset.samples.size());
  w.str(dataset.domain_id);
  const std::size_t d = static_cast<std::size_t>(dataset.height) * dataset.width;
  for (const auto& s : dataset.samples) {
    if (s.pixels.size() != d) throw Error(ErrorCode::Shape, "sample size differs from dataset header");
    w.u64(s.id);
    w.u32(s.label);
    for (double p : s.pixels) w.f64(p);
  }
  return std::move(w).bytes();
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.u32() != kDatasetMagic) throw Error(ErrorCode::Serialization, "not a dataset container");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw Error(ErrorCode::Serialization, "unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.height = r.u32();
  ds.width = r.u32();
  ds.class_count = r.u32();
  const std::uint64_t count = r.u64();
  ds.domain_id = r.str();
  const std::size_t d = static_cast<std::size_t>(ds.height) * ds.width;
  if (count > r.remaining() / (12 + 8 * d))
    throw Error(ErrorCode::Serialization, "dataset count exceeds payload");
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample s;
    s.id = r.u64();
    s.label = r.u32();
    s.height = ds.height;
    s.width = ds.width;
    s.pixels.resize(d);
    for (double& p : s.pixels) p = r.f64();
    if (s.label >= ds.class_count) throw Error(ErrorCode::Serialization, "label outside label space");
    ds.samples.push_back(std::move(s));
  }
  r.expect_done("dataset container");
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  const Bytes bytes = serialize(dataset);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  const Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_dataset(bytes);
}

void write_manifest(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  out << "index,id,label\n";
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    out << i << ',' << dataset.samples[i].id << ',' << dataset.samples[i].label << '\n';
}

}  // namespace fedacross
