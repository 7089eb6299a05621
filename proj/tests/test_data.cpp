#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fedacross/data.hpp"
#include "helpers.hpp"

using namespace fedacross;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Shape;
}

Sample tiny(std::uint32_t h, std::uint32_t w, Rng& rng) {
  Sample s;
  s.height = h;
  s.width = w;
  s.label = 3;
  s.pixels.resize(h * w);
  for (double& v : s.pixels) v = rng.uniform();
  return s;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("identity domain reproduces the base rendering") {
  const BaseClasses base;
  const Dataset ds = generate_domain(base, DomainConfig{}, 3, "id");
  REQUIRE(ds.size() == 30);
  for (const auto& s : ds.samples) {
    CHECK(s.pixels == render_base(base, s.label, s.id % 3));
    for (double v : s.pixels) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(s.label < base.class_count);
  }
}

TEST_CASE("brightness shift is pointwise") {
  const BaseClasses base;
  DomainConfig d;
  d.brightness_shift = 0.2;
  const Dataset ds = generate_domain(base, d, 2);
  for (const auto& s : ds.samples) {
    const Vector ref = render_base(base, s.label, s.id % 2);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(s.pixels[i] == std::clamp(ref[i] + 0.2, 0.0, 1.0));
  }
}

TEST_CASE("domain seeds differ only through noise") {
  const BaseClasses base;
  DomainConfig a, b;
  a.brightness_shift = b.brightness_shift = 0.5;
  a.seed = 1;
  b.seed = 2;
  CHECK(generate_domain(base, a, 2).samples == generate_domain(base, b, 2).samples);

  a.noise_std = b.noise_std = 0.05;
  const Dataset da = generate_domain(base, a, 5), db = generate_domain(base, b, 5);
  // Background pixels sit at 0.5 after the shift, far from the clamp.
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const Vector ref = render_base(base, da.samples[i].label, da.samples[i].id % 5);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (ref[j] != 0.0) continue;
      const double diff = da.samples[i].pixels[j] - db.samples[i].pixels[j];
      sum += diff;
      sq += diff * diff;
      ++n;
    }
  }
  REQUIRE(n > 1000);
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean) / std::sqrt(2.0);
  CHECK(std::fabs(sd - 0.05) <= 0.005);
}

TEST_CASE("generation is reproducible and validates its input") {
  const BaseClasses base;
  DomainConfig d;
  d.noise_std = 0.1;
  d.rotation_deg = 15;
  d.seed = 9;
  CHECK(serialize(generate_domain(base, d, 4)) == serialize(generate_domain(base, d, 4)));
  BaseClasses none = base;
  none.class_count = 0;
  CHECK(code_of([&] { generate_domain(none, d, 4); }) == ErrorCode::Config);
}

TEST_CASE("augmentation") {
  Rng rng(1);
  const Sample x = tiny(6, 5, rng);
  SUBCASE("flip is an involution") {
    AugmentParams p;
    p.flip = true;
    CHECK(apply_augment(apply_augment(x, p), p).pixels == x.pixels);
    CHECK(flip_horizontal(flip_horizontal(x)) == x);
  }
  SUBCASE("symmetric image is flip invariant") {
    Sample s = x;
    for (std::uint32_t r = 0; r < s.height; ++r)
      for (std::uint32_t c = 0; c < s.width; ++c)
        s.pixels[r * s.width + c] = s.pixels[r * s.width + std::min(c, s.width - 1 - c)];
    CHECK(flip_horizontal(s).pixels == s.pixels);
  }
  SUBCASE("full centred crop is the identity") {
    const Sample y = apply_augment(x, AugmentParams::identity());
    for (std::size_t i = 0; i < x.pixels.size(); ++i) CHECK(std::fabs(y.pixels[i] - x.pixels[i]) <= 1e-12);
  }
  SUBCASE("random draws keep labels and range") {
    Rng r(2);
    for (int i = 0; i < 500; ++i) {
      const Sample y = augment(x, r);
      CHECK(y.label == x.label);
      CHECK(y.pixels.size() == x.pixels.size());
      for (double v : y.pixels) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    }
    const AugmentParams p = AugmentParams::draw(r);
    CHECK(p.crop_scale >= 0.7);
    CHECK(p.crop_scale <= 1.0);
    CHECK(p.brightness >= 0.9);
    CHECK(p.brightness <= 1.1);
  }
  SUBCASE("deterministic path is the identity") { CHECK(&augment_deterministic(x) == &x); }
}

TEST_CASE("support sets") {
  const BaseClasses base;
  const Dataset ds = generate_domain(base, DomainConfig{}, 10);
  SUBCASE("all samples of all classes is a permutation") {
    Rng rng(3);
    const auto classes = all_classes(base.class_count);
    const SupportSet s = build_support_set(ds, 10, classes, rng);
    std::vector<std::uint64_t> got, want;
    for (const auto& x : s.samples()) got.push_back(x.id);
    for (const auto& x : ds.samples) want.push_back(x.id);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK(got == want);
  }
  SUBCASE("k = 1") {
    Rng rng(4);
    const SupportSet s = build_support_set(ds, 1, all_classes(10), rng);
    CHECK(s.size() == 10);
    for (const auto& [c, xs] : s.per_class) {
      CHECK(xs.size() == 1);
      CHECK(xs[0].label == c);
    }
    CHECK_NOTHROW(s.check_balanced());
  }
  SUBCASE("draws are uniform within each class") {
    std::map<std::uint64_t, int> hits;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const SupportSet s = build_support_set(ds, 3, all_classes(10), rng);
      s.check_balanced();
      std::set<std::uint64_t> unique;
      for (const auto& x : s.samples()) {
        ++hits[x.id];
        unique.insert(x.id);
      }
      REQUIRE(unique.size() == 30);
    }
    // 10 samples per class, expected 30 hits each, 9 degrees of freedom.
    const double critical = 21.666;
    for (ClassId c = 0; c < 10; ++c) {
      double chi2 = 0.0;
      for (const auto& x : ds.samples)
        if (x.label == c) chi2 += (hits[x.id] - 30.0) * (hits[x.id] - 30.0) / 30.0;
      CAPTURE(c);
      CHECK(chi2 < critical);
    }
  }
  SUBCASE("scarcity names the class") {
    Rng rng(5);
    const ClassId classes[] = {2};
    try {
      build_support_set(ds, 11, classes, rng);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Scarcity);
      CHECK(std::string(e.what()).find("class 2") != std::string::npos);
    }
  }
  SUBCASE("seeded determinism") {
    Rng a(6), b(6);
    CHECK(build_support_set(ds, 4, all_classes(10), a).samples() ==
          build_support_set(ds, 4, all_classes(10), b).samples());
  }
  SUBCASE("class selection") {
    Rng rng(7);
    const auto sel = select_classes(10, 4, rng);
    CHECK(sel.size() == 4);
    CHECK(std::is_sorted(sel.begin(), sel.end()));
    CHECK(code_of([&] { select_classes(3, 4, rng); }) == ErrorCode::Config);
  }
}

TEST_CASE("stratified split") {
  const BaseClasses base;
  const Dataset ds = generate_domain(base, DomainConfig{}, 100);
  Rng rng(8);
  SUBCASE("everything to train") {
    const auto [train, test] = split(ds, 1.0, 0.0, rng);
    CHECK(test.empty());
    CHECK(train.size() == ds.size());
  }
  SUBCASE("80/20 per class and disjoint") {
    const auto [train, test] = split(ds, 0.8, 0.2, rng);
    std::map<ClassId, int> tr, te;
    std::set<std::uint64_t> ids;
    for (const auto& x : train.samples) {
      ++tr[x.label];
      ids.insert(x.id);
    }
    for (const auto& x : test.samples) {
      ++te[x.label];
      CHECK(ids.count(x.id) == 0);
    }
    for (ClassId c = 0; c < 10; ++c) {
      CHECK(tr[c] == 80);
      CHECK(te[c] == 20);
    }
  }
  SUBCASE("determinism") {
    Rng a(9), b(9);
    CHECK(split(ds, 0.5, 0.5, a) == split(ds, 0.5, 0.5, b));
  }
  SUBCASE("errors") {
    Dataset lonely = ds;
    lonely.samples.erase(std::remove_if(lonely.samples.begin(), lonely.samples.end(),
                                        [](const Sample& s) { return s.label == 4 && s.id % 100 != 0; }),
                         lonely.samples.end());
    CHECK(code_of([&] { split(lonely, 0.5, 0.5, rng); }) == ErrorCode::Stratification);
    CHECK(code_of([&] { split(ds, 0.5, 0.4, rng); }) == ErrorCode::Config);
  }
}

TEST_CASE("dataset container") {
  const BaseClasses base;
  DomainConfig d;
  d.noise_std = 0.05;
  const Dataset ds = generate_domain(base, d, 3, "target-a");
  const Bytes bytes = serialize(ds);
  const Dataset back = deserialize_dataset(bytes);
  CHECK(back == ds);
  CHECK(serialize(back) == bytes);

  Bytes bad = bytes;
  bad[0] = 'X';
  CHECK(code_of([&] { deserialize_dataset(bad); }) == ErrorCode::Serialization);
  CHECK(code_of([&] { deserialize_dataset(Bytes(bytes.begin(), bytes.begin() + 20)); }) == ErrorCode::Serialization);

  const auto dir = testing::scratch("dataset_io");
  save_dataset(ds, (dir / "d.bin").string());
  CHECK(load_dataset((dir / "d.bin").string()) == ds);
  write_manifest(ds, (dir / "m.csv").string());
  const std::string manifest = testing::slurp(dir / "m.csv");
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == static_cast<long>(ds.size() + 1));
  CHECK(manifest.rfind("index,id,label\n", 0) == 0);
}

TEST_CASE("matrix helpers") {
  const Dataset ds = generate_domain(BaseClasses{}, DomainConfig{}, 2);
  const Matrix m = to_matrix(ds.samples);
  CHECK(m.rows() == ds.size());
  CHECK(m.cols() == 256);
  CHECK(labels_of(ds.samples).size() == ds.size());
  const ClassId keep[] = {1, 3};
  const Dataset f = filter_classes(ds, keep);
  CHECK(f.size() == 4);
  for (const auto& s : f.samples) CHECK((s.label == 1 || s.label == 3));
}

}  // TEST_SUITE
