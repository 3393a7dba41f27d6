#include <doctest.h>

#include <set>

#include "eqinv/error.hpp"
#include "eqinv/transforms.hpp"
#include "oracles/oracles.hpp"

using namespace eqinv;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  Image img(h, w, 3);
  for (auto& p : img.pixels) p = static_cast<float>(uniform01(rng));
  return img;
}

TransformSpec quarter(int turns) {
  TransformSpec s;
  s.rotation = turns;
  return s;
}

}  // namespace

TEST_CASE("quarter turn of a 2x2 image") {
  Image img(2, 2, 1);
  img.at(0, 0, 0) = 1;  // a
  img.at(0, 1, 0) = 2;  // b
  img.at(1, 0, 0) = 3;  // c
  img.at(1, 1, 0) = 4;  // d
  const Image out = apply_transform(img, quarter(1));
  CHECK(out.at(0, 0, 0) == 2);
  CHECK(out.at(0, 1, 0) == 4);
  CHECK(out.at(1, 0, 0) == 1);
  CHECK(out.at(1, 1, 0) == 3);
}

TEST_CASE("quarter turns form C4") {
  for (std::size_t size : {2u, 7u, 8u}) {
    const Image img = random_image(size, size, size);
    // identity
    CHECK(apply_transform(img, TransformSpec{}) == img);
    // closure and composition
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        const Image ab = apply_transform(apply_transform(img, quarter(a)), quarter(b));
        CHECK(ab == apply_transform(img, quarter((a + b) % 4)));
      }
    }
    // inverses
    CHECK(apply_transform(apply_transform(img, quarter(1)), quarter(3)) == img);
    CHECK(apply_transform(apply_transform(img, quarter(2)), quarter(2)) == img);
  }
}

TEST_CASE("identity is exact for any shape") {
  for (auto [h, w] : {std::pair{1u, 1u}, std::pair{3u, 5u}, std::pair{16u, 9u}}) {
    const Image img = random_image(h, w, h * 31 + w);
    CHECK(apply_transform(img, TransformSpec{}) == img);
  }
}

TEST_CASE("warp matches per-pixel inverse mapping") {
  const TransformSet full = build_preset("affine972");
  const Image img = random_image(9, 7, 3);
  auto read = [&](std::size_t ch) {
    return [&img, ch](long y, long x) {
      return static_cast<long double>(
          img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch));
    };
  };
  for (std::size_t i = 1; i < full.size(); i += 37) {
    const TransformSpec& spec = full[i];
    const auto a = linear_part(spec);
    const long double det = (long double)a[0] * a[3] - (long double)a[1] * a[2];
    const long double inv[4] = {a[3] / det, -a[1] / det, -a[2] / det, a[0] / det};
    const Image out = apply_transform(img, spec);
    for (long y = 0; y < 9; ++y) {
      for (long x = 0; x < 7; ++x) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const long double want = oracle::warp_pixel(read(ch), 9, 7, inv, spec.translate_x * 7,
                                                      spec.translate_y * 9, y, x);
          CHECK(out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch) ==
                doctest::Approx(static_cast<double>(want)).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("downscaled constant image keeps the centre and zeroes the border") {
  Image img(16, 16, 1, 0.5f);
  TransformSpec s;
  s.scale = 0.67;
  const Image out = apply_transform(img, s);
  CHECK(out.at(8, 8, 0) == doctest::Approx(0.5));
  CHECK(out.at(7, 7, 0) == doctest::Approx(0.5));
  CHECK(out.at(0, 0, 0) == 0.0f);
  CHECK(out.at(15, 8, 0) == 0.0f);
}

TEST_CASE("quarter turn on a non-square image uses the warp") {
  const Image img = random_image(6, 4, 9);
  const Image out = apply_transform(img, quarter(2));
  // 180 degrees about the centre is still a permutation for any shape.
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      CHECK(out.at(y, x, 1) == doctest::Approx(img.at(5 - y, 3 - x, 1)).epsilon(1e-6));
    }
  }
}

TEST_CASE("preset sizes and identity first") {
  const std::pair<const char*, std::size_t> sizes[] = {
      {"m3", 3}, {"m4", 4}, {"m8", 8}, {"m12", 12}, {"m16", 16},
      {"m20", 20}, {"m24", 24}, {"affine972", 4 * 3 * 3 * 3 * 3 * 3}};
  for (auto [name, n] : sizes) {
    const TransformSet set = build_preset(name);
    CHECK(set.size() == n);
    CHECK(set[0].is_identity());
    std::set<std::string> seen;
    for (const auto& s : set.specs()) seen.insert(format_spec(s));
    CHECK(seen.size() == n);
  }
  CHECK(build_preset("M16").size() == 16);
  CHECK_THROWS_AS(build_preset("m5"), ConfigError);
}

TEST_CASE("m4 is the four rotations") {
  const TransformSet set = build_preset("m4");
  for (int r = 0; r < 4; ++r) {
    CHECK(set[static_cast<std::size_t>(r)].rotation == r);
    CHECK(set[static_cast<std::size_t>(r)].is_quarter_turn());
  }
}

TEST_CASE("m16 composition") {
  const TransformSet set = build_preset("m16");
  std::size_t small = 0;
  for (const auto& s : set.specs()) {
    CHECK(s.translate_x == 0.0);
    CHECK(s.shear == 0.0);
    if (s.scale != 1.0) {
      CHECK(s.scale == 0.67);
      CHECK(s.aspect_ratio == 1.0);
      ++small;
    }
  }
  CHECK(small == 4);
}

TEST_CASE("affine subset") {
  const TransformSet full = build_preset("affine972");
  Rng rng = make_rng(7, 0);
  const TransformSet sub = sample_affine_subset(full, 10, rng);
  REQUIRE(sub.size() == 10);
  CHECK(sub[0].is_identity());
  std::size_t last = 0;
  for (std::size_t i = 1; i < sub.size(); ++i) {
    std::size_t at = 0;
    while (!(full[at] == sub[i])) ++at;
    CHECK(at > last);
    last = at;
  }
  Rng again = make_rng(7, 0);
  CHECK(sample_affine_subset(full, 10, again).specs() == sub.specs());

  Rng all = make_rng(1, 0);
  CHECK(sample_affine_subset(full, 972, all).specs() == full.specs());
  Rng r4 = make_rng(1, 0);
  CHECK_THROWS_AS(sample_affine_subset(build_preset("m4"), 5, r4), ArgumentError);
}

TEST_CASE("expand_batch layout") {
  const TransformSet set = build_preset("m4");
  std::vector<Image> imgs = {random_image(8, 8, 1), random_image(8, 8, 2)};
  const std::vector<std::size_t> labels = {3, 5};
  const std::vector<std::size_t> ids = {10, 11};
  const ExpandedBatch eb = expand_batch(imgs, labels, ids, set);
  CHECK(eb.images.size() == 8);
  CHECK(eb.proxy_labels == std::vector<std::size_t>{0, 0, 1, 1, 2, 2, 3, 3});
  CHECK(eb.class_labels == std::vector<std::size_t>{3, 5, 3, 5, 3, 5, 3, 5});
  CHECK(eb.instance_ids == std::vector<std::size_t>{10, 11, 10, 11, 10, 11, 10, 11});
  CHECK(eb.images[0] == imgs[0]);
  CHECK(eb.images[3] == apply_transform(imgs[1], set[1]));

  const TransformSet m16 = build_preset("m16");
  const std::vector<Image> three = {random_image(8, 8, 4), random_image(8, 8, 5),
                                    random_image(8, 8, 6)};
  const std::vector<std::size_t> l3 = {0, 1, 2};
  const ExpandedBatch e16 = expand_batch(three, l3, l3, m16);
  std::vector<std::size_t> counts(16, 0);
  for (std::size_t i = 0; i < e16.class_labels.size(); ++i) {
    CHECK(e16.class_labels[i] == l3[i % 3]);
    ++counts[e16.proxy_labels[i]];
  }
  for (auto c : counts) CHECK(c == 3);
}

TEST_CASE("spec validation") {
  TransformSpec s;
  s.rotation = 4;
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s.rotation = 0;
  s.scale = 0;
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  CHECK_THROWS_AS(TransformSet("x", {TransformSpec{}}), ArgumentError);
  CHECK_THROWS_AS(TransformSet("x", {quarter(1), TransformSpec{}}), ArgumentError);
  CHECK_THROWS_AS(TransformSet("x", {TransformSpec{}, quarter(1), quarter(1)}), ArgumentError);
}

TEST_CASE("dump lists one line per spec") {
  const std::string text = dump_transforms(build_preset("m16"));
  CHECK(std::count(text.begin(), text.end(), '\n') == 17);
  CHECK(text.rfind("index,rotation_deg", 0) == 0);
}
