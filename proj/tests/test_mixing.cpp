#include "comodal/errors.hpp"
#include "comodal/eval_access.hpp"
#include "comodal/mixing.hpp"
#include "doctest.h"
#include "support.hpp"

#include <algorithm>
#include <cmath>

using namespace comodal;

namespace {

struct Pair {
  SourceSample source;
  TargetScene target;
};

Pair make_pair(std::uint64_t seed) {
  SceneGenConfig cfg = SceneGenConfig::defaults();
  cfg.n_rays = 600;
  return {make_source_sample(cfg, seed, SplitId::source_train, 0),
          make_target_scene(cfg, seed, SplitId::target_train, 0)};
}

/// Bounding box of the ones; returns false when the mask is empty.
bool ones_box(const MixMask& m, int& top, int& left, int& bottom, int& right) {
  top = m.mask.height;
  left = m.mask.width;
  bottom = right = -1;
  for (int r = 0; r < m.mask.height; ++r)
    for (int c = 0; c < m.mask.width; ++c)
      if (m.mask.at(r, c)) {
        top = std::min(top, r);
        left = std::min(left, c);
        bottom = std::max(bottom, r);
        right = std::max(right, c);
      }
  return bottom >= 0;
}

}  // namespace

TEST_CASE("near-full area range covers almost the whole image") {
  const MixMask m = make_region_mask(64, 64, 1, {0.999, 0.999});
  CHECK(m.ones() >= 4094);
}

TEST_CASE("quarter-area rectangles land within one row or column of 1024 pixels") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const MixMask m = make_region_mask(64, 64, seed, {0.25, 0.25});
    int top, left, bottom, right;
    REQUIRE(ones_box(m, top, left, bottom, right));
    const int h = bottom - top + 1;
    const int w = right - left + 1;
    CHECK(m.ones() == h * w);  // a single filled rectangle
    CHECK(std::abs(m.ones() - 1024) <= std::max(h, w));
  }
}

TEST_CASE("region mask area stays inside the requested range") {
  Rng rng = make_rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const double lo = uniform(rng, 0.05, 0.6);
    const double hi = uniform(rng, lo, 0.95);
    const int h = 16 + uniform_index(rng, 80);
    const int w = 16 + uniform_index(rng, 80);
    const MixMask m = make_region_mask(h, w, rng(), {lo, hi});
    int top, left, bottom, right;
    REQUIRE(ones_box(m, top, left, bottom, right));
    const int bh = bottom - top + 1;
    const int bw = right - left + 1;
    CHECK(m.ones() == bh * bw);
    // Integer rounding can move the area by at most one row plus one column.
    const double slack = bh + bw + 1;
    CHECK(m.ones() >= lo * h * w - slack);
    CHECK(m.ones() <= hi * h * w + slack);
  }
}

TEST_CASE("region masks are deterministic and validate their range") {
  CHECK(make_region_mask(32, 48, 5, {0.2, 0.5}).mask == make_region_mask(32, 48, 5, {0.2, 0.5}).mask);
  CHECK_THROWS_AS(make_region_mask(8, 8, 0, {0.0, 0.5}), ConfigError);
  CHECK_THROWS_AS(make_region_mask(8, 8, 0, {0.6, 0.5}), ConfigError);
  CHECK_THROWS_AS(make_region_mask(8, 8, 0, {0.2, 1.0}), ConfigError);
}

TEST_CASE("class masks") {
  LabelMap labels(4, 5, 1, 0);
  for (std::size_t i = 0; i < labels.data.size(); ++i) labels.data[i] = static_cast<int>(i % 3);
  SUBCASE("all present classes give an all-ones mask") {
    CHECK(make_class_mask(labels, {0, 1, 2}).ones() == 20);
  }
  SUBCASE("absent class is an empty-mask error") {
    LabelMap constant(4, 4, 1, 1);
    CHECK_THROWS_AS(make_class_mask(constant, {3}), EmptyMaskError);
  }
  SUBCASE("random label maps match a membership loop") {
    Rng rng = make_rng(12);
    for (int t = 0; t < 20; ++t) {
      LabelMap l(9, 11, 1);
      for (auto& v : l.data) v = uniform_index(rng, 6);
      const auto chosen = choose_mix_classes(l, rng);
      const MixMask m = make_class_mask(l, chosen);
      CHECK(m.kind == MaskKind::class_level);
      for (std::size_t i = 0; i < l.data.size(); ++i) {
        const bool in = std::find(chosen.begin(), chosen.end(), l.data[i]) != chosen.end();
        CHECK(m.mask.data[i] == (in ? 1 : 0));
      }
    }
  }
}

TEST_CASE("default class choice takes half of the present classes") {
  Rng rng = make_rng(2);
  LabelMap l(4, 4, 1, 0);
  l.data = {0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5, 0, 0, 0, 0};
  for (int t = 0; t < 20; ++t) {
    const auto chosen = choose_mix_classes(l, rng);
    CHECK(chosen.size() == 3);
    CHECK(std::is_sorted(chosen.begin(), chosen.end()));
  }
  LabelMap single(2, 2, 1, 4);
  CHECK(choose_mix_classes(single, rng) == std::vector<int>{4});
}

TEST_CASE("cutmix with all-ones and all-zeros masks") {
  const Pair p = make_pair(3);
  const int h = p.source.image.height;
  const int w = p.source.image.width;
  const MixedImageSample ones = cutmix_images(p.source, p.target, {Grid<std::uint8_t>(h, w, 1, 1)});
  CHECK(ones.image == p.source.image);
  CHECK(std::all_of(ones.mask_at_points.begin(), ones.mask_at_points.end(), [](auto v) { return v == 1; }));
  const MixedImageSample zeros = cutmix_images(p.source, p.target, {Grid<std::uint8_t>(h, w, 1, 0)});
  CHECK(zeros.image == p.target.image());
  CHECK(zeros.parent_target == &p.target);
}

TEST_CASE("cutmix composition matches a per-pixel oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Pair p = make_pair(seed);
    const MixMask m = make_region_mask(64, 64, seed, {0.2, 0.5});
    const MixedImageSample mixed = cutmix_images(p.source, p.target, m);
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c)
        for (int k = 0; k < 3; ++k) {
          const double expect = m.mask.at(r, c) ? p.source.image.at(r, c, k) : p.target.image().at(r, c, k);
          CHECK(mixed.image.at(r, c, k) == expect);
        }
    const auto& pix = p.target.pixel_of_point();
    REQUIRE(mixed.mask_at_points.size() == pix.size());
    int in = 0;
    for (std::size_t i = 0; i < pix.size(); ++i) {
      CHECK(mixed.mask_at_points[i] == m.mask.at(pix[i].row, pix[i].col));
      CHECK(mixed.source_labels_at_points[i] == p.source.labels.at(pix[i].row, pix[i].col));
      in += mixed.mask_at_points[i];
    }
    // The two branches partition the points.
    const auto out = std::count(mixed.mask_at_points.begin(), mixed.mask_at_points.end(), 0);
    CHECK(in + out == static_cast<long>(pix.size()));
  }
}

TEST_CASE("cutmix rejects shape mismatches") {
  const Pair p = make_pair(1);
  CHECK_THROWS_AS(cutmix_images(p.source, p.target, {Grid<std::uint8_t>(32, 64, 1, 0)}), ConfigError);
  SourceSample small{Image(8, 8, 3), LabelMap(8, 8, 1)};
  CHECK_THROWS_AS(cutmix_images(small, p.target, {Grid<std::uint8_t>(8, 8, 1, 0)}), ConfigError);
}

TEST_CASE("mixed clouds concatenate in order") {
  Rng rng = make_rng(4);
  const Matrix a = testing::random_matrix(rng, 100, 3);
  const Matrix b = testing::random_matrix(rng, 150, 3);
  std::vector<int> la(100), lb(150);
  for (auto& v : la) v = uniform_index(rng, 6);
  for (auto& v : lb) v = uniform_index(rng, 6);
  const MixedCloudSample m = mix_pointclouds(a, la, b, lb);
  CHECK(m.points.rows() == 250);
  CHECK(m.boundary == 100);
  CHECK(m.points.topRows(100) == a);
  CHECK(m.points.bottomRows(150) == b);
  CHECK(std::equal(la.begin(), la.end(), m.labels.begin()));
  CHECK(std::equal(lb.begin(), lb.end(), m.labels.begin() + 100));
  const MixedCloudSample self = mix_pointclouds(a, la, a, la);
  CHECK(self.points.topRows(100) == self.points.bottomRows(100));
  CHECK_THROWS_AS(mix_pointclouds(a, lb, b, lb), ContractError);
}

TEST_CASE("pair_batch") {
  Rng rng = make_rng(6);
  CHECK(pair_batch(2, rng) == std::vector<int>{1, 0});
  CHECK_THROWS_AS(pair_batch(1, rng), ConfigError);
  CHECK_THROWS_AS(pair_batch(0, rng), ConfigError);
  const int draws = 10000;
  std::vector<std::vector<int>> freq(8, std::vector<int>(8, 0));
  for (int d = 0; d < draws; ++d) {
    const auto p = pair_batch(8, rng);
    for (int i = 0; i < 8; ++i) {
      REQUIRE(p[i] != i);
      ++freq[i][p[i]];
    }
  }
  const double mean = draws / 7.0;
  const double sigma = std::sqrt(draws * (1.0 / 7.0) * (6.0 / 7.0));
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      if (i != j) CHECK(std::abs(freq[i][j] - mean) <= 3 * sigma);
}
