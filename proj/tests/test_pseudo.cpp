#include "comodal/errors.hpp"
#include "comodal/losses.hpp"
#include "comodal/pseudo.hpp"
#include "doctest.h"
#include "support.hpp"

#include <cmath>

using namespace comodal;

namespace {

PointPseudoLabels labels_of(std::vector<int> l, std::vector<double> conf, Provenance p) {
  return {l, conf, std::vector<Provenance>(l.size(), p)};
}

}  // namespace

TEST_CASE("argmax picks the top logit with its softmax probability") {
  Matrix row(1, 4);
  row << 0, 0, 0, 10;
  const auto out = argmax_labels(row);
  CHECK(out.labels[0] == 3);
  CHECK(out.confidence[0] == doctest::Approx(1.0).epsilon(1e-4));
  Matrix uniform_row = Matrix::Constant(1, 5, 0.3);
  const auto u = argmax_labels(uniform_row);
  CHECK(u.labels[0] == 0);
  CHECK(std::abs(u.confidence[0] - 0.2) < 1e-15);
}

TEST_CASE("argmax matches a naive loop") {
  Rng rng = make_rng(1);
  const Matrix logits = testing::random_matrix(rng, 5, 4, 3.0);
  const auto out = argmax_labels(logits, Provenance::pretrained);
  for (int i = 0; i < 5; ++i) {
    int best = 0;
    for (int c = 1; c < 4; ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    double z = 0;
    for (int c = 0; c < 4; ++c) z += std::exp(logits(i, c));
    CHECK(out.labels[i] == best);
    CHECK(std::abs(out.confidence[i] - std::exp(logits(i, best)) / z) < 1e-12);
    CHECK(out.provenance[i] == Provenance::pretrained);
  }
}

TEST_CASE("argmax rejects NaN") {
  Matrix m = Matrix::Zero(2, 3);
  m(1, 2) = std::nan("");
  CHECK_THROWS_AS(argmax_labels(m), NumericError);
}

TEST_CASE("hybrid fusion branches") {
  const auto on = labels_of({2, 1, 4}, {0.8, 0.5, 0.3}, Provenance::online);
  const auto pre = labels_of({5, 3, 0}, {0.6, 0.5, 0.9}, Provenance::pretrained);
  const auto h = hybrid_fuse(on, pre);
  CHECK(h.labels == std::vector<int>{2, 1, 0});
  CHECK(h.provenance[0] == Provenance::online);
  // Equal confidences go to the online model.
  CHECK(h.provenance[1] == Provenance::online);
  CHECK(h.provenance[2] == Provenance::pretrained);
  CHECK(h.fraction(Provenance::online) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(hybrid_fuse(on, labels_of({1}, {0.5}, Provenance::pretrained)), ContractError);
}

TEST_CASE("hybrid fusion keeps the larger confidence on random inputs") {
  Rng rng = make_rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto on = argmax_labels(testing::random_matrix(rng, 30, 6, 4.0));
    const auto pre = argmax_labels(testing::random_matrix(rng, 30, 6, 4.0), Provenance::pretrained);
    const auto h = hybrid_fuse(on, pre);
    for (int i = 0; i < 30; ++i) {
      CHECK(h.confidence[i] == std::max(on.confidence[i], pre.confidence[i]));
      const bool online = on.confidence[i] >= pre.confidence[i];
      CHECK(h.labels[i] == (online ? on.labels[i] : pre.labels[i]));
    }
  }
}

TEST_CASE("prototype examples") {
  Matrix one(1, 3);
  one << 0.5, -1, 2;
  const auto p1 = class_prototypes(one, std::vector<int>{2});
  CHECK(p1.values.row(2) == one.row(0));
  CHECK(p1.support[2] == 1);
  CHECK_FALSE(p1.present(0));

  Matrix two(2, 2);
  two << 0.2, 0.8, 0.4, 0.6;
  const auto p2 = class_prototypes(two, std::vector<int>{1, 1});
  CHECK(std::abs(p2.values(1, 0) - 0.3) < 1e-15);
  CHECK(std::abs(p2.values(1, 1) - 0.7) < 1e-15);
  CHECK_FALSE(p2.present(0));
  CHECK(p2.values.row(0).isZero());
}

TEST_CASE("prototypes equal a per-class mean loop and lie inside their members' box") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng(seed, 3);
    const int n = 1 + uniform_index(rng, 80);
    const int c = 2 + uniform_index(rng, 6);
    const Matrix logits = testing::random_matrix(rng, n, c, 5.0);
    std::vector<int> labels(n);
    for (auto& l : labels) l = uniform_index(rng, c);
    const auto p = class_prototypes(logits, labels);
    for (int k = 0; k < c; ++k) {
      std::vector<double> sum(c, 0.0);
      std::vector<double> lo(c, 1e300), hi(c, -1e300);
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (labels[i] != k) continue;
        ++count;
        for (int j = 0; j < c; ++j) {
          sum[j] += logits(i, j);
          lo[j] = std::min(lo[j], logits(i, j));
          hi[j] = std::max(hi[j], logits(i, j));
        }
      }
      CHECK(p.support[k] == count);
      CHECK(p.present(k) == (count > 0));
      for (int j = 0; j < c && count > 0; ++j) {
        CHECK(std::abs(p.values(k, j) - sum[j] / count) <= 1e-12);
        CHECK(p.values(k, j) >= lo[j] - 1e-12);
        CHECK(p.values(k, j) <= hi[j] + 1e-12);
      }
    }
  }
}

TEST_CASE("prototype smoothing keeps absent classes and blends present ones") {
  PrototypeSmoother s(0.5);
  ClassPrototypes a{Matrix::Constant(2, 2, 2.0), {1, 1}};
  s.update(a);
  ClassPrototypes b{Matrix::Zero(2, 2), {3, 0}};
  const auto& cur = s.update(b);
  CHECK(cur.values(0, 0) == 1.0);
  CHECK(cur.values(1, 1) == 2.0);
}

TEST_CASE("alignment targets") {
  Rng rng = make_rng(5);
  const Matrix logits = testing::random_matrix(rng, 3, 3);
  MixedImageSample mixed;
  mixed.source_labels_at_points = {0, 1, 2};

  SUBCASE("all zeros mask gives the point logits, all valid") {
    mixed.mask_at_points = {0, 0, 0};
    const auto protos = class_prototypes(logits, std::vector<int>{0, 0, 0});
    const auto t = assemble_alignment_targets(protos, logits, mixed);
    CHECK(t.targets == logits);
    CHECK(t.valid_count() == 3);
  }
  SUBCASE("all ones with one shared present class gives that prototype everywhere") {
    mixed.mask_at_points = {1, 1, 1};
    mixed.source_labels_at_points = {1, 1, 1};
    const auto protos = class_prototypes(logits, std::vector<int>{1, 1, 0});
    const auto t = assemble_alignment_targets(protos, logits, mixed);
    for (int i = 0; i < 3; ++i) CHECK(t.targets.row(i) == protos.values.row(1));
    CHECK(t.valid_count() == 3);
  }
  SUBCASE("an absent prototype invalidates the row and drops it from the loss") {
    mixed.mask_at_points = {1, 0, 1};
    mixed.source_labels_at_points = {0, 1, 2};
    const auto protos = class_prototypes(logits, std::vector<int>{0, 0, 1});
    const auto t = assemble_alignment_targets(protos, logits, mixed);
    CHECK(t.valid == std::vector<std::uint8_t>{1, 1, 0});
    const Matrix mim = testing::random_matrix(rng, 3, 3);
    const LossReport with_row = loss_2d_m(mim, t.targets, t.valid);
    const LossReport two_rows = kl_pointwise(mim.topRows(2), t.targets.topRows(2));
    CHECK(with_row.count == 2);
    CHECK(std::abs(with_row.value - two_rows.value) < 1e-15);
    CHECK(with_row.grad.row(2).isZero());
  }
}

TEST_CASE("prototype targets for explicit pixels") {
  ClassPrototypes p{Matrix::Identity(3, 3), {2, 0, 1}};
  const auto t = prototype_targets(p, std::vector<int>{2, 1, 0});
  CHECK(t.valid == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(t.targets.row(0) == p.values.row(2));
  CHECK(t.targets.row(2) == p.values.row(0));
}
