// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "magms/metrics.hpp"
#include "magms/rng.hpp"
#include "support.hpp"

namespace magms {
namespace {

using testing::oracle_boundary;
using testing::oracle_dice;
using testing::oracle_hd95;

testing::MetricInstance random_instance(Rng& rng) { return testing::random_metric_instance(rng); }

TEST(Dice, MatchesSetOracleExactly) {
  Rng rng(2024);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    const auto dice = dice_score(inst.pred, inst.gt, 3);
    ASSERT_EQ(dice.size(), 3u);
    for (int c = 0; c < 3; ++c) {
      EXPECT_EQ(dice[static_cast<std::size_t>(c)], oracle_dice(inst.pred, inst.gt, c))
          << "instance " << t << " class " << c;
    }
  }
}

TEST(Dice, SymmetricAndRelabelingInvariant) {
  Rng rng(7);
  const std::array<std::uint8_t, 3> perm{2, 0, 1};
  for (int t = 0; t < 50; ++t) {
    const auto inst = random_instance(rng);
    const auto d = dice_score(inst.pred, inst.gt, 3);
    EXPECT_EQ(d, dice_score(inst.gt, inst.pred, 3));
    LabelGrid p = inst.pred, g = inst.gt;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      p[i] = perm[p[i]];
      g[i] = perm[g[i]];
    }
    const auto e = dice_score(p, g, 3);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(e[perm[static_cast<std::size_t>(c)]], d[static_cast<std::size_t>(c)]);
  }
}

TEST(Dice, Examples) {
  LabelGrid pred(Shape{1, 1, 5}), gt(Shape{1, 1, 5});
  pred[1] = pred[2] = 1;
  gt[2] = gt[3] = 1;
  EXPECT_EQ(dice_score(pred, gt, 2)[1], 0.5);
  EXPECT_EQ(dice_score(pred, pred, 3), (std::vector<double>{1.0, 1.0, 1.0}));
  EXPECT_EQ(dice_score(pred, gt, 3)[2], 1.0);  // both empty
  LabelGrid none(Shape{1, 1, 5});
  EXPECT_EQ(dice_score(pred, none, 2)[1], 0.0);  // one empty
}

TEST(Dice, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(dice_score(LabelGrid(Shape{2, 2, 2}), LabelGrid(Shape{2, 2, 3}), 2), DimensionError);
}

TEST(Hd95, MatchesAllPairsOracle) {
  Rng rng(99);
  int defined = 0;
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    for (int c = 1; c < 3; ++c) {
      const auto got = hd95(inst.pred, inst.gt, c, inst.spacing);
      const auto want = oracle_hd95(inst.pred, inst.gt, c, inst.spacing);
      ASSERT_EQ(got.has_value(), want.has_value()) << "instance " << t << " class " << c;
      if (!want) continue;
      ++defined;
      EXPECT_NEAR(*got, *want, 1e-9) << "instance " << t << " class " << c;
    }
  }
  EXPECT_GE(defined, 120);
}

TEST(Hd95, Symmetric) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto inst = random_instance(rng);
    EXPECT_EQ(hd95(inst.pred, inst.gt, 1, inst.spacing), hd95(inst.gt, inst.pred, 1, inst.spacing));
  }
}

TEST(Hd95, Examples) {
  LabelGrid a(Shape{1, 1, 8}), b(Shape{1, 1, 8});
  a[1] = 1;
  b[4] = 1;
  EXPECT_DOUBLE_EQ(*hd95(a, b, 1, {1.0, 1.0, 1.0}), 3.0);
  EXPECT_DOUBLE_EQ(*hd95(a, b, 1, {1.0, 1.0, 0.5}), 1.5);
  EXPECT_EQ(*hd95(a, a, 1, {1.0, 1.0, 1.0}), 0.0);
  EXPECT_FALSE(hd95(a, LabelGrid(Shape{1, 1, 8}), 1, {1.0, 1.0, 1.0}).has_value());
  EXPECT_THROW(hd95(a, LabelGrid(Shape{1, 2, 8}), 1, {1.0, 1.0, 1.0}), DimensionError);
}

TEST(Boundary, SolidCubeKeepsOnlyItsShell) {
  LabelGrid g(Shape{5, 5, 5});
  for (std::int64_t z = 0; z < 5; ++z)
    for (std::int64_t y = 0; y < 5; ++y)
      for (std::int64_t x = 0; x < 5; ++x) g[(z * 5 + y) * 5 + x] = 1;
  EXPECT_EQ(boundary_voxels(g, 1).size(), 125u - 27u);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto inst = random_instance(rng);
    EXPECT_EQ(boundary_voxels(inst.pred, 2), oracle_boundary(inst.pred, 2));
  }
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile_linear({1.0, 2.0, 3.0, 4.0}, 50.0), 2.5);
  EXPECT_DOUBLE_EQ(percentile_linear({4.0, 1.0, 3.0, 2.0}, 95.0), 3.85);
  EXPECT_DOUBLE_EQ(percentile_linear({7.0}, 95.0), 7.0);
  EXPECT_DOUBLE_EQ(percentile_linear({0.0, 10.0}, 100.0), 10.0);
}

TEST(DistanceTransform, MatchesBruteForce) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const Shape shape{1 + static_cast<std::int64_t>(rng.below(7)),
                      1 + static_cast<std::int64_t>(rng.below(7)),
                      1 + static_cast<std::int64_t>(rng.below(7))};
    const Spacing sp{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    const auto n = shape[0] * shape[1] * shape[2];
    std::vector<bool> sites(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < sites.size(); ++i) sites[i] = rng.uniform() < 0.1;
    const auto d = distance_to_sites(sites, shape, sp);
    for (std::int64_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < n; ++j) {
        if (!sites[static_cast<std::size_t>(j)]) continue;
        const std::array<std::int64_t, 3> u{i / (shape[1] * shape[2]), i / shape[2] % shape[1], i % shape[2]};
        const std::array<std::int64_t, 3> v{j / (shape[1] * shape[2]), j / shape[2] % shape[1], j % shape[2]};
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += std::pow(static_cast<double>(u[k] - v[k]) * sp[k], 2);
        best = std::min(best, std::sqrt(s));
      }
      if (std::isinf(best)) {
        EXPECT_TRUE(std::isinf(d[static_cast<std::size_t>(i)]));
      } else {
        EXPECT_NEAR(d[static_cast<std::size_t>(i)], best, 1e-9);
      }
    }
  }
}

TEST(Argmax, TiesGoToLowestClass) {
  Tensor logits(Shape{3, 1, 1, 2});
  logits[0] = 1.0f;
  logits[2] = 1.0f;
  logits[4] = 0.5f;
  logits[1] = -1.0f;
  logits[3] = 2.0f;
  logits[5] = 2.0f;
  const auto labels = argmax_labels(logits);
  EXPECT_EQ(labels[0], 0);
  EXPECT_EQ(labels[1], 1);
}

TEST(EvaluatePrediction, AveragesForegroundClasses) {
  LabelGrid gt(Shape{1, 1, 6}), pred(Shape{1, 1, 6});
  gt[1] = 1;
  gt[2] = 1;
  pred[2] = 1;
  pred[3] = 1;
  const auto r = evaluate_prediction(pred, gt, 3, {1.0, 1.0, 1.0});
  ASSERT_EQ(r.per_class_dice.size(), 2u);
  EXPECT_EQ(r.per_class_dice[0], 0.5);
  EXPECT_EQ(r.per_class_dice[1], 1.0);
  EXPECT_EQ(r.mean_dice, 0.75);
  EXPECT_FALSE(r.per_class_hd95[1].has_value());
  ASSERT_TRUE(r.mean_hd95.has_value());
  EXPECT_EQ(*r.mean_hd95, *r.per_class_hd95[0]);
}

}  // namespace
}  // namespace magms
