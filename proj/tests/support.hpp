// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "magms/data.hpp"
#include "magms/losses.hpp"
#include "magms/rng.hpp"
#include "magms/tensor.hpp"
#include "magms/types.hpp"

namespace magms::testing {

/// Fresh empty directory under the system temp dir.
std::string temp_dir(const std::string& tag);

template <class T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

LabelMap random_labels(const Shape& shape, int num_classes, Rng& rng);

/// Central difference of f at x[i] with step h; x[i] restored afterwards.
double central_difference(const std::function<double()>& f, double& xi, double h);

/// |a-b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-8);

/// Small config for fast tests: 2 modalities, 16^3 grid, 3 classes.
ExperimentConfig small_config(int modalities = 2, int num_classes = 3, std::int64_t grid = 16);

/// Phantom with the given config's modalities, classes and grid.
Dataset small_dataset(const ExperimentConfig& config, int subjects, std::uint64_t seed,
                      bool complementary = false);

FeatureBundleD random_bundle(const std::vector<Shape>& levels, Rng& rng);

/// Random loss inputs on a grid of at most 4^3 voxels.
struct MagInstance {
  LabelMap labels;
  ForwardOutputsD outputs;
  LossWeights weights;
};
MagInstance random_mag_instance(Rng& rng, int modalities, bool random_weights);

/// Largest per-entry relative error (floor 1e-7) between `analytic` and
/// central differences of f over every entry of `x`.
double max_gradient_error(const std::function<double()>& f, std::span<double> x,
                          std::span<const double> analytic, double h = 1e-5);

/// Random label grids up to 8^3 with per-grid class densities, so sparse,
/// dense and empty classes all occur, and a random anisotropic spacing.
struct MetricInstance {
  LabelGrid pred;
  LabelGrid gt;
  Spacing spacing;
};
MetricInstance random_metric_instance(Rng& rng);

/// Set-intersection Dice for one class.
double oracle_dice(const LabelGrid& pred, const LabelGrid& gt, int cls);

/// Class voxels with a face neighbour of another class or outside the grid.
std::vector<std::array<std::int64_t, 3>> oracle_boundary(const LabelGrid& g, int cls);

/// All-pairs pooled surface distances, 95th percentile by linear rank.
std::optional<double> oracle_hd95(const LabelGrid& pred, const LabelGrid& gt, int cls,
                                  const Spacing& spacing);

}  // namespace magms::testing
