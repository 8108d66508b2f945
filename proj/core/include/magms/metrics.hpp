// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <vector>

#include "magms/tensor.hpp"
#include "magms/types.hpp"

namespace magms {

/// Per-class Dice for classes 0..num_classes-1: 2|P∩G| / (|P|+|G|), 1 when
/// both sets are empty, 0 when exactly one is.
std::vector<double> dice_score(const LabelGrid& pred, const LabelGrid& gt, int num_classes);

/// Foreground voxels of `cls` with at least one face neighbour that is not
/// `cls`; voxels outside the grid count as background.
std::vector<std::array<std::int64_t, 3>> boundary_voxels(const LabelGrid& labels, int cls);

/// 95th percentile (linear interpolation) of the pooled surface distances
/// in both directions between the class boundaries, in mm. nullopt when
/// either boundary is empty.
std::optional<double> hd95(const LabelGrid& pred, const LabelGrid& gt, int cls,
                           const Spacing& spacing);

/// Percentile with linear interpolation between closest ranks, q in [0, 100].
double percentile_linear(std::vector<double> values, double q);

/// Distance from every voxel to the nearest voxel where `sites` is true, in
/// mm (exact Euclidean distance transform). Infinite when there are no sites.
std::vector<double> distance_to_sites(const std::vector<bool>& sites, const Shape& shape,
                                      const Spacing& spacing);

/// Channel argmax of (C, D, H, W) logits; ties go to the lowest class.
LabelGrid argmax_labels(const Tensor& logits);

struct MetricResult {
  std::vector<double> per_class_dice;                // foreground classes 1..C-1
  std::vector<std::optional<double>> per_class_hd95;  // foreground classes 1..C-1
  double mean_dice = 0.0;
  std::optional<double> mean_hd95;  // over classes where HD95 is defined
};

MetricResult evaluate_prediction(const LabelGrid& pred, const LabelGrid& gt, int num_classes,
                                 const Spacing& spacing);

}  // namespace magms
