// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magms/types.hpp"

namespace magms {

/// Aligned volumes for every configured modality plus the composite labels.
struct MultiModalSample {
  std::vector<ModalityVolume> volumes;  // volumes[i].modality.index == i
  LabelMap labels;
  std::string subject_id;

  const ModalityVolume& volume(int index) const;
  const ModalityVolume& volume(const ModalityId& id) const;
  Shape grid_shape() const { return labels.classes.shape(); }
  Spacing spacing() const;

  /// Throws DataError/DimensionError when the sample does not carry exactly
  /// the modalities of `set` with matching shapes and spacing.
  void validate(const ModalitySet& set) const;
};

enum class Split { train, val, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// 12/2/4 for 18 subjects, scaled proportionally otherwise.
std::vector<Split> default_splits(int n_subjects);

struct Dataset {
  ModalitySet modalities;
  int num_classes = 0;
  std::vector<MultiModalSample> subjects;
  std::vector<Split> splits;
  nlohmann::json generator;  // provenance (phantom spec) or null

  std::vector<const MultiModalSample*> subset(Split split) const;
};

/// Contrast of class c in modality m is visibility[m][c]; class 0 is background.
struct PhantomSpec {
  std::array<std::int64_t, 3> grid{32, 32, 32};
  int num_classes = 4;
  std::vector<std::vector<double>> visibility;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  Spacing spacing{1.0, 1.0, 1.0};
  int objects_per_class = 1;
  // Semi-axis range in voxels at a 32-voxel grid; scaled with the grid.
  double min_radius = 4.5;
  double max_radius = 7.5;

  /// Each modality sees two neighbouring foreground classes (full and 60%
  /// contrast), cycling over classes.
  static PhantomSpec standard(int modalities, int num_classes = 4);
  /// Modality m sees only foreground class 1 + (m mod (C-1)).
  static PhantomSpec complementary(int modalities, int num_classes = 4);

  int modalities() const { return static_cast<int>(visibility.size()); }
  void validate() const;
  nlohmann::json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
};

/// Deterministic per (spec.seed, subject index).
Dataset generate_phantom(const PhantomSpec& spec, int n_subjects,
                         const ModalitySet* names = nullptr);

void write_dataset(const Dataset& dataset, const std::string& directory);
/// When `required` is given, every listed modality must be present.
Dataset read_dataset(const std::string& directory, const ModalitySet* required = nullptr);

/// Flips the sample along the selected axes (depth, height, width).
MultiModalSample flip_sample(const MultiModalSample& sample, std::array<bool, 3> axes);

/// Voxelwise mean of each modality across the given samples.
std::vector<VoxelGrid> modality_means(const std::vector<const MultiModalSample*>& samples,
                                      int modalities);

}  // namespace magms
