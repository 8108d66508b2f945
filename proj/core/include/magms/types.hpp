// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "magms/tensor.hpp"

namespace magms {

struct ModalityId {
  int index = 0;
  std::string name;

  friend bool operator==(const ModalityId&, const ModalityId&) = default;
  friend auto operator<=>(const ModalityId& a, const ModalityId& b) {
    return a.index <=> b.index;
  }
};

/// The configured modalities. Indices are 0..size()-1 in order.
class ModalitySet {
 public:
  ModalitySet() = default;
  explicit ModalitySet(const std::vector<std::string>& names);

  /// T1, T2, T1c, FLAIR, then M4, M5, ...
  static ModalitySet with_default_names(int count);

  int size() const { return static_cast<int>(members_.size()); }
  bool empty() const { return members_.empty(); }
  const ModalityId& operator[](int index) const;
  const ModalityId& by_name(std::string_view name) const;
  bool contains(const ModalityId& id) const;
  std::vector<std::string> names() const;

  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;

 private:
  std::vector<ModalityId> members_;
};

/// Non-empty subset of a ModalitySet, iterated in ascending index order.
class ModalitySubset {
 public:
  ModalitySubset(const ModalitySet& set, std::vector<int> indices);

  static ModalitySubset all(const ModalitySet& set);
  static ModalitySubset single(const ModalitySet& set, int index);
  /// Parses "T1+FLAIR" style names.
  static ModalitySubset parse(const ModalitySet& set, std::string_view text);

  int size() const { return static_cast<int>(members_.size()); }
  bool contains(int index) const;
  const std::vector<ModalityId>& members() const { return members_; }
  std::vector<int> indices() const;
  std::string label() const;

  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

  friend bool operator==(const ModalitySubset&, const ModalitySubset&) = default;

 private:
  std::vector<ModalityId> members_;
};

/// All 2^|M|-1 non-empty subsets, ordered by cardinality then index-lexicographic.
std::vector<ModalitySubset> enumerate_subsets(const ModalitySet& set);

using Spacing = std::array<double, 3>;
using VoxelGrid = BasicTensor<float>;
using LabelGrid = BasicTensor<std::uint8_t>;

struct ModalityVolume {
  ModalityId modality;
  VoxelGrid voxels;  // rank 3: D x H x W
  Spacing spacing{1.0, 1.0, 1.0};

  void validate() const;
};

struct LabelMap {
  LabelGrid classes;  // rank 3: D x H x W
  int num_classes = 0;

  void validate() const;
};

struct BackboneConfig {
  int stem_width = 8;
  std::vector<int> widths{8, 16};  // one stride-2 stage per entry
  int head_kernel = 3;             // odd; 1 gives a point-wise head

  int levels() const { return static_cast<int>(widths.size()) + 1; }
  int level_width(int level) const {
    return level == 0 ? stem_width : widths.at(static_cast<std::size_t>(level - 1));
  }
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int iterations = 200;
  int batch_size = 2;
  std::uint64_t seed = 0;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

enum class Arm { magms, mag, zero_fill, mean_fill, dropout_mean };

std::string_view arm_name(Arm arm);
Arm parse_arm(std::string_view name);

struct ExperimentConfig {
  ModalitySet modalities = ModalitySet::with_default_names(4);
  int num_classes = 4;
  std::array<std::int64_t, 3> input_shape{32, 32, 32};
  double lambda_kl = 1.0;
  double gamma_l2 = 1.0;
  double kl_temperature = 1.0;
  double dice_epsilon = 1e-5;
  BackboneConfig backbone;
  OptimizerConfig optimizer;
  Arm arm = Arm::magms;
  double dropout_prob = 0.5;
  bool augment_flips = true;
  int checkpoint_every = 50;

  /// Throws ConfigError when any invariant is violated.
  void validate() const;

  nlohmann::json to_json() const;
  /// Rejects unknown keys.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  void save(const std::string& path) const;

  /// FNV-1a over the canonical JSON text.
  std::uint64_t hash() const;
  /// Hash ignoring lambda_kl, gamma_l2 and arm; equal for ablation pairs.
  std::uint64_t hash_without_weights() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace magms
