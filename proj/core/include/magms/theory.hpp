// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magms/data.hpp"
#include "magms/network.hpp"
#include "magms/types.hpp"

namespace magms {

/// Likelihood of the fused representation (p_m) and of a subset's
/// representation (p_s), with 0 < p_s < p_m <= 1.
class ScalarLikelihoodPair {
 public:
  /// Throws DomainError outside the domain or when p_m <= p_s.
  ScalarLikelihoodPair(double p_m, double p_s);

  double p_m() const { return p_m_; }
  double p_s() const { return p_s_; }

 private:
  double p_m_;
  double p_s_;
};

/// Values in nats.
struct BoundCheck {
  double p_m = 0.0;
  double p_s = 0.0;
  double h_s = 0.0;
  double h_m = 0.0;
  double d_kl = 0.0;
  double bound = 0.0;  // h_m + d_kl
  bool holds = false;  // h_s < bound
};

/// -p ln p, with 0 at p = 0.
double scalar_entropy(double p);

BoundCheck verify_entropy_bound(const ScalarLikelihoodPair& pair);

/// Fraction of n random pairs (uniform on 0 < p_s < p_m < 1) whose bound
/// holds. Failing checks are appended to `failures` when given.
double sweep_bound(std::int64_t n, std::uint64_t seed,
                   std::vector<BoundCheck>* failures = nullptr);

struct ArmStatistics {
  double mean_entropy = 0.0;  // per-voxel predictive entropy of the subset output
  double mean_kl = 0.0;       // per-voxel KL(fused || subset)
};

struct BoundComparison {
  std::string subset;
  int subjects = 0;
  ArmStatistics with;     // trained with distillation
  ArmStatistics without;  // trained without
  double kl_reduction() const { return without.mean_kl - with.mean_kl; }
  double entropy_reduction() const { return without.mean_entropy - with.mean_entropy; }
  nlohmann::json to_json() const;
};

/// Entropy and KL of one network's `subset` outputs, averaged over subjects.
ArmStatistics subset_statistics(const SegmentationNetwork& net,
                                const std::vector<MultiModalSample>& subjects,
                                const ModalitySubset& subset);

/// Both networks must share their configuration apart from the
/// distillation weights and arm; otherwise ComparisonError.
BoundComparison distillation_tightens_bound(const SegmentationNetwork& with,
                                            const SegmentationNetwork& without,
                                            const std::vector<MultiModalSample>& subjects,
                                            const ModalitySubset& subset);

/// Loads both checkpoints and compares them on the test split.
BoundComparison distillation_tightens_bound(const std::string& checkpoint_with,
                                            const std::string& checkpoint_without,
                                            const Dataset& dataset,
                                            const std::string& subset_label);

}  // namespace magms
