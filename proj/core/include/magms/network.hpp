// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "magms/data.hpp"
#include "magms/params.hpp"
#include "magms/tensor.hpp"
#include "magms/types.hpp"

namespace magms {

/// Anything that maps a sample and a set of available modalities to logits.
/// Every trained arm implements this, so all arms share one evaluation path.
class SegmentationNetwork {
 public:
  virtual ~SegmentationNetwork() = default;

  virtual const ExperimentConfig& config() const = 0;
  virtual ParameterStore& params() = 0;
  virtual const ParameterStore& params() const = 0;
  virtual std::uint64_t init_seed() const = 0;

  /// Logits (C, D, H, W) using only the modalities in `subset`.
  virtual Tensor predict(const MultiModalSample& sample, const ModalitySubset& subset) const = 0;
};

}  // namespace magms
