// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

// Comparison arms: a single multi-channel encoder whose missing channels are
// filled with zeros or training means, and mean fusion trained with random
// modality dropout.

#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "magms/losses.hpp"
#include "magms/model.hpp"
#include "magms/network.hpp"

namespace magms {

class Rng;

enum class FillKind { zeros, dataset_mean };

struct FillStrategy {
  FillKind kind = FillKind::zeros;
};

/// One encoder over all M modalities stacked as channels, plus the decoder.
/// Mean volumes for dataset_mean filling live in the parameter store's
/// buffers under "fill.mean.<modality>".
class MultichannelModel final : public SegmentationNetwork {
 public:
  MultichannelModel(const ExperimentConfig& config, std::uint64_t seed);

  const ExperimentConfig& config() const override { return config_; }
  ParameterStore& params() override { return params_; }
  const ParameterStore& params() const override { return params_; }
  std::uint64_t init_seed() const override { return seed_; }

  /// Uses the fill strategy implied by the configured arm.
  Tensor predict(const MultiModalSample& sample, const ModalitySubset& subset) const override;

  /// One pass over an already assembled (M, D, H, W) input.
  Tensor forward(const Tensor& input, EncoderTrace* enc_trace = nullptr,
                 DecoderTrace* dec_trace = nullptr, FeatureBundle* bundle = nullptr) const;
  void backward(const EncoderTrace& enc_trace, const DecoderTrace& dec_trace,
                const FeatureBundle& bundle, const Tensor& d_logits);

  void set_mean_volumes(const std::vector<VoxelGrid>& means);
  bool has_mean_volumes() const;
  const VoxelGrid& mean_volume(int modality) const;

 private:
  ExperimentConfig config_;
  std::uint64_t seed_;
  ParameterStore params_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Decoder> decoder_;
};

FillStrategy fill_strategy_for(Arm arm);

/// Stacks the subset's volumes as channels, filling the others.
Tensor build_filled_input(const MultichannelModel& model, const MultiModalSample& sample,
                          const ModalitySubset& subset, FillStrategy strategy);

Tensor fill_forward(const MultichannelModel& model, const MultiModalSample& sample,
                    const ModalitySubset& subset, FillStrategy strategy);

/// Each modality is dropped independently with `dropout_prob`, conditioned
/// on at least one survivor; sampled exactly from that distribution (at
/// dropout_prob = 0.5 this is uniform over the non-empty subsets).
ModalitySubset draw_dropout_subset(const ModalitySet& set, double dropout_prob, Rng& rng);

/// Mean-fusion training step with a random surviving subset per sample and
/// dice-CE on the fused output only. Accumulates gradients (batch-averaged);
/// the caller applies the optimizer. Returns the mean loss.
double dropout_fusion_train_step(MagModel& model, const std::vector<MultiModalSample>& batch,
                                 double dropout_prob, Rng& rng,
                                 std::vector<ModalitySubset>* drawn = nullptr);

/// Dice-CE step of the multi-channel model on complete inputs.
double multichannel_train_step(MultichannelModel& model,
                               const std::vector<MultiModalSample>& batch);

}  // namespace magms
