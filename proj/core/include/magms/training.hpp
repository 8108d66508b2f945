// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "magms/baselines.hpp"
#include "magms/data.hpp"
#include "magms/losses.hpp"
#include "magms/model.hpp"
#include "magms/network.hpp"
#include "magms/params.hpp"

namespace magms {

/// Seed used to initialise network parameters for a configuration.
std::uint64_t model_init_seed(const ExperimentConfig& config);

/// MagModel for magms/mag/dropout_mean, MultichannelModel for the fill arms.
std::unique_ptr<SegmentationNetwork> make_network(const ExperimentConfig& config,
                                                  std::uint64_t init_seed);

struct TrainState {
  ExperimentConfig config;
  std::unique_ptr<SegmentationNetwork> network;
  Adam optimizer;
  std::int64_t iteration = 0;

  explicit TrainState(const ExperimentConfig& cfg);
  TrainState(const ExperimentConfig& cfg, std::unique_ptr<SegmentationNetwork> net);

  MagModel* mag_model() { return dynamic_cast<MagModel*>(network.get()); }
  MultichannelModel* multichannel_model() {
    return dynamic_cast<MultichannelModel*>(network.get());
  }
};

/// Batch for `iteration`: a seeded per-epoch shuffle of the training samples
/// plus seeded axis flips. Depends only on (seed, iteration), so a resumed
/// run sees exactly the batches of an uninterrupted one.
std::vector<MultiModalSample> make_batch(const ExperimentConfig& config,
                                         const std::vector<const MultiModalSample*>& train,
                                         std::int64_t iteration);

/// One optimizer update. For magms/mag: all single-modality passes, the
/// fused pass, the full modality-agnostic loss. Other arms use their own
/// objective and report it as fused_dice_ce. Throws NumericError (with the
/// breakdown in the message) when the loss is not finite.
LossBreakdown train_step(TrainState& state, const std::vector<MultiModalSample>& batch);

/// Gradients of the modality-agnostic loss for one sample, accumulated into
/// the model's parameter gradients with the given scale.
LossBreakdown accumulate_mag_gradients(MagModel& model, const MultiModalSample& sample,
                                       float scale);

struct TrainOptions {
  std::string run_dir;  // empty: no files written
  bool write_checkpoints = true;
  std::function<void(std::int64_t, const LossBreakdown&)> on_step;
};

/// Runs `iterations` further steps over the training split. Appends one JSON
/// line per step to run_dir/log.jsonl and writes ckpt-{iter}.bin every
/// config.checkpoint_every steps and at the end.
void train(TrainState& state, const Dataset& dataset, int iterations,
           const TrainOptions& options = {});

std::string checkpoint_filename(std::int64_t iteration);

}  // namespace magms
