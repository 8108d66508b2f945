// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "magms/checkpoint.hpp"
#include "magms/rng.hpp"

namespace fs = std::filesystem;

namespace magms {

std::uint64_t model_init_seed(const ExperimentConfig& config) {
  return derive_seed(config.optimizer.seed, "model.init");
}

std::unique_ptr<SegmentationNetwork> make_network(const ExperimentConfig& config,
                                                  std::uint64_t init_seed) {
  switch (config.arm) {
    case Arm::zero_fill:
    case Arm::mean_fill:
      return std::make_unique<MultichannelModel>(config, init_seed);
    case Arm::magms:
    case Arm::mag:
    case Arm::dropout_mean:
      return std::make_unique<MagModel>(config, init_seed);
  }
  throw ConfigError("unknown arm");
}

TrainState::TrainState(const ExperimentConfig& cfg)
    : config(cfg), network(make_network(cfg, model_init_seed(cfg))), optimizer(cfg.optimizer) {}

TrainState::TrainState(const ExperimentConfig& cfg, std::unique_ptr<SegmentationNetwork> net)
    : config(cfg), network(std::move(net)), optimizer(cfg.optimizer) {}

std::vector<MultiModalSample> make_batch(const ExperimentConfig& config,
                                         const std::vector<const MultiModalSample*>& train,
                                         std::int64_t iteration) {
  if (train.empty()) throw ConfigError("training split is empty");
  const auto n = static_cast<std::int64_t>(train.size());
  const std::int64_t B = config.optimizer.batch_size;
  const std::uint64_t seed = config.optimizer.seed;
  std::vector<MultiModalSample> batch;
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t p = iteration * B + b;
    const auto epoch = static_cast<std::uint64_t>(p / n);
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng shuffle(seed, "train.shuffle", epoch);
    shuffle.shuffle(perm.begin(), perm.end());
    const auto& sample = *train[perm[static_cast<std::size_t>(p % n)]];
    if (config.augment_flips) {
      Rng flip(seed, "train.flip", static_cast<std::uint64_t>(p));
      std::array<bool, 3> axes{};
      for (auto& a : axes) a = flip.uniform() < 0.5;
      batch.push_back(flip_sample(sample, axes));
    } else {
      batch.push_back(sample);
    }
  }
  return batch;
}

LossBreakdown accumulate_mag_gradients(MagModel& model, const MultiModalSample& sample,
                                       float scale) {
  const auto& cfg = model.config();
  sample.validate(cfg.modalities);
  const auto pass = model.forward_traced(sample, ModalitySubset::all(cfg.modalities), true);
  ForwardOutputsD out;
  for (const auto& b : pass.branches) {
    out.modality_logits.push_back(b.single_logits.cast<double>());
    out.modality_bundles.push_back(b.bundle.cast<double>());
  }
  out.fused_logits = pass.fused_logits.cast<double>();
  out.fused_bundle = pass.fused.cast<double>();
  MagLossGrads grads;
  auto breakdown = mag_loss(sample.labels, out, LossWeights::from(cfg), &grads);
  auto scaled = [scale](const TensorD& g) {
    Tensor f(g.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) f[i] = static_cast<float>(g[i] * scale);
    return f;
  };
  PassGradients pg;
  pg.fused_logits = scaled(grads.fused_logits);
  for (const auto& g : grads.modality_logits) pg.single_logits.push_back(scaled(g));
  for (const auto& g : grads.modality_bundles) {
    FeatureBundle fb;
    for (const auto& l : g.levels) fb.levels.push_back(scaled(l));
    pg.bundles.push_back(std::move(fb));
  }
  model.backward(pass, pg);
  return breakdown;
}

LossBreakdown train_step(TrainState& state, const std::vector<MultiModalSample>& batch) {
  if (batch.empty()) throw PreconditionError("batch must not be empty");
  auto& params = state.network->params();
  params.zero_grad();
  const float scale = 1.0f / static_cast<float>(batch.size());
  LossBreakdown result;
  try {
    switch (state.config.arm) {
      case Arm::magms:
      case Arm::mag: {
        std::vector<LossBreakdown> parts;
        for (const auto& sample : batch) {
          parts.push_back(accumulate_mag_gradients(*state.mag_model(), sample, scale));
        }
        result = LossBreakdown::mean(parts);
        break;
      }
      case Arm::dropout_mean: {
        Rng rng(state.config.optimizer.seed, "train.dropout",
                static_cast<std::uint64_t>(state.iteration));
        result.fused_dice_ce = dropout_fusion_train_step(*state.mag_model(), batch,
                                                         state.config.dropout_prob, rng);
        result.total = result.fused_dice_ce;
        break;
      }
      case Arm::zero_fill:
      case Arm::mean_fill:
        result.fused_dice_ce = multichannel_train_step(*state.multichannel_model(), batch);
        result.total = result.fused_dice_ce;
        break;
    }
  } catch (const NumericError& e) {
    throw NumericError("training aborted at iteration " + std::to_string(state.iteration) +
                       ": " + e.what());
  }
  if (!std::isfinite(result.total)) {
    throw NumericError("training aborted at iteration " + std::to_string(state.iteration) +
                       ": non-finite loss " +
                       result.to_json(state.config.modalities).dump());
  }
  state.optimizer.step(params);
  ++state.iteration;
  return result;
}

std::string checkpoint_filename(std::int64_t iteration) {
  return "ckpt-" + std::to_string(iteration) + ".bin";
}

void train(TrainState& state, const Dataset& dataset, int iterations,
           const TrainOptions& options) {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (dataset.subjects.empty()) throw ConfigError("dataset is empty");
  if (dataset.modalities.names() != state.config.modalities.names()) {
    throw ConfigError("dataset modalities do not match the configuration");
  }
  const auto train_split = dataset.subset(Split::train);
  if (train_split.empty()) throw ConfigError("dataset has no training subjects");
  if (state.config.arm == Arm::mean_fill) {
    auto* mc = state.multichannel_model();
    if (!mc->has_mean_volumes()) {
      mc->set_mean_volumes(modality_means(train_split, state.config.modalities.size()));
    }
  }
  std::ofstream log;
  if (!options.run_dir.empty()) {
    fs::create_directories(options.run_dir);
    const auto cfg_path = fs::path(options.run_dir) / "config.json";
    if (!fs::exists(cfg_path)) state.config.save(cfg_path.string());
    log.open(fs::path(options.run_dir) / "log.jsonl", std::ios::app);
    if (!log) throw Error("cannot open training log in '" + options.run_dir + "'");
  }
  const int every = state.config.checkpoint_every;
  for (int step = 0; step < iterations; ++step) {
    auto batch = make_batch(state.config, train_split, state.iteration);
    const auto breakdown = train_step(state, batch);
    if (log.is_open()) {
      auto j = breakdown.to_json(state.config.modalities);
      j["iteration"] = state.iteration;
      j["arm"] = std::string(arm_name(state.config.arm));
      log << j.dump() << '\n';
      log.flush();
    }
    if (options.on_step) options.on_step(state.iteration, breakdown);
    const bool last = step + 1 == iterations;
    if (!options.run_dir.empty() && options.write_checkpoints &&
        (last || (every > 0 && state.iteration % every == 0))) {
      save_checkpoint(state, (fs::path(options.run_dir) / checkpoint_filename(state.iteration))
                                 .string());
    }
  }
}

}  // namespace magms
