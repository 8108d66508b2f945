// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/baselines.hpp"

#include <bit>
#include <cmath>

#include "magms/rng.hpp"

namespace magms {

MultichannelModel::MultichannelModel(const ExperimentConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  encoder_ = std::make_unique<TinyConvEncoder>(params_, "encoder.multichannel",
                                               config_.modalities.size(), config_.backbone, seed);
  decoder_ = std::make_unique<TinyConvDecoder>(params_, config_.backbone, config_.num_classes,
                                               seed);
}

Tensor MultichannelModel::forward(const Tensor& input, EncoderTrace* enc_trace,
                                  DecoderTrace* dec_trace, FeatureBundle* bundle) const {
  FeatureBundle b;
  b.levels = encoder_->forward(params_, input, enc_trace);
  Tensor logits = decoder_->forward(params_, b, dec_trace);
  if (bundle) *bundle = std::move(b);
  return logits;
}

void MultichannelModel::backward(const EncoderTrace& enc_trace, const DecoderTrace& dec_trace,
                                 const FeatureBundle& bundle, const Tensor& d_logits) {
  auto d_levels = decoder_->backward(params_, dec_trace, bundle, d_logits);
  encoder_->backward(params_, enc_trace, std::move(d_levels));
}

void MultichannelModel::set_mean_volumes(const std::vector<VoxelGrid>& means) {
  if (static_cast<int>(means.size()) != config_.modalities.size()) {
    throw ConfigError("need one mean volume per modality");
  }
  for (const auto& m : config_.modalities) {
    params_.buffers()["fill.mean." + m.name] = means[static_cast<std::size_t>(m.index)];
  }
}

bool MultichannelModel::has_mean_volumes() const {
  for (const auto& m : config_.modalities) {
    if (!params_.buffers().count("fill.mean." + m.name)) return false;
  }
  return true;
}

const VoxelGrid& MultichannelModel::mean_volume(int modality) const {
  const auto& name = config_.modalities[modality].name;
  auto it = params_.buffers().find("fill.mean." + name);
  if (it == params_.buffers().end()) {
    throw ConfigError("mean-fill requested but no mean volume is stored for '" + name + "'");
  }
  return it->second;
}

FillStrategy fill_strategy_for(Arm arm) {
  return {arm == Arm::mean_fill ? FillKind::dataset_mean : FillKind::zeros};
}

Tensor build_filled_input(const MultichannelModel& model, const MultiModalSample& sample,
                          const ModalitySubset& subset, FillStrategy strategy) {
  const auto& cfg = model.config();
  if (strategy.kind == FillKind::dataset_mean && !model.has_mean_volumes()) {
    throw ConfigError("mean-fill requires precomputed per-modality mean volumes");
  }
  const auto& g = cfg.input_shape;
  const Shape grid{g[0], g[1], g[2]};
  const std::int64_t n = shape_numel(grid);
  Tensor input(Shape{cfg.modalities.size(), g[0], g[1], g[2]});
  for (const auto& m : cfg.modalities) {
    float* dst = input.data() + m.index * n;
    if (subset.contains(m.index)) {
      const auto& v = sample.volume(m).voxels;
      if (v.shape() != grid) {
        throw DimensionError("volume shape " + shape_str(v.shape()) + " does not match " +
                             shape_str(grid));
      }
      std::copy(v.data(), v.data() + n, dst);
    } else if (strategy.kind == FillKind::dataset_mean) {
      const auto& mean = model.mean_volume(m.index);
      std::copy(mean.data(), mean.data() + n, dst);
    }
  }
  return input;
}

Tensor fill_forward(const MultichannelModel& model, const MultiModalSample& sample,
                    const ModalitySubset& subset, FillStrategy strategy) {
  return model.forward(build_filled_input(model, sample, subset, strategy));
}

Tensor MultichannelModel::predict(const MultiModalSample& sample,
                                  const ModalitySubset& subset) const {
  return fill_forward(*this, sample, subset, fill_strategy_for(config_.arm));
}

ModalitySubset draw_dropout_subset(const ModalitySet& set, double p, Rng& rng) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in (0, 1)");
  const int m = set.size();
  // Probability of keeping exactly `mask`: p^(dropped) (1-p)^(kept), mask != 0.
  std::vector<double> weight;
  double total = 0.0;
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    const int kept = std::popcount(mask);
    const double w = std::pow(p, m - kept) * std::pow(1.0 - p, kept);
    weight.push_back(w);
    total += w;
  }
  double u = rng.uniform() * total;
  std::uint32_t chosen = (1u << m) - 1;
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    u -= weight[mask - 1];
    if (u < 0.0) {
      chosen = mask;
      break;
    }
  }
  std::vector<int> idx;
  for (int i = 0; i < m; ++i) {
    if (chosen & (1u << i)) idx.push_back(i);
  }
  return ModalitySubset(set, std::move(idx));
}

double dropout_fusion_train_step(MagModel& model, const std::vector<MultiModalSample>& batch,
                                 double dropout_prob, Rng& rng,
                                 std::vector<ModalitySubset>* drawn) {
  if (batch.empty()) throw PreconditionError("batch must not be empty");
  const auto& cfg = model.config();
  const double eps = cfg.dice_epsilon;
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    auto subset = draw_dropout_subset(cfg.modalities, dropout_prob, rng);
    auto pass = model.forward_traced(sample, subset, false);
    TensorD grad;
    const double l = dice_ce(sample.labels, pass.fused_logits.cast<double>(), eps, &grad);
    if (!std::isfinite(l)) throw NumericError("non-finite dropout-fusion loss");
    loss += l * inv_b;
    for (auto& v : grad.values()) v *= inv_b;
    PassGradients g;
    g.fused_logits = grad.cast<float>();
    model.backward(pass, g);
    if (drawn) drawn->push_back(subset);
  }
  return loss;
}

double multichannel_train_step(MultichannelModel& model,
                               const std::vector<MultiModalSample>& batch) {
  if (batch.empty()) throw PreconditionError("batch must not be empty");
  const auto& cfg = model.config();
  const auto all = ModalitySubset::all(cfg.modalities);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    sample.validate(cfg.modalities);
    EncoderTrace et;
    DecoderTrace dt;
    FeatureBundle bundle;
    const Tensor input = build_filled_input(model, sample, all, {FillKind::zeros});
    const Tensor logits = model.forward(input, &et, &dt, &bundle);
    TensorD grad;
    const double l = dice_ce(sample.labels, logits.cast<double>(), cfg.dice_epsilon, &grad);
    if (!std::isfinite(l)) throw NumericError("non-finite multichannel loss");
    loss += l * inv_b;
    for (auto& v : grad.values()) v *= inv_b;
    model.backward(et, dt, bundle, grad.cast<float>());
  }
  return loss;
}

}  // namespace magms
