// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "magms/data.hpp"
#include "magms/network.hpp"
#include "magms/params.hpp"
#include "magms/tensor.hpp"
#include "magms/types.hpp"

namespace magms {

/// Multi-resolution features of one modality (or of a fusion of several).
/// levels[0] is the full-resolution skip; levels.back() is the bottleneck.
template <class T>
struct BasicFeatureBundle {
  std::vector<BasicTensor<T>> levels;
  std::vector<int> sources;  // modality indices that contributed, ascending

  const BasicTensor<T>& bottleneck() const { return levels.back(); }
  std::span<const BasicTensor<T>> skips() const {
    return std::span<const BasicTensor<T>>(levels).first(levels.size() - 1);
  }
  std::int64_t numel() const {
    std::int64_t n = 0;
    for (const auto& l : levels) n += l.numel();
    return n;
  }
  template <class U>
  BasicFeatureBundle<U> cast() const {
    BasicFeatureBundle<U> out;
    for (const auto& l : levels) out.levels.push_back(l.template cast<U>());
    out.sources = sources;
    return out;
  }
  friend bool operator==(const BasicFeatureBundle&, const BasicFeatureBundle&) = default;
};

using FeatureBundle = BasicFeatureBundle<float>;
using FeatureBundleD = BasicFeatureBundle<double>;

/// Element-wise mean over bundles at every level. Bundles are summed in
/// ascending order of their source modality indices, then divided by the
/// count, so the result does not depend on the order of `bundles`.
FeatureBundle fuse(std::span<const FeatureBundle> bundles);

struct EncoderTrace {
  Tensor input;
  std::vector<Tensor> activations;  // post-ReLU, one per level
};

struct DecoderTrace {
  std::vector<Tensor> stage_inputs;  // input to each upsampling stage
  std::vector<Tensor> upsampled;     // post-ReLU upconv outputs
  std::vector<Tensor> concatenated;  // [upsampled, skip]
};

/// Produces per-level activations from an input tensor (channels, D, H, W).
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual int in_channels() const = 0;
  virtual std::vector<Tensor> forward(const ParameterStore& params, const Tensor& input,
                                      EncoderTrace* trace) const = 0;
  /// `d_levels` holds gradients with respect to each level's activation.
  virtual void backward(ParameterStore& params, const EncoderTrace& trace,
                        std::vector<Tensor> d_levels) const = 0;
};

/// Consumes one feature bundle and produces per-voxel class logits.
class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual Tensor forward(const ParameterStore& params, const FeatureBundle& bundle,
                         DecoderTrace* trace) const = 0;
  /// Accumulates parameter gradients; returns gradients for the bundle levels.
  virtual std::vector<Tensor> backward(ParameterStore& params, const DecoderTrace& trace,
                                       const FeatureBundle& bundle,
                                       const Tensor& d_logits) const = 0;
};

/// Stride-2 3x3x3 convolution stages after a full-resolution stem.
class TinyConvEncoder final : public Encoder {
 public:
  TinyConvEncoder(ParameterStore& params, const std::string& prefix, int in_channels,
                  const BackboneConfig& backbone, std::uint64_t seed);
  int in_channels() const override { return in_channels_; }
  std::vector<Tensor> forward(const ParameterStore& params, const Tensor& input,
                              EncoderTrace* trace) const override;
  void backward(ParameterStore& params, const EncoderTrace& trace,
                std::vector<Tensor> d_levels) const override;

 private:
  struct Stage {
    ParameterStore::Id weight, bias;
    int in, out, stride;
  };
  int in_channels_;
  std::vector<Stage> stages_;
};

/// Upsampling stages (transposed conv + skip concatenation + 3x3x3 conv),
/// with a convolutional classification head at full resolution.
class TinyConvDecoder final : public Decoder {
 public:
  TinyConvDecoder(ParameterStore& params, const BackboneConfig& backbone, int num_classes,
                  std::uint64_t seed);
  Tensor forward(const ParameterStore& params, const FeatureBundle& bundle,
                 DecoderTrace* trace) const override;
  std::vector<Tensor> backward(ParameterStore& params, const DecoderTrace& trace,
                               const FeatureBundle& bundle,
                               const Tensor& d_logits) const override;

 private:
  struct Stage {
    ParameterStore::Id up_w, up_b;
    ParameterStore::Id conv_w = -1, conv_b = -1;  // absent at full resolution
    int in, out;
  };
  BackboneConfig backbone_;
  int num_classes_;
  std::vector<Stage> stages_;  // from the bottleneck upward
  ParameterStore::Id head_w, head_b;
};

/// Shapes of every feature level for an input grid.
std::vector<Shape> feature_level_shapes(const BackboneConfig& backbone,
                                        const std::array<std::int64_t, 3>& grid);

/// Training-time record of one forward pass over a modality subset.
struct SubsetPass {
  struct Branch {
    int modality = 0;
    EncoderTrace encoder;
    FeatureBundle bundle;  // after point-wise projection
    std::optional<DecoderTrace> single;
    Tensor single_logits;
  };
  std::vector<Branch> branches;  // ascending modality index
  FeatureBundle fused;
  DecoderTrace fused_trace;
  Tensor fused_logits;
};

/// Upstream gradients for SubsetPass::backward. Empty vectors mean zero.
struct PassGradients {
  std::vector<Tensor> single_logits;         // per branch
  Tensor fused_logits;
  std::vector<FeatureBundle> bundles;        // extra gradient on each branch bundle
};

struct ForwardAllOutputs {
  std::vector<Tensor> modality_logits;
  Tensor fused_logits;
  std::vector<FeatureBundle> modality_bundles;
  FeatureBundle fused_bundle;
};

/// Modality-specific encoders, point-wise projections, one shared decoder.
class MagModel final : public SegmentationNetwork {
 public:
  MagModel(const ExperimentConfig& config, std::uint64_t seed);
  MagModel(const MagModel&) = delete;
  MagModel& operator=(const MagModel&) = delete;
  MagModel(MagModel&&) = default;
  MagModel& operator=(MagModel&&) = default;

  const ExperimentConfig& config() const override { return config_; }
  ParameterStore& params() override { return params_; }
  const ParameterStore& params() const override { return params_; }
  std::uint64_t init_seed() const override { return seed_; }

  Tensor predict(const MultiModalSample& sample, const ModalitySubset& subset) const override {
    return forward_subset(sample, subset);
  }

  FeatureBundle encode(const ModalityVolume& volume) const;
  Tensor decode(const FeatureBundle& bundle) const;
  Tensor forward_subset(const MultiModalSample& sample, const ModalitySubset& subset) const;
  ForwardAllOutputs forward_all(const MultiModalSample& sample) const;

  /// Traced forward over `subset`; with `decode_singles` each branch is
  /// also decoded on its own (the full training pass decodes |S|+1 times).
  SubsetPass forward_traced(const MultiModalSample& sample, const ModalitySubset& subset,
                            bool decode_singles) const;

  /// Accumulates parameter gradients. Returns the gradient that reached the
  /// fused bundle through the fused decoder pass.
  FeatureBundle backward(const SubsetPass& pass, const PassGradients& grads);

 private:
  Tensor checked_input(const ModalityVolume& volume) const;
  FeatureBundle project(int modality, const std::vector<Tensor>& acts) const;

  ExperimentConfig config_;
  std::uint64_t seed_;
  ParameterStore params_;
  std::vector<std::unique_ptr<Encoder>> encoders_;
  std::vector<std::vector<std::pair<ParameterStore::Id, ParameterStore::Id>>> projections_;
  std::unique_ptr<Decoder> decoder_;
};

/// Adds a leading channel axis to a rank-3 grid.
Tensor as_channels(const VoxelGrid& grid);

}  // namespace magms
