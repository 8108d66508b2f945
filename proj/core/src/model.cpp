// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "magms/nn.hpp"
#include "magms/rng.hpp"

namespace magms {

namespace {

nn::ConvGeometry head_geometry(const BackboneConfig& backbone, int num_classes) {
  return {2 * backbone.level_width(0), num_classes, backbone.head_kernel, 1};
}

void init_param(ParameterStore& params, ParameterStore::Id id, std::int64_t fan_in,
                std::uint64_t seed) {
  Rng rng(seed, "init." + params.at(id).name);
  params.init_uniform_fan_in(id, fan_in, rng);
}

template <class T>
std::span<const T> cspan(const std::vector<T>& v) {
  return std::span<const T>(v);
}

void add_into(Tensor& acc, const Tensor& g) {
  if (acc.empty()) {
    acc = g;
  } else {
    acc += g;
  }
}

}  // namespace

FeatureBundle fuse(std::span<const FeatureBundle> bundles) {
  if (bundles.empty()) throw PreconditionError("fuse requires at least one bundle");
  std::vector<const FeatureBundle*> order;
  for (const auto& b : bundles) order.push_back(&b);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->sources < b->sources;
  });
  const auto& first = *order.front();
  for (const auto* b : order) {
    if (b->levels.size() != first.levels.size()) {
      throw DimensionError("fuse: bundles have different level counts");
    }
    for (std::size_t l = 0; l < first.levels.size(); ++l) {
      first.levels[l].require_same_shape(b->levels[l], "fuse");
    }
  }
  FeatureBundle out = first;
  for (std::size_t k = 1; k < order.size(); ++k) {
    for (std::size_t l = 0; l < out.levels.size(); ++l) out.levels[l] += order[k]->levels[l];
    out.sources.insert(out.sources.end(), order[k]->sources.begin(), order[k]->sources.end());
  }
  if (order.size() > 1) {
    const float n = static_cast<float>(order.size());
    for (auto& level : out.levels) {
      for (auto& v : level.values()) v /= n;
    }
  }
  std::sort(out.sources.begin(), out.sources.end());
  out.sources.erase(std::unique(out.sources.begin(), out.sources.end()), out.sources.end());
  return out;
}

std::vector<Shape> feature_level_shapes(const BackboneConfig& backbone,
                                        const std::array<std::int64_t, 3>& grid) {
  std::vector<Shape> out;
  for (int level = 0; level < backbone.levels(); ++level) {
    const std::int64_t f = std::int64_t{1} << level;
    out.push_back({backbone.level_width(level), grid[0] / f, grid[1] / f, grid[2] / f});
  }
  return out;
}

Tensor as_channels(const VoxelGrid& grid) {
  if (grid.rank() != 3) throw DimensionError("expected a rank-3 grid");
  return Tensor(Shape{1, grid.dim(0), grid.dim(1), grid.dim(2)}, grid.storage());
}

// ---------------------------------------------------------------------------

TinyConvEncoder::TinyConvEncoder(ParameterStore& params, const std::string& prefix,
                                 int in_channels, const BackboneConfig& backbone,
                                 std::uint64_t seed)
    : in_channels_(in_channels) {
  int in = in_channels;
  for (int level = 0; level < backbone.levels(); ++level) {
    const int out = backbone.level_width(level);
    const std::string name = prefix + (level == 0 ? std::string(".stem")
                                                  : ".down" + std::to_string(level));
    Stage s{params.add(name + ".weight", {out, in, 3, 3, 3}), params.add(name + ".bias", {out}),
            in, out, level == 0 ? 1 : 2};
    init_param(params, s.weight, std::int64_t{in} * 27, seed);
    stages_.push_back(s);
    in = out;
  }
}

std::vector<Tensor> TinyConvEncoder::forward(const ParameterStore& params, const Tensor& input,
                                             EncoderTrace* trace) const {
  std::vector<Tensor> acts;
  const Tensor* x = &input;
  for (const auto& s : stages_) {
    Tensor y = nn::conv3d_forward<float>(*x, params.value(s.weight), params.value(s.bias),
                                         {s.in, s.out, 3, s.stride});
    nn::relu_inplace(y);
    acts.push_back(std::move(y));
    x = &acts.back();
  }
  if (trace) {
    trace->input = input;
    trace->activations = acts;
  }
  return acts;
}

void TinyConvEncoder::backward(ParameterStore& params, const EncoderTrace& trace,
                               std::vector<Tensor> d_levels) const {
  Tensor carry;
  for (int k = static_cast<int>(stages_.size()) - 1; k >= 0; --k) {
    const auto& s = stages_[static_cast<std::size_t>(k)];
    Tensor g = std::move(d_levels.at(static_cast<std::size_t>(k)));
    if (g.empty()) g = Tensor(trace.activations[static_cast<std::size_t>(k)].shape());
    if (!carry.empty()) g += carry;
    nn::relu_backward_inplace(trace.activations[static_cast<std::size_t>(k)], g);
    const Tensor& x = k == 0 ? trace.input : trace.activations[static_cast<std::size_t>(k - 1)];
    Tensor dx;
    nn::conv3d_backward<float>(x, g, params.value(s.weight), {s.in, s.out, 3, s.stride},
                               params.grad(s.weight), params.grad(s.bias),
                               k == 0 ? nullptr : &dx);
    carry = std::move(dx);
  }
}

// ---------------------------------------------------------------------------

TinyConvDecoder::TinyConvDecoder(ParameterStore& params, const BackboneConfig& backbone,
                                 int num_classes, std::uint64_t seed)
    : backbone_(backbone), num_classes_(num_classes) {
  for (int level = backbone.levels() - 1; level >= 1; --level) {
    const int in = backbone.level_width(level), out = backbone.level_width(level - 1);
    const std::string name = "decoder.up" + std::to_string(level);
    Stage s{params.add(name + ".weight", {in, out, 2, 2, 2}), params.add(name + ".bias", {out}),
            -1, -1, in, out};
    init_param(params, s.up_w, std::int64_t{in} * 8, seed);
    if (level - 1 > 0) {
      const std::string cname = "decoder.conv" + std::to_string(level - 1);
      s.conv_w = params.add(cname + ".weight", {out, 2 * out, 3, 3, 3});
      s.conv_b = params.add(cname + ".bias", {out});
      init_param(params, s.conv_w, std::int64_t{2 * out} * 27, seed);
    }
    stages_.push_back(s);
  }
  const int head_in = 2 * backbone.level_width(0), k = backbone.head_kernel;
  head_w = params.add("decoder.head.weight", {num_classes, head_in, k, k, k});
  head_b = params.add("decoder.head.bias", {num_classes});
  init_param(params, head_w, std::int64_t{head_in} * k * k * k, seed);
}

Tensor TinyConvDecoder::forward(const ParameterStore& params, const FeatureBundle& bundle,
                                DecoderTrace* trace) const {
  if (static_cast<int>(bundle.levels.size()) != backbone_.levels()) {
    throw DimensionError("decoder expects " + std::to_string(backbone_.levels()) +
                         " feature levels, got " + std::to_string(bundle.levels.size()));
  }
  if (bundle.bottleneck().rank() != 4 ||
      bundle.bottleneck().dim(0) != backbone_.level_width(backbone_.levels() - 1)) {
    throw DimensionError("decoder bottleneck shape " + shape_str(bundle.bottleneck().shape()));
  }
  if (trace) *trace = DecoderTrace{};
  Tensor h = bundle.bottleneck();
  int level = backbone_.levels() - 1;
  for (const auto& s : stages_) {
    const Tensor& skip = bundle.levels[static_cast<std::size_t>(level - 1)];
    Tensor u = nn::upconv2x_forward<float>(h, params.value(s.up_w), params.value(s.up_b), s.in,
                                           s.out);
    nn::relu_inplace(u);
    if (skip.shape() != u.shape()) {
      throw DimensionError("decoder skip level " + std::to_string(level - 1) + " shape " +
                           shape_str(skip.shape()) + ", expected " + shape_str(u.shape()));
    }
    Tensor c = nn::concat_channels(u, skip);
    if (trace) {
      trace->stage_inputs.push_back(std::move(h));
      trace->upsampled.push_back(std::move(u));
    }
    if (s.conv_w >= 0) {
      h = nn::conv3d_forward<float>(c, params.value(s.conv_w), params.value(s.conv_b),
                                    {2 * s.out, s.out, 3, 1});
      nn::relu_inplace(h);
    } else {
      h = nn::conv3d_forward<float>(c, params.value(head_w), params.value(head_b),
                                    head_geometry(backbone_, num_classes_));
    }
    if (trace) trace->concatenated.push_back(std::move(c));
    --level;
  }
  return h;
}

std::vector<Tensor> TinyConvDecoder::backward(ParameterStore& params, const DecoderTrace& trace,
                                              const FeatureBundle& bundle,
                                              const Tensor& d_logits) const {
  std::vector<Tensor> d_levels(bundle.levels.size());
  Tensor g = d_logits;
  for (int k = static_cast<int>(stages_.size()) - 1; k >= 0; --k) {
    const auto& s = stages_[static_cast<std::size_t>(k)];
    const auto ks = static_cast<std::size_t>(k);
    const Tensor& c = trace.concatenated[ks];
    Tensor dc;
    if (s.conv_w >= 0) {
      // g is the gradient wrt this stage's post-ReLU output (next stage input).
      const Tensor& out = trace.stage_inputs[ks + 1];
      nn::relu_backward_inplace(out, g);
      nn::conv3d_backward<float>(c, g, params.value(s.conv_w), {2 * s.out, s.out, 3, 1},
                                 params.grad(s.conv_w), params.grad(s.conv_b), &dc);
    } else {
      nn::conv3d_backward<float>(c, g, params.value(head_w),
                                 head_geometry(backbone_, num_classes_), params.grad(head_w),
                                 params.grad(head_b), &dc);
    }
    Tensor du, dskip;
    nn::split_channels(dc, s.out, du, dskip);
    const int skip_level = backbone_.levels() - 2 - k;
    d_levels[static_cast<std::size_t>(skip_level)] = std::move(dskip);
    nn::relu_backward_inplace(trace.upsampled[ks], du);
    Tensor dh;
    nn::upconv2x_backward<float>(trace.stage_inputs[ks], du, params.value(s.up_w), s.in, s.out,
                                 params.grad(s.up_w), params.grad(s.up_b), &dh);
    g = std::move(dh);
  }
  d_levels.back() = std::move(g);
  return d_levels;
}

// ---------------------------------------------------------------------------

MagModel::MagModel(const ExperimentConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  const auto& bb = config_.backbone;
  for (const auto& m : config_.modalities) {
    encoders_.push_back(
        std::make_unique<TinyConvEncoder>(params_, "encoder." + m.name, 1, bb, seed));
  }
  for (const auto& m : config_.modalities) {
    std::vector<std::pair<ParameterStore::Id, ParameterStore::Id>> levels;
    for (int level = 0; level < bb.levels(); ++level) {
      const int w = bb.level_width(level);
      const std::string name = "projection." + m.name + ".level" + std::to_string(level);
      auto wid = params_.add(name + ".weight", {w, w});
      auto bid = params_.add(name + ".bias", {w});
      init_param(params_, wid, w, seed);
      levels.emplace_back(wid, bid);
    }
    projections_.push_back(std::move(levels));
  }
  decoder_ = std::make_unique<TinyConvDecoder>(params_, bb, config_.num_classes, seed);
}

Tensor MagModel::checked_input(const ModalityVolume& volume) const {
  if (!config_.modalities.contains(volume.modality)) {
    throw LookupError("modality '" + volume.modality.name + "' is not part of the model");
  }
  const auto& g = config_.input_shape;
  if (volume.voxels.shape() != Shape{g[0], g[1], g[2]}) {
    throw DimensionError("volume shape " + shape_str(volume.voxels.shape()) +
                         " does not match configured input " + shape_str({g[0], g[1], g[2]}));
  }
  return as_channels(volume.voxels);
}

FeatureBundle MagModel::project(int modality, const std::vector<Tensor>& acts) const {
  FeatureBundle out;
  out.sources = {modality};
  const auto& proj = projections_.at(static_cast<std::size_t>(modality));
  for (std::size_t l = 0; l < acts.size(); ++l) {
    out.levels.push_back(nn::pointwise_forward<float>(acts[l], params_.value(proj[l].first),
                                                      params_.value(proj[l].second),
                                                      static_cast<int>(acts[l].dim(0))));
  }
  return out;
}

FeatureBundle MagModel::encode(const ModalityVolume& volume) const {
  const Tensor x = checked_input(volume);
  const int m = volume.modality.index;
  return project(m, encoders_[static_cast<std::size_t>(m)]->forward(params_, x, nullptr));
}

Tensor MagModel::decode(const FeatureBundle& bundle) const {
  return decoder_->forward(params_, bundle, nullptr);
}

Tensor MagModel::forward_subset(const MultiModalSample& sample,
                                const ModalitySubset& subset) const {
  std::vector<FeatureBundle> bundles;
  for (const auto& m : subset) bundles.push_back(encode(sample.volume(m)));
  return decode(fuse(bundles));
}

SubsetPass MagModel::forward_traced(const MultiModalSample& sample,
                                    const ModalitySubset& subset, bool decode_singles) const {
  SubsetPass pass;
  // Modalities one by one, then the fused pass.
  for (const auto& m : subset) {
    SubsetPass::Branch b;
    b.modality = m.index;
    const Tensor x = checked_input(sample.volume(m));
    auto acts = encoders_[static_cast<std::size_t>(m.index)]->forward(params_, x, &b.encoder);
    b.bundle = project(m.index, acts);
    if (decode_singles) {
      b.single.emplace();
      b.single_logits = decoder_->forward(params_, b.bundle, &*b.single);
    }
    pass.branches.push_back(std::move(b));
  }
  std::vector<FeatureBundle> bundles;
  for (const auto& b : pass.branches) bundles.push_back(b.bundle);
  pass.fused = fuse(bundles);
  pass.fused_logits = decoder_->forward(params_, pass.fused, &pass.fused_trace);
  return pass;
}

ForwardAllOutputs MagModel::forward_all(const MultiModalSample& sample) const {
  sample.validate(config_.modalities);
  auto pass = forward_traced(sample, ModalitySubset::all(config_.modalities), true);
  ForwardAllOutputs out;
  for (auto& b : pass.branches) {
    out.modality_logits.push_back(std::move(b.single_logits));
    out.modality_bundles.push_back(std::move(b.bundle));
  }
  out.fused_logits = std::move(pass.fused_logits);
  out.fused_bundle = std::move(pass.fused);
  return out;
}

FeatureBundle MagModel::backward(const SubsetPass& pass, const PassGradients& grads) {
  FeatureBundle d_fused;
  if (!grads.fused_logits.empty()) {
    d_fused.levels = decoder_->backward(params_, pass.fused_trace, pass.fused, grads.fused_logits);
  } else {
    for (const auto& l : pass.fused.levels) d_fused.levels.emplace_back(l.shape());
  }
  d_fused.sources = pass.fused.sources;
  const float share = 1.0f / static_cast<float>(pass.branches.size());
  for (std::size_t j = 0; j < pass.branches.size(); ++j) {
    const auto& b = pass.branches[j];
    std::vector<Tensor> d_bundle(b.bundle.levels.size());
    if (b.single && j < grads.single_logits.size() && !grads.single_logits[j].empty()) {
      d_bundle = decoder_->backward(params_, *b.single, b.bundle, grads.single_logits[j]);
    }
    if (j < grads.bundles.size()) {
      for (std::size_t l = 0; l < d_bundle.size(); ++l) {
        if (!grads.bundles[j].levels.empty()) add_into(d_bundle[l], grads.bundles[j].levels[l]);
      }
    }
    for (std::size_t l = 0; l < d_bundle.size(); ++l) {
      Tensor g = d_fused.levels[l];
      for (auto& v : g.values()) v *= share;
      add_into(d_bundle[l], g);
    }
    // Back through the point-wise projections.
    const auto& proj = projections_.at(static_cast<std::size_t>(b.modality));
    std::vector<Tensor> d_acts(d_bundle.size());
    for (std::size_t l = 0; l < d_bundle.size(); ++l) {
      const Tensor& act = b.encoder.activations[l];
      nn::pointwise_backward<float>(act, d_bundle[l], params_.value(proj[l].first),
                                    static_cast<int>(act.dim(0)), params_.grad(proj[l].first),
                                    params_.grad(proj[l].second), &d_acts[l]);
    }
    encoders_[static_cast<std::size_t>(b.modality)]->backward(params_, b.encoder,
                                                              std::move(d_acts));
  }
  return d_fused;
}

}  // namespace magms
