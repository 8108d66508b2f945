// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "magms/tensor.hpp"
#include "magms/types.hpp"

namespace magms {

class Rng;

struct Parameter {
  std::string name;  // stable hierarchical key, e.g. "encoder.T1.down1.weight"
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
};

/// Owns every trainable array of a model plus named non-trainable buffers.
/// Every mutation through `mutable_value` or an optimizer step bumps the
/// update counter, which evaluation code audits.
class ParameterStore {
 public:
  using Id = int;

  Id add(std::string name, Shape shape);

  std::size_t size() const { return params_.size(); }
  std::int64_t total_elements() const;
  const Parameter& at(Id id) const { return params_.at(static_cast<std::size_t>(id)); }
  const Parameter& by_name(const std::string& name) const;
  Id id_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<Parameter>& all() const { return params_; }

  std::span<const float> value(Id id) const { return at(id).value; }
  std::span<float> grad(Id id) { return params_.at(static_cast<std::size_t>(id)).grad; }
  std::span<float> mutable_value(Id id);

  void zero_grad();
  void scale_grad(float factor);

  /// Uniform(-b, b) with b = sqrt(6 / fan_in) for weights; zero biases.
  void init_uniform_fan_in(Id id, std::int64_t fan_in, Rng& rng);

  std::uint64_t update_count() const { return updates_; }
  void note_update() { ++updates_; }

  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, Id> index_;
  std::map<std::string, Tensor> buffers_;
  std::uint64_t updates_ = 0;
};

/// Adaptive moment estimation, no weight decay.
class Adam {
 public:
  explicit Adam(const OptimizerConfig& config) : config_(config) {}

  void step(ParameterStore& store);

  std::int64_t steps() const { return steps_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }
  void restore(std::int64_t steps, std::vector<std::vector<float>> m,
               std::vector<std::vector<float>> v);

 private:
  OptimizerConfig config_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace magms
