// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/params.hpp"

#include <cmath>

#include "magms/rng.hpp"

namespace magms {

ParameterStore::Id ParameterStore::add(std::string name, Shape shape) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  const Id id = static_cast<Id>(params_.size());
  index_.emplace(name, id);
  params_.push_back({std::move(name), std::move(shape), std::vector<float>(n, 0.0f),
                     std::vector<float>(n, 0.0f)});
  return id;
}

std::int64_t ParameterStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

const Parameter& ParameterStore::by_name(const std::string& name) const {
  return at(id_of(name));
}

ParameterStore::Id ParameterStore::id_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
  return it->second;
}

std::span<float> ParameterStore::mutable_value(Id id) {
  ++updates_;
  return params_.at(static_cast<std::size_t>(id)).value;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
}

void ParameterStore::scale_grad(float factor) {
  for (auto& p : params_) {
    for (auto& g : p.grad) g *= factor;
  }
}

void ParameterStore::init_uniform_fan_in(Id id, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : mutable_value(id)) v = static_cast<float>(rng.uniform(-bound, bound));
}

void Adam::step(ParameterStore& store) {
  if (m_.empty()) {
    for (const auto& p : store.all()) {
      m_.emplace_back(p.value.size(), 0.0f);
      v_.emplace_back(p.value.size(), 0.0f);
    }
  }
  if (m_.size() != store.size()) throw ConfigError("optimizer state does not match parameters");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  for (std::size_t k = 0; k < store.size(); ++k) {
    const auto id = static_cast<ParameterStore::Id>(k);
    auto g = store.grad(id);
    auto w = store.mutable_value(id);
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + config_.epsilon));
    }
  }
}

void Adam::restore(std::int64_t steps, std::vector<std::vector<float>> m,
                   std::vector<std::vector<float>> v) {
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace magms
