// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace magms {

ModalitySet::ModalitySet(const std::vector<std::string>& names) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].empty()) throw ConfigError("modality name must not be empty");
    if (!seen.insert(names[i]).second) {
      throw ConfigError("duplicate modality name '" + names[i] + "'");
    }
    members_.push_back({static_cast<int>(i), names[i]});
  }
}

ModalitySet ModalitySet::with_default_names(int count) {
  static const char* kNames[] = {"T1", "T2", "T1c", "FLAIR"};
  std::vector<std::string> names;
  for (int i = 0; i < count; ++i) {
    names.push_back(i < 4 ? std::string(kNames[i]) : "M" + std::to_string(i));
  }
  return ModalitySet(names);
}

const ModalityId& ModalitySet::operator[](int index) const {
  if (index < 0 || index >= size()) {
    throw LookupError("modality index " + std::to_string(index) + " out of range [0, " +
                      std::to_string(size()) + ")");
  }
  return members_[static_cast<std::size_t>(index)];
}

const ModalityId& ModalitySet::by_name(std::string_view name) const {
  for (const auto& m : members_) {
    if (m.name == name) return m;
  }
  throw LookupError("unknown modality '" + std::string(name) + "'");
}

bool ModalitySet::contains(const ModalityId& id) const {
  return id.index >= 0 && id.index < size() &&
         members_[static_cast<std::size_t>(id.index)] == id;
}

std::vector<std::string> ModalitySet::names() const {
  std::vector<std::string> out;
  for (const auto& m : members_) out.push_back(m.name);
  return out;
}

ModalitySubset::ModalitySubset(const ModalitySet& set, std::vector<int> indices) {
  if (indices.empty()) throw PreconditionError("modality subset must be non-empty");
  std::sort(indices.begin(), indices.end());
  if (std::adjacent_find(indices.begin(), indices.end()) != indices.end()) {
    throw ConfigError("modality subset contains duplicates");
  }
  for (int i : indices) members_.push_back(set[i]);
}

ModalitySubset ModalitySubset::all(const ModalitySet& set) {
  std::vector<int> idx(static_cast<std::size_t>(set.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return ModalitySubset(set, std::move(idx));
}

ModalitySubset ModalitySubset::single(const ModalitySet& set, int index) {
  return ModalitySubset(set, {index});
}

ModalitySubset ModalitySubset::parse(const ModalitySet& set, std::string_view text) {
  std::vector<int> idx;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find_first_of("+,", start);
    if (end == std::string_view::npos) end = text.size();
    auto token = text.substr(start, end - start);
    if (!token.empty()) idx.push_back(set.by_name(token).index);
    start = end + 1;
  }
  return ModalitySubset(set, std::move(idx));
}

bool ModalitySubset::contains(int index) const {
  return std::any_of(members_.begin(), members_.end(),
                     [index](const ModalityId& m) { return m.index == index; });
}

std::vector<int> ModalitySubset::indices() const {
  std::vector<int> out;
  for (const auto& m : members_) out.push_back(m.index);
  return out;
}

std::string ModalitySubset::label() const {
  std::string out;
  for (const auto& m : members_) {
    if (!out.empty()) out += '+';
    out += m.name;
  }
  return out;
}

std::vector<ModalitySubset> enumerate_subsets(const ModalitySet& set) {
  const int m = set.size();
  if (m < 1) throw ConfigError("modality set must not be empty");
  if (m > 20) throw ConfigError("too many modalities to enumerate");
  std::vector<std::vector<int>> all;
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    std::vector<int> idx;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) idx.push_back(i);
    }
    all.push_back(std::move(idx));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  std::vector<ModalitySubset> out;
  out.reserve(all.size());
  for (auto& idx : all) out.emplace_back(set, std::move(idx));
  return out;
}

void ModalityVolume::validate() const {
  if (voxels.rank() != 3) throw DimensionError("modality volume must be rank 3");
  for (float v : voxels.values()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite voxel in modality '" + modality.name + "'");
    }
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError("voxel spacing must be positive");
  }
}

void LabelMap::validate() const {
  if (classes.rank() != 3) throw DimensionError("label map must be rank 3");
  if (num_classes < 1 || num_classes > 255) throw DataError("num_classes must be in [1, 255]");
  for (auto v : classes.values()) {
    if (v >= num_classes) {
      throw DataError("label value " + std::to_string(v) + " >= num_classes " +
                      std::to_string(num_classes));
    }
  }
}

std::string_view arm_name(Arm arm) {
  switch (arm) {
    case Arm::magms: return "magms";
    case Arm::mag: return "mag";
    case Arm::zero_fill: return "zero_fill";
    case Arm::mean_fill: return "mean_fill";
    case Arm::dropout_mean: return "dropout_mean";
  }
  return "unknown";
}

Arm parse_arm(std::string_view name) {
  for (Arm a : {Arm::magms, Arm::mag, Arm::zero_fill, Arm::mean_fill, Arm::dropout_mean}) {
    if (arm_name(a) == name) return a;
  }
  throw ConfigError("unknown arm '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  if (modalities.empty()) throw ConfigError("modality set must not be empty");
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in [2, 255]");
  if (!(lambda_kl >= 0.0) || !(gamma_l2 >= 0.0)) {
    throw ConfigError("lambda_kl and gamma_l2 must be nonnegative");
  }
  if (!(kl_temperature > 0.0)) throw ConfigError("kl_temperature must be positive");
  if (!(dice_epsilon > 0.0)) throw ConfigError("dice_epsilon must be positive");
  if (optimizer.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (optimizer.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (backbone.stem_width < 1 || backbone.widths.empty()) {
    throw ConfigError("backbone needs a stem and at least one stage");
  }
  if (backbone.head_kernel < 1 || backbone.head_kernel % 2 == 0) {
    throw ConfigError("backbone head_kernel must be a positive odd number");
  }
  for (int w : backbone.widths) {
    if (w < 1) throw ConfigError("backbone widths must be positive");
  }
  const std::int64_t factor = std::int64_t{1} << backbone.widths.size();
  for (auto d : input_shape) {
    if (d < factor || d % factor != 0) {
      throw ConfigError("input_shape extents must be positive multiples of " +
                        std::to_string(factor));
    }
  }
  if (!(dropout_prob > 0.0 && dropout_prob < 1.0)) {
    throw ConfigError("dropout_prob must lie in (0, 1)");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (arm == Arm::mag && (lambda_kl != 0.0 || gamma_l2 != 0.0)) {
    throw ConfigError("arm 'mag' requires lambda_kl = gamma_l2 = 0");
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["modalities"] = modalities.names();
  j["num_classes"] = num_classes;
  j["input_shape"] = input_shape;
  j["lambda_kl"] = lambda_kl;
  j["gamma_l2"] = gamma_l2;
  j["kl_temperature"] = kl_temperature;
  j["dice_epsilon"] = dice_epsilon;
  j["backbone"] = {{"stem_width", backbone.stem_width},
                   {"widths", backbone.widths},
                   {"head_kernel", backbone.head_kernel}};
  j["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"epsilon", optimizer.epsilon},
                    {"iterations", optimizer.iterations},
                    {"batch_size", optimizer.batch_size},
                    {"seed", optimizer.seed}};
  j["arm"] = std::string(arm_name(arm));
  j["dropout_prob"] = dropout_prob;
  j["augment_flips"] = augment_flips;
  j["checkpoint_every"] = checkpoint_every;
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ConfigError("unknown config key '" + where + item.key() + "'");
    }
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for config key '") + key + "': " + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"modalities", "num_classes", "input_shape", "lambda_kl", "gamma_l2",
                  "kl_temperature", "dice_epsilon", "backbone", "optimizer", "arm",
                  "dropout_prob", "augment_flips", "checkpoint_every"},
                 "");
  ExperimentConfig c;
  if (j.contains("modalities")) {
    std::vector<std::string> names;
    read_opt(j, "modalities", names);
    c.modalities = ModalitySet(names);
  }
  read_opt(j, "num_classes", c.num_classes);
  read_opt(j, "input_shape", c.input_shape);
  read_opt(j, "lambda_kl", c.lambda_kl);
  read_opt(j, "gamma_l2", c.gamma_l2);
  read_opt(j, "kl_temperature", c.kl_temperature);
  read_opt(j, "dice_epsilon", c.dice_epsilon);
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    reject_unknown(b, {"stem_width", "widths", "head_kernel"}, "backbone.");
    read_opt(b, "stem_width", c.backbone.stem_width);
    read_opt(b, "head_kernel", c.backbone.head_kernel);
    read_opt(b, "widths", c.backbone.widths);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown(o,
                   {"learning_rate", "beta1", "beta2", "epsilon", "iterations", "batch_size",
                    "seed"},
                   "optimizer.");
    read_opt(o, "learning_rate", c.optimizer.learning_rate);
    read_opt(o, "beta1", c.optimizer.beta1);
    read_opt(o, "beta2", c.optimizer.beta2);
    read_opt(o, "epsilon", c.optimizer.epsilon);
    read_opt(o, "iterations", c.optimizer.iterations);
    read_opt(o, "batch_size", c.optimizer.batch_size);
    read_opt(o, "seed", c.optimizer.seed);
  }
  if (j.contains("arm")) {
    std::string name;
    read_opt(j, "arm", name);
    c.arm = parse_arm(name);
  }
  read_opt(j, "dropout_prob", c.dropout_prob);
  read_opt(j, "augment_flips", c.augment_flips);
  read_opt(j, "checkpoint_every", c.checkpoint_every);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file '" + path + "'");
  out << to_json().dump(2) << '\n';
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a64(to_json().dump()); }

std::uint64_t ExperimentConfig::hash_without_weights() const {
  auto j = to_json();
  j.erase("lambda_kl");
  j.erase("gamma_l2");
  j.erase("arm");
  return fnv1a64(j.dump());
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace magms
