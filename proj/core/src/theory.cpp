// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/theory.hpp"

#include <cmath>

#include "magms/checkpoint.hpp"
#include "magms/evaluation.hpp"
#include "magms/losses.hpp"
#include "magms/rng.hpp"

namespace magms {

ScalarLikelihoodPair::ScalarLikelihoodPair(double p_m, double p_s) : p_m_(p_m), p_s_(p_s) {
  if (!(p_s > 0.0 && p_s < 1.0)) {
    throw DomainError("p_S must lie in (0, 1), got " + std::to_string(p_s));
  }
  if (!(p_m > 0.0 && p_m <= 1.0)) {
    throw DomainError("p_M must lie in (0, 1], got " + std::to_string(p_m));
  }
  if (!(p_m > p_s)) throw DomainError("p_M must exceed p_S");
}

double scalar_entropy(double p) { return p == 0.0 ? 0.0 : -p * std::log(p); }

BoundCheck verify_entropy_bound(const ScalarLikelihoodPair& pair) {
  BoundCheck c;
  c.p_m = pair.p_m();
  c.p_s = pair.p_s();
  c.h_s = scalar_entropy(c.p_s);
  c.h_m = scalar_entropy(c.p_m);
  c.d_kl = c.p_m * std::log(c.p_m / c.p_s);
  c.bound = c.h_m + c.d_kl;
  c.holds = c.h_s < c.bound;
  return c;
}

double sweep_bound(std::int64_t n, std::uint64_t seed, std::vector<BoundCheck>* failures) {
  if (n < 1) throw ConfigError("sweep_bound needs n >= 1");
  Rng rng(derive_seed(seed, "theory.sweep", 0));
  std::int64_t held = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double a = 0.0, b = 0.0;
    do {
      a = rng.uniform();
      b = rng.uniform();
    } while (a == b || a == 0.0 || b == 0.0);
    const auto check = verify_entropy_bound(ScalarLikelihoodPair(std::max(a, b), std::min(a, b)));
    if (check.holds) ++held;
    else if (failures) failures->push_back(check);
  }
  return static_cast<double>(held) / static_cast<double>(n);
}

nlohmann::json BoundComparison::to_json() const {
  auto arm = [](const ArmStatistics& s) {
    return nlohmann::json{{"mean_entropy", s.mean_entropy}, {"mean_kl", s.mean_kl}};
  };
  return {{"subset", subset},
          {"subjects", subjects},
          {"with_distillation", arm(with)},
          {"without_distillation", arm(without)},
          {"kl_reduction", kl_reduction()},
          {"entropy_reduction", entropy_reduction()}};
}

ArmStatistics subset_statistics(const SegmentationNetwork& net,
                                const std::vector<MultiModalSample>& subjects,
                                const ModalitySubset& subset) {
  if (subjects.empty()) throw PreconditionError("no subjects to compare on");
  const auto all = ModalitySubset::all(net.config().modalities);
  ArmStatistics s;
  for (const auto& sample : subjects) {
    const TensorD student = net.predict(sample, subset).cast<double>();
    const TensorD teacher = subset == all ? student : net.predict(sample, all).cast<double>();
    s.mean_kl += pixel_kl(teacher, student, 1.0);
    const TensorD p = softmax_channels(student);
    const std::int64_t N = p.spatial_size();
    double h = 0.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) h += scalar_entropy(p[i]);
    s.mean_entropy += h / static_cast<double>(N);
  }
  s.mean_kl /= static_cast<double>(subjects.size());
  s.mean_entropy /= static_cast<double>(subjects.size());
  return s;
}

BoundComparison distillation_tightens_bound(const SegmentationNetwork& with,
                                            const SegmentationNetwork& without,
                                            const std::vector<MultiModalSample>& subjects,
                                            const ModalitySubset& subset) {
  if (with.config().hash_without_weights() != without.config().hash_without_weights()) {
    throw ComparisonError(
        "checkpoints differ in more than the distillation weights; compare runs that share "
        "data, backbone, optimizer and seed");
  }
  BoundComparison c;
  c.subset = subset.label();
  c.subjects = static_cast<int>(subjects.size());
  c.with = subset_statistics(with, subjects, subset);
  c.without = subset_statistics(without, subjects, subset);
  return c;
}

BoundComparison distillation_tightens_bound(const std::string& checkpoint_with,
                                            const std::string& checkpoint_without,
                                            const Dataset& dataset,
                                            const std::string& subset_label) {
  TrainState a = load_checkpoint(checkpoint_with);
  TrainState b = load_checkpoint(checkpoint_without);
  const auto subjects = align_samples(dataset, a.config.modalities, Split::test);
  const auto subset = ModalitySubset::parse(a.config.modalities, subset_label);
  return distillation_tightens_bound(*a.network, *b.network, subjects, subset);
}

}  // namespace magms
