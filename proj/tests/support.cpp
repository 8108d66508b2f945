// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include <unistd.h>

namespace magms::testing {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto p = fs::temp_directory_path() /
                 ("magms-" + tag + "-" + std::to_string(::getpid()) + "-" +
                  std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

LabelMap random_labels(const Shape& shape, int num_classes, Rng& rng) {
  LabelMap m;
  m.num_classes = num_classes;
  m.classes = LabelGrid(shape);
  for (std::int64_t i = 0; i < m.classes.numel(); ++i) {
    m.classes[i] = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(num_classes)));
  }
  return m;
}

double central_difference(const std::function<double()>& f, double& xi, double h) {
  const double saved = xi;
  xi = saved + h;
  const double up = f();
  xi = saved - h;
  const double down = f();
  xi = saved;
  return (up - down) / (2.0 * h);
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

ExperimentConfig small_config(int modalities, int num_classes, std::int64_t grid) {
  ExperimentConfig c;
  c.modalities = ModalitySet::with_default_names(modalities);
  c.num_classes = num_classes;
  c.input_shape = {grid, grid, grid};
  c.optimizer.iterations = 4;
  c.checkpoint_every = 2;
  return c;
}

Dataset small_dataset(const ExperimentConfig& config, int subjects, std::uint64_t seed,
                      bool complementary) {
  PhantomSpec spec = complementary
                         ? PhantomSpec::complementary(config.modalities.size(), config.num_classes)
                         : PhantomSpec::standard(config.modalities.size(), config.num_classes);
  spec.grid = config.input_shape;
  spec.seed = seed;
  return generate_phantom(spec, subjects, &config.modalities);
}

FeatureBundleD random_bundle(const std::vector<Shape>& levels, Rng& rng) {
  FeatureBundleD b;
  for (const auto& s : levels) b.levels.push_back(random_tensor<double>(s, rng));
  return b;
}

MagInstance random_mag_instance(Rng& rng, int modalities, bool random_weights) {
  const int C = 2 + static_cast<int>(rng.below(3));
  const Shape grid{1 + static_cast<std::int64_t>(rng.below(4)), 1 + static_cast<std::int64_t>(rng.below(4)),
                   1 + static_cast<std::int64_t>(rng.below(4))};
  const Shape logit_shape{C, grid[0], grid[1], grid[2]};
  const std::vector<Shape> levels{{2, grid[0], grid[1], grid[2]}, {3, 1, 2, 1}};
  MagInstance in;
  in.labels = random_labels(grid, C, rng);
  in.outputs.fused_logits = random_tensor<double>(logit_shape, rng, -3.0, 3.0);
  in.outputs.fused_bundle = random_bundle(levels, rng);
  for (int m = 0; m < modalities; ++m) {
    in.outputs.modality_logits.push_back(random_tensor<double>(logit_shape, rng, -3.0, 3.0));
    in.outputs.modality_bundles.push_back(random_bundle(levels, rng));
  }
  if (random_weights) {
    in.weights.lambda_kl = rng.uniform(0.0, 2.0);
    in.weights.gamma_l2 = rng.uniform(0.0, 2.0);
    in.weights.temperature = rng.uniform(0.5, 4.0);
  }
  return in;
}

double max_gradient_error(const std::function<double()>& f, std::span<double> x,
                          std::span<const double> analytic, double h) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], central_difference(f, x[i], h), 1e-7));
  }
  return worst;
}

namespace {

using Voxel = std::array<std::int64_t, 3>;

LabelGrid random_grid(const Shape& shape, int num_classes, Rng& rng) {
  std::vector<double> weight(static_cast<std::size_t>(num_classes));
  for (auto& w : weight) w = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.05, 1.0);
  weight[0] += 0.1;
  double total = 0.0;
  for (double w : weight) total += w;
  LabelGrid g(shape);
  for (std::int64_t i = 0; i < g.numel(); ++i) {
    double u = rng.uniform() * total;
    int c = 0;
    while (c + 1 < num_classes && u >= weight[static_cast<std::size_t>(c)]) {
      u -= weight[static_cast<std::size_t>(c)];
      ++c;
    }
    g[i] = static_cast<std::uint8_t>(c);
  }
  return g;
}

std::set<std::int64_t> members(const LabelGrid& g, int cls) {
  std::set<std::int64_t> out;
  for (std::int64_t i = 0; i < g.numel(); ++i) {
    if (g[i] == cls) out.insert(i);
  }
  return out;
}

double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

MetricInstance random_metric_instance(Rng& rng) {
  const Shape shape{1 + static_cast<std::int64_t>(rng.below(8)),
                    1 + static_cast<std::int64_t>(rng.below(8)),
                    1 + static_cast<std::int64_t>(rng.below(8))};
  MetricInstance inst{random_grid(shape, 3, rng), random_grid(shape, 3, rng), {}};
  for (auto& s : inst.spacing) s = rng.uniform(0.5, 2.5);
  return inst;
}

double oracle_dice(const LabelGrid& pred, const LabelGrid& gt, int cls) {
  const auto p = members(pred, cls), g = members(gt, cls);
  if (p.empty() && g.empty()) return 1.0;
  std::vector<std::int64_t> both;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(both));
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(p.size() + g.size());
}

std::vector<Voxel> oracle_boundary(const LabelGrid& g, int cls) {
  const auto& s = g.shape();
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) -> int {
    if (z < 0 || y < 0 || x < 0 || z >= s[0] || y >= s[1] || x >= s[2]) return -1;
    return g[(z * s[1] + y) * s[2] + x];
  };
  std::vector<Voxel> out;
  for (std::int64_t z = 0; z < s[0]; ++z) {
    for (std::int64_t y = 0; y < s[1]; ++y) {
      for (std::int64_t x = 0; x < s[2]; ++x) {
        if (at(z, y, x) != cls) continue;
        const bool edge = at(z - 1, y, x) != cls || at(z + 1, y, x) != cls ||
                          at(z, y - 1, x) != cls || at(z, y + 1, x) != cls ||
                          at(z, y, x - 1) != cls || at(z, y, x + 1) != cls;
        if (edge) out.push_back({z, y, x});
      }
    }
  }
  return out;
}

std::optional<double> oracle_hd95(const LabelGrid& pred, const LabelGrid& gt, int cls,
                                  const Spacing& sp) {
  const auto a = oracle_boundary(pred, cls), b = oracle_boundary(gt, cls);
  if (a.empty() || b.empty()) return std::nullopt;
  auto dist = [&](const Voxel& u, const Voxel& v) {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double t = static_cast<double>(u[k] - v[k]) * sp[k];
      d += t * t;
    }
    return std::sqrt(d);
  };
  std::vector<double> pooled;
  for (const auto* from : {&a, &b}) {
    const auto& to = from == &a ? b : a;
    for (const auto& u : *from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& v : to) best = std::min(best, dist(u, v));
      pooled.push_back(best);
    }
  }
  return oracle_percentile(pooled, 95.0);
}

}  // namespace magms::testing
