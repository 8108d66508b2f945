// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace magms {

namespace {

void require_same(const LabelGrid& a, const LabelGrid& b, const char* what) {
  if (a.rank() != 3 || a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform along one line (Felzenszwalb & Huttenlocher),
// sample pitch `step`. f holds squared distances (inf where unknown).
void edt_1d(const std::vector<double>& f, double step, std::vector<double>& out,
            std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  out.assign(static_cast<std::size_t>(n), kInf);
  int k = -1;
  const double s2 = step * step;
  for (int q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    while (true) {
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -kInf;
        z[1] = kInf;
        break;
      }
      const int p = v[static_cast<std::size_t>(k)];
      const double s = ((f[static_cast<std::size_t>(q)] + s2 * q * q) -
                        (f[static_cast<std::size_t>(p)] + s2 * p * p)) /
                       (2.0 * s2 * (q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
        continue;
      }
      ++k;
      v[static_cast<std::size_t>(k)] = q;
      z[static_cast<std::size_t>(k)] = s;
      z[static_cast<std::size_t>(k) + 1] = kInf;
      break;
    }
  }
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
    const int p = v[static_cast<std::size_t>(j)];
    const double d = step * (q - p);
    out[static_cast<std::size_t>(q)] = d * d + f[static_cast<std::size_t>(p)];
  }
}

}  // namespace

std::vector<double> dice_score(const LabelGrid& pred, const LabelGrid& gt, int num_classes) {
  require_same(pred, gt, "dice_score");
  std::vector<std::int64_t> inter(static_cast<std::size_t>(num_classes), 0), np(inter), ng(inter);
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < num_classes) ++np[static_cast<std::size_t>(p)];
    if (g < num_classes) ++ng[static_cast<std::size_t>(g)];
    if (p == g && p < num_classes) ++inter[static_cast<std::size_t>(p)];
  }
  std::vector<double> out;
  for (int c = 0; c < num_classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    const std::int64_t denom = np[k] + ng[k];
    out.push_back(denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter[k]) / static_cast<double>(denom));
  }
  return out;
}

std::vector<std::array<std::int64_t, 3>> boundary_voxels(const LabelGrid& labels, int cls) {
  const std::int64_t D = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
  auto is = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    if (z < 0 || z >= D || y < 0 || y >= H || x < 0 || x >= W) return false;
    return labels[(z * H + y) * W + x] == cls;
  };
  std::vector<std::array<std::int64_t, 3>> out;
  for (std::int64_t z = 0; z < D; ++z) {
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        if (!is(z, y, x)) continue;
        if (!is(z - 1, y, x) || !is(z + 1, y, x) || !is(z, y - 1, x) || !is(z, y + 1, x) ||
            !is(z, y, x - 1) || !is(z, y, x + 1)) {
          out.push_back({z, y, x});
        }
      }
    }
  }
  return out;
}

std::vector<double> distance_to_sites(const std::vector<bool>& sites, const Shape& shape,
                                      const Spacing& spacing) {
  const std::int64_t D = shape.at(0), H = shape.at(1), W = shape.at(2);
  std::vector<double> g(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) g[i] = sites[i] ? 0.0 : kInf;
  std::vector<double> line, out;
  std::vector<int> v;
  std::vector<double> z;
  // Along x, then y, then z.
  for (std::int64_t a = 0; a < D * H; ++a) {
    line.assign(g.begin() + a * W, g.begin() + (a + 1) * W);
    edt_1d(line, spacing[2], out, v, z);
    std::copy(out.begin(), out.end(), g.begin() + a * W);
  }
  line.resize(static_cast<std::size_t>(H));
  for (std::int64_t zz = 0; zz < D; ++zz) {
    for (std::int64_t x = 0; x < W; ++x) {
      for (std::int64_t y = 0; y < H; ++y) line[static_cast<std::size_t>(y)] = g[(zz * H + y) * W + x];
      edt_1d(line, spacing[1], out, v, z);
      for (std::int64_t y = 0; y < H; ++y) g[(zz * H + y) * W + x] = out[static_cast<std::size_t>(y)];
    }
  }
  line.resize(static_cast<std::size_t>(D));
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      for (std::int64_t zz = 0; zz < D; ++zz) line[static_cast<std::size_t>(zz)] = g[(zz * H + y) * W + x];
      edt_1d(line, spacing[0], out, v, z);
      for (std::int64_t zz = 0; zz < D; ++zz) g[(zz * H + y) * W + x] = out[static_cast<std::size_t>(zz)];
    }
  }
  for (auto& d : g) d = std::sqrt(d);
  return g;
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

std::optional<double> hd95(const LabelGrid& pred, const LabelGrid& gt, int cls,
                           const Spacing& spacing) {
  require_same(pred, gt, "hd95");
  const auto bp = boundary_voxels(pred, cls);
  const auto bg = boundary_voxels(gt, cls);
  if (bp.empty() || bg.empty()) return std::nullopt;
  const auto& shape = pred.shape();
  const std::int64_t H = shape[1], W = shape[2];
  auto mask_of = [&](const auto& pts) {
    std::vector<bool> m(static_cast<std::size_t>(pred.numel()), false);
    for (const auto& p : pts) m[static_cast<std::size_t>((p[0] * H + p[1]) * W + p[2])] = true;
    return m;
  };
  const auto to_gt = distance_to_sites(mask_of(bg), shape, spacing);
  const auto to_pred = distance_to_sites(mask_of(bp), shape, spacing);
  std::vector<double> pooled;
  pooled.reserve(bp.size() + bg.size());
  for (const auto& p : bp) pooled.push_back(to_gt[static_cast<std::size_t>((p[0] * H + p[1]) * W + p[2])]);
  for (const auto& g : bg) pooled.push_back(to_pred[static_cast<std::size_t>((g[0] * H + g[1]) * W + g[2])]);
  return percentile_linear(std::move(pooled), 95.0);
}

LabelGrid argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw DimensionError("argmax_labels expects (C, D, H, W) logits");
  const std::int64_t C = logits.dim(0), N = logits.spatial_size();
  if (C > 256) throw DimensionError("too many classes for 8-bit labels");
  LabelGrid out(Shape{logits.dim(1), logits.dim(2), logits.dim(3)});
  for (std::int64_t v = 0; v < N; ++v) {
    int best = 0;
    float bv = logits[v];
    for (std::int64_t c = 1; c < C; ++c) {
      if (logits[c * N + v] > bv) {
        bv = logits[c * N + v];
        best = static_cast<int>(c);
      }
    }
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

MetricResult evaluate_prediction(const LabelGrid& pred, const LabelGrid& gt, int num_classes,
                                 const Spacing& spacing) {
  MetricResult r;
  const auto dice = dice_score(pred, gt, num_classes);
  double hd_sum = 0.0;
  int hd_n = 0;
  for (int c = 1; c < num_classes; ++c) {
    r.per_class_dice.push_back(dice[static_cast<std::size_t>(c)]);
    auto h = hd95(pred, gt, c, spacing);
    if (h) {
      hd_sum += *h;
      ++hd_n;
    }
    r.per_class_hd95.push_back(h);
  }
  double s = 0.0;
  for (double d : r.per_class_dice) s += d;
  r.mean_dice = r.per_class_dice.empty() ? 0.0 : s / static_cast<double>(r.per_class_dice.size());
  if (hd_n > 0) r.mean_hd95 = hd_sum / hd_n;
  return r;
}

}  // namespace magms
