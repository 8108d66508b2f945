// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include "magms/losses.hpp"

#include <cmath>
#include <limits>

namespace magms {

namespace {

void require_logits(const TensorD& logits, const char* what) {
  if (logits.rank() != 4) {
    throw DimensionError(std::string(what) + ": logits must be rank 4, got " +
                         shape_str(logits.shape()));
  }
  for (double v : logits.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite logits");
  }
}

// log-softmax over channels of logits / temperature.
TensorD log_softmax_channels(const TensorD& logits, double temperature) {
  const std::int64_t C = logits.dim(0), N = logits.spatial_size();
  TensorD out(logits.shape());
  const double* z = logits.data();
  double* o = out.data();
  for (std::int64_t v = 0; v < N; ++v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, z[c * N + v] / temperature);
    double s = 0.0;
    for (std::int64_t c = 0; c < C; ++c) s += std::exp(z[c * N + v] / temperature - mx);
    const double lse = mx + std::log(s);
    for (std::int64_t c = 0; c < C; ++c) o[c * N + v] = z[c * N + v] / temperature - lse;
  }
  return out;
}

}  // namespace

TensorD softmax_channels(const TensorD& logits, double temperature) {
  TensorD p = log_softmax_channels(logits, temperature);
  for (auto& v : p.values()) v = std::exp(v);
  return p;
}

DiceCeParts dice_ce_parts(const LabelMap& labels, const TensorD& logits, double epsilon,
                          TensorD* grad) {
  require_logits(logits, "dice_ce");
  const std::int64_t C = logits.dim(0), N = logits.spatial_size();
  if (C != labels.num_classes) {
    throw DimensionError("dice_ce: logits have " + std::to_string(C) + " channels, labels " +
                         std::to_string(labels.num_classes) + " classes");
  }
  const auto& lab = labels.classes;
  if (Shape{logits.dim(1), logits.dim(2), logits.dim(3)} != lab.shape()) {
    throw DimensionError("dice_ce: logits " + shape_str(logits.shape()) + " vs labels " +
                         shape_str(lab.shape()));
  }
  const TensorD logp = log_softmax_channels(logits, 1.0);
  TensorD prob = logp;
  for (auto& v : prob.values()) v = std::exp(v);
  std::vector<double> inter(static_cast<std::size_t>(C), 0.0), psum(inter), gsum(inter);
  double ce = 0.0;
  for (std::int64_t v = 0; v < N; ++v) {
    const int y = lab[v];
    if (y >= C) throw DataError("dice_ce: label value out of range");
    for (std::int64_t c = 0; c < C; ++c) psum[static_cast<std::size_t>(c)] += prob[c * N + v];
    inter[static_cast<std::size_t>(y)] += prob[y * N + v];
    gsum[static_cast<std::size_t>(y)] += 1.0;
    ce -= logp[y * N + v];
  }
  ce /= static_cast<double>(N);
  double dice_sum = 0.0;
  std::vector<double> num(static_cast<std::size_t>(C)), den(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) {
    const auto k = static_cast<std::size_t>(c);
    num[k] = 2.0 * inter[k] + epsilon;
    den[k] = psum[k] + gsum[k] + epsilon;
    dice_sum += num[k] / den[k];
  }
  DiceCeParts parts{1.0 - dice_sum / static_cast<double>(C), ce};
  if (grad) {
    *grad = TensorD(logits.shape());
    double* g = grad->data();
    std::vector<double> dp(static_cast<std::size_t>(C)), p(static_cast<std::size_t>(C));
    const double invC = 1.0 / static_cast<double>(C), invN = 1.0 / static_cast<double>(N);
    for (std::int64_t v = 0; v < N; ++v) {
      const int y = lab[v];
      double dot = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        const auto k = static_cast<std::size_t>(c);
        p[k] = prob[c * N + v];
        const double gc = c == y ? 1.0 : 0.0;
        dp[k] = -invC * (2.0 * gc * den[k] - num[k]) / (den[k] * den[k]);
        dot += p[k] * dp[k];
      }
      for (std::int64_t c = 0; c < C; ++c) {
        const auto k = static_cast<std::size_t>(c);
        const double gc = c == y ? 1.0 : 0.0;
        g[c * N + v] = p[k] * (dp[k] - dot) + (p[k] - gc) * invN;
      }
    }
  }
  return parts;
}

double pixel_kl(const TensorD& teacher, const TensorD& student, double temperature,
                TensorD* grad_student) {
  if (!(temperature > 0.0)) throw DomainError("pixel_kl: temperature must be positive");
  require_logits(teacher, "pixel_kl");
  require_logits(student, "pixel_kl");
  teacher.require_same_shape(student, "pixel_kl");
  const std::int64_t C = teacher.dim(0), N = teacher.spatial_size();
  const TensorD lt = log_softmax_channels(teacher, temperature);
  const TensorD ls = log_softmax_channels(student, temperature);
  TensorD pt = lt;
  for (auto& v : pt.values()) v = std::exp(v);
  double kl = 0.0;
  for (std::int64_t i = 0; i < C * N; ++i) kl += pt[i] * (lt[i] - ls[i]);
  kl /= static_cast<double>(N);
  if (grad_student) {
    *grad_student = TensorD(student.shape());
    const double scale = 1.0 / (temperature * static_cast<double>(N));
    for (std::int64_t i = 0; i < C * N; ++i) {
      (*grad_student)[i] = (std::exp(ls[i]) - pt[i]) * scale;
    }
  }
  // Rounding can leave a tiny negative value for identical distributions.
  return std::max(kl, 0.0);
}

double feature_l2(const FeatureBundleD& student, const FeatureBundleD& teacher,
                  FeatureBundleD* grad_student) {
  if (student.levels.size() != teacher.levels.size()) {
    throw DimensionError("feature_l2: bundles have different level counts");
  }
  for (std::size_t l = 0; l < student.levels.size(); ++l) {
    student.levels[l].require_same_shape(teacher.levels[l], "feature_l2");
  }
  const double n = static_cast<double>(student.numel());
  if (n == 0) throw DimensionError("feature_l2: empty bundles");
  double sum = 0.0;
  for (std::size_t l = 0; l < student.levels.size(); ++l) {
    const auto& s = student.levels[l];
    const auto& t = teacher.levels[l];
    for (std::int64_t i = 0; i < s.numel(); ++i) {
      const double d = s[i] - t[i];
      sum += d * d;
    }
  }
  if (grad_student) {
    grad_student->levels.clear();
    grad_student->sources = student.sources;
    for (std::size_t l = 0; l < student.levels.size(); ++l) {
      const auto& s = student.levels[l];
      const auto& t = teacher.levels[l];
      TensorD g(s.shape());
      for (std::int64_t i = 0; i < s.numel(); ++i) g[i] = 2.0 * (s[i] - t[i]) / n;
      grad_student->levels.push_back(std::move(g));
    }
  }
  return sum / n;
}

ModalityLossTerms modality_loss(const LabelMap& labels, const TensorD& fused_logits,
                                const TensorD& student_logits,
                                const FeatureBundleD& student_bundle,
                                const FeatureBundleD& fused_bundle, const LossWeights& w,
                                ModalityLossGrads* grads) {
  ModalityLossTerms t;
  TensorD g_dc, g_kl;
  FeatureBundleD g_l2;
  t.dice_ce = dice_ce(labels, student_logits, w.dice_epsilon, grads ? &g_dc : nullptr);
  t.kl = pixel_kl(fused_logits, student_logits, w.temperature, grads ? &g_kl : nullptr);
  t.feature_l2 = feature_l2(student_bundle, fused_bundle, grads ? &g_l2 : nullptr);
  t.combined = t.dice_ce + w.lambda_kl * t.kl + w.gamma_l2 * t.feature_l2;
  if (grads) {
    grads->logits = std::move(g_dc);
    for (std::int64_t i = 0; i < grads->logits.numel(); ++i) {
      grads->logits[i] += w.lambda_kl * g_kl[i];
    }
    for (auto& level : g_l2.levels) {
      for (auto& v : level.values()) v *= w.gamma_l2;
    }
    grads->bundle = std::move(g_l2);
  }
  return t;
}

double LossBreakdown::recomputed_total(const LossWeights& w) const {
  double total = fused_dice_ce;
  for (const auto& m : per_modality) total += m.dice_ce + w.lambda_kl * m.kl + w.gamma_l2 * m.feature_l2;
  return total;
}

nlohmann::json LossBreakdown::to_json(const ModalitySet& modalities) const {
  nlohmann::json j;
  j["total"] = total;
  j["fused_dice_ce"] = fused_dice_ce;
  j["modalities"] = nlohmann::json::array();
  for (std::size_t i = 0; i < per_modality.size(); ++i) {
    const auto& m = per_modality[i];
    j["modalities"].push_back({{"name", modalities[static_cast<int>(i)].name},
                               {"dice_ce", m.dice_ce},
                               {"kl", m.kl},
                               {"feature_l2", m.feature_l2},
                               {"combined", m.combined}});
  }
  return j;
}

LossBreakdown LossBreakdown::from_json(const nlohmann::json& j) {
  LossBreakdown b;
  b.total = j.at("total").get<double>();
  b.fused_dice_ce = j.at("fused_dice_ce").get<double>();
  for (const auto& m : j.at("modalities")) {
    b.per_modality.push_back({m.at("dice_ce").get<double>(), m.at("kl").get<double>(),
                              m.at("feature_l2").get<double>(), m.at("combined").get<double>()});
  }
  return b;
}

LossBreakdown LossBreakdown::mean(const std::vector<LossBreakdown>& items) {
  if (items.empty()) throw PreconditionError("cannot average zero loss breakdowns");
  LossBreakdown out;
  out.per_modality.resize(items.front().per_modality.size());
  const double n = static_cast<double>(items.size());
  for (const auto& b : items) {
    out.fused_dice_ce += b.fused_dice_ce / n;
    out.total += b.total / n;
    for (std::size_t i = 0; i < out.per_modality.size(); ++i) {
      out.per_modality[i].dice_ce += b.per_modality[i].dice_ce / n;
      out.per_modality[i].kl += b.per_modality[i].kl / n;
      out.per_modality[i].feature_l2 += b.per_modality[i].feature_l2 / n;
      out.per_modality[i].combined += b.per_modality[i].combined / n;
    }
  }
  return out;
}

ForwardOutputsD ForwardOutputsD::from(const ForwardAllOutputs& o) {
  ForwardOutputsD d;
  for (const auto& l : o.modality_logits) d.modality_logits.push_back(l.cast<double>());
  d.fused_logits = o.fused_logits.cast<double>();
  for (const auto& b : o.modality_bundles) d.modality_bundles.push_back(b.cast<double>());
  d.fused_bundle = o.fused_bundle.cast<double>();
  return d;
}

LossBreakdown mag_loss_with_teacher(const LabelMap& labels, const ForwardOutputsD& outputs,
                                    const TensorD& teacher_logits,
                                    const FeatureBundleD& teacher_bundle,
                                    const LossWeights& weights, MagLossGrads* grads) {
  if (outputs.modality_logits.empty() ||
      outputs.modality_logits.size() != outputs.modality_bundles.size()) {
    throw PreconditionError("mag_loss needs one output and bundle per modality");
  }
  LossBreakdown b;
  b.fused_dice_ce = dice_ce(labels, outputs.fused_logits, weights.dice_epsilon,
                            grads ? &grads->fused_logits : nullptr);
  b.total = b.fused_dice_ce;
  if (grads) {
    grads->modality_logits.clear();
    grads->modality_bundles.clear();
  }
  for (std::size_t i = 0; i < outputs.modality_logits.size(); ++i) {
    ModalityLossGrads g;
    auto terms = modality_loss(labels, teacher_logits, outputs.modality_logits[i],
                               outputs.modality_bundles[i], teacher_bundle, weights,
                               grads ? &g : nullptr);
    b.total += terms.combined;
    b.per_modality.push_back(terms);
    if (grads) {
      grads->modality_logits.push_back(std::move(g.logits));
      grads->modality_bundles.push_back(std::move(g.bundle));
    }
  }
  return b;
}

LossBreakdown mag_loss(const LabelMap& labels, const ForwardOutputsD& outputs,
                       const LossWeights& weights, MagLossGrads* grads) {
  return mag_loss_with_teacher(labels, outputs, outputs.fused_logits, outputs.fused_bundle,
                               weights, grads);
}

}  // namespace magms
