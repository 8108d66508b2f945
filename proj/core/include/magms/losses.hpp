// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

// Self-distillation loss terms. All functions compute in double precision
// and optionally return the analytic gradient with respect to the student
// inputs. Teacher inputs are constants: no gradient is produced for them.

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magms/model.hpp"
#include "magms/tensor.hpp"
#include "magms/types.hpp"

namespace magms {

struct LossWeights {
  double lambda_kl = 1.0;
  double gamma_l2 = 1.0;
  double temperature = 1.0;
  double dice_epsilon = 1e-5;

  static LossWeights from(const ExperimentConfig& config) {
    return {config.lambda_kl, config.gamma_l2, config.kl_temperature, config.dice_epsilon};
  }
};

struct DiceCeParts {
  double dice = 0.0;  // 1 - mean soft dice over all classes (background included)
  double ce = 0.0;    // mean voxel cross-entropy
  double total() const { return dice + ce; }
};

/// Soft dice plus cross-entropy of softmax(logits) against one-hot labels.
DiceCeParts dice_ce_parts(const LabelMap& labels, const TensorD& logits, double epsilon,
                          TensorD* grad = nullptr);

inline double dice_ce(const LabelMap& labels, const TensorD& logits, double epsilon = 1e-5,
                      TensorD* grad = nullptr) {
  return dice_ce_parts(labels, logits, epsilon, grad).total();
}

/// Mean over voxels of KL(softmax(teacher/T) || softmax(student/T)).
double pixel_kl(const TensorD& teacher, const TensorD& student, double temperature,
                TensorD* grad_student = nullptr);

/// Squared distance summed over all levels, divided by the element count.
double feature_l2(const FeatureBundleD& student, const FeatureBundleD& teacher,
                  FeatureBundleD* grad_student = nullptr);

struct ModalityLossTerms {
  double dice_ce = 0.0;
  double kl = 0.0;
  double feature_l2 = 0.0;
  double combined = 0.0;
};

struct ModalityLossGrads {
  TensorD logits;
  FeatureBundleD bundle;
};

/// combined = dice_ce + lambda * kl + gamma * feature_l2.
ModalityLossTerms modality_loss(const LabelMap& labels, const TensorD& fused_logits,
                                const TensorD& student_logits,
                                const FeatureBundleD& student_bundle,
                                const FeatureBundleD& fused_bundle, const LossWeights& weights,
                                ModalityLossGrads* grads = nullptr);

struct LossBreakdown {
  double fused_dice_ce = 0.0;
  std::vector<ModalityLossTerms> per_modality;
  double total = 0.0;

  /// Independent re-summation of the fused and per-modality terms.
  double recomputed_total(const LossWeights& weights) const;
  nlohmann::json to_json(const ModalitySet& modalities) const;
  static LossBreakdown from_json(const nlohmann::json& j);
  /// Average of several breakdowns (one per sample of a batch).
  static LossBreakdown mean(const std::vector<LossBreakdown>& items);
};

struct ForwardOutputsD {
  std::vector<TensorD> modality_logits;
  TensorD fused_logits;
  std::vector<FeatureBundleD> modality_bundles;
  FeatureBundleD fused_bundle;

  static ForwardOutputsD from(const ForwardAllOutputs& outputs);
};

struct MagLossGrads {
  TensorD fused_logits;
  std::vector<TensorD> modality_logits;
  std::vector<FeatureBundleD> modality_bundles;
};

/// Fused dice-CE plus the per-modality combined losses. The fused outputs
/// act as the (gradient-detached) teacher.
LossBreakdown mag_loss(const LabelMap& labels, const ForwardOutputsD& outputs,
                       const LossWeights& weights, MagLossGrads* grads = nullptr);

/// As mag_loss with the teacher given separately. The fused logits in
/// `outputs` only enter the fused dice-CE term.
LossBreakdown mag_loss_with_teacher(const LabelMap& labels, const ForwardOutputsD& outputs,
                                    const TensorD& teacher_logits,
                                    const FeatureBundleD& teacher_bundle,
                                    const LossWeights& weights, MagLossGrads* grads = nullptr);

/// Per-voxel softmax probabilities (channels first) at a temperature.
TensorD softmax_channels(const TensorD& logits, double temperature = 1.0);

}  // namespace magms
