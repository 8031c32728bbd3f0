#pragma once

#include <nlohmann/json_fwd.hpp>

#include "dualseg/network.hpp"
#include "dualseg/tensor.hpp"

namespace dualseg {

struct LossWeights {
  double beta = 1.0;          // cross-entropy weight
  double gamma_dice = 1.0;    // Dice weight
  double lambda_cons = 0.01;  // cross-modal consistency weight

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct LossReport {
  double l_ce_a = 0.0;
  double l_ce_b = 0.0;
  double l_dice_a = 0.0;
  double l_dice_b = 0.0;
  double l_sup_total = 0.0;
  double l_cons = 0.0;
  double l_final = 0.0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

void to_json(nlohmann::json& j, const LossReport& r);

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceSmooth = 1e-5;

// Each loss optionally accumulates d(loss)/d(probs) into `grad` (same shape
// as probs). Probabilities are (B, 2, H, W) with channel 1 the foreground.

/// Mean over pixels of -log p(true class), probabilities clamped to
/// [1e-7, 1 - 1e-7].
template <class T>
double cross_entropy(const Tensor<T>& probs, const MaskBatch& mask, Tensor<T>* grad = nullptr);

/// 1 - (2 sum(p_fg * y) + eps) / (sum(p_fg) + sum(y) + eps), pooled over the
/// whole batch, eps = 1e-5.
template <class T>
double dice_loss(const Tensor<T>& probs, const MaskBatch& mask, Tensor<T>* grad = nullptr);

/// Mean over every element of (p1 - p2)^2; 0 for an empty batch.
template <class T>
double consistency_loss(const Tensor<T>& probs_a, const Tensor<T>& probs_b, Tensor<T>* grad_a = nullptr,
                        Tensor<T>* grad_b = nullptr);

struct SupervisedLoss {
  double ce_a = 0.0;
  double ce_b = 0.0;
  double dice_a = 0.0;
  double dice_b = 0.0;
  double sup_a = 0.0;
  double sup_b = 0.0;
  double total = 0.0;
};

/// beta * CE + gamma_dice * Dice per branch, summed over both branches.
template <class T>
SupervisedLoss supervised_loss(const Tensor<T>& probs_a, const Tensor<T>& probs_b, const MaskBatch& mask,
                               const LossWeights& w, Tensor<T>* grad_a = nullptr, Tensor<T>* grad_b = nullptr);

template <class T>
SupervisedLoss supervised_loss(const DualPrediction<T>& pred, const MaskBatch& mask, const LossWeights& w) {
  return supervised_loss(pred.probs_a, pred.probs_b, mask, w);
}

/// sup_total + lambda_cons * cons; NonFiniteLoss on non-finite inputs.
double final_loss(double sup_total, double cons, const LossWeights& w);

}  // namespace dualseg
