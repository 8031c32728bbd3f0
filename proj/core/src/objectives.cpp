#include "dualseg/objectives.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace dualseg {
namespace {

template <class T>
void check_pair(const Tensor<T>& probs, const MaskBatch& mask, const char* what) {
  if (probs.c() != 2 || probs.n() != mask.n || probs.h() != mask.h || probs.w() != mask.w ||
      mask.values.size() != static_cast<std::size_t>(mask.n) * mask.h * mask.w) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": probs " + to_string(probs.shape()) + " vs mask (" +
                                         std::to_string(mask.n) + "," + std::to_string(mask.h) + "," +
                                         std::to_string(mask.w) + ")");
  }
}

template <class T>
void ensure_grad(Tensor<T>* grad, const Tensor<T>& like) {
  if (grad && !(grad->shape() == like.shape())) *grad = Tensor<T>(like.shape());
}

}  // namespace

void LossWeights::validate() const {
  if (!(beta >= 0.0 && gamma_dice >= 0.0 && lambda_cons >= 0.0)) {
    throw Error(Errc::ConfigError, "loss weights must be non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"beta", w.beta}, {"gamma_dice", w.gamma_dice}, {"lambda_cons", w.lambda_cons}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  const LossWeights d;
  w.beta = j.value("beta", d.beta);
  w.gamma_dice = j.value("gamma_dice", d.gamma_dice);
  w.lambda_cons = j.value("lambda_cons", d.lambda_cons);
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = {{"l_ce_a", r.l_ce_a},     {"l_ce_b", r.l_ce_b}, {"l_dice_a", r.l_dice_a}, {"l_dice_b", r.l_dice_b},
       {"l_sup_total", r.l_sup_total}, {"l_cons", r.l_cons}, {"l_final", r.l_final}};
}

template <class T>
double cross_entropy(const Tensor<T>& probs, const MaskBatch& mask, Tensor<T>* grad) {
  check_pair(probs, mask, "cross_entropy");
  ensure_grad(grad, probs);
  const std::size_t hw = probs.shape().plane();
  const double count = static_cast<double>(mask.values.size());
  double sum = 0.0;
  for (int n = 0; n < probs.n(); ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      const int cls = mask.values[n * hw + i] ? 1 : 0;
      const double p = probs.plane(n, cls)[i];
      const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
      sum -= std::log(pc);
      if (grad && p == pc) grad->plane(n, cls)[i] += static_cast<T>(-1.0 / (pc * count));
    }
  }
  return sum / count;
}

template <class T>
double dice_loss(const Tensor<T>& probs, const MaskBatch& mask, Tensor<T>* grad) {
  check_pair(probs, mask, "dice_loss");
  ensure_grad(grad, probs);
  const std::size_t hw = probs.shape().plane();
  double inter = 0.0;
  double psum = 0.0;
  double ysum = 0.0;
  for (int n = 0; n < probs.n(); ++n) {
    const T* p = probs.plane(n, 1);
    for (std::size_t i = 0; i < hw; ++i) {
      const double y = mask.values[n * hw + i] ? 1.0 : 0.0;
      inter += p[i] * y;
      psum += p[i];
      ysum += y;
    }
  }
  const double num = 2.0 * inter + kDiceSmooth;
  const double den = psum + ysum + kDiceSmooth;
  if (grad) {
    for (int n = 0; n < probs.n(); ++n) {
      T* g = grad->plane(n, 1);
      for (std::size_t i = 0; i < hw; ++i) {
        const double y = mask.values[n * hw + i] ? 1.0 : 0.0;
        g[i] += static_cast<T>(-(2.0 * y * den - num) / (den * den));
      }
    }
  }
  return 1.0 - num / den;
}

template <class T>
double consistency_loss(const Tensor<T>& probs_a, const Tensor<T>& probs_b, Tensor<T>* grad_a, Tensor<T>* grad_b) {
  probs_a.require_same(probs_b, "consistency_loss");
  ensure_grad(grad_a, probs_a);
  ensure_grad(grad_b, probs_b);
  if (probs_a.empty()) return 0.0;
  const double count = static_cast<double>(probs_a.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs_a.size(); ++i) {
    const double d = static_cast<double>(probs_a[i]) - probs_b[i];
    sum += d * d;
    if (grad_a) (*grad_a)[i] += static_cast<T>(2.0 * d / count);
    if (grad_b) (*grad_b)[i] -= static_cast<T>(2.0 * d / count);
  }
  return sum / count;
}

template <class T>
SupervisedLoss supervised_loss(const Tensor<T>& probs_a, const Tensor<T>& probs_b, const MaskBatch& mask,
                               const LossWeights& w, Tensor<T>* grad_a, Tensor<T>* grad_b) {
  if (mask.n == 0 || probs_a.n() == 0) throw Error(Errc::EmptyLabeledBatch, "supervised loss needs labeled samples");
  SupervisedLoss out;
  auto branch = [&](const Tensor<T>& probs, Tensor<T>* grad, double& ce, double& dice) {
    Tensor<T> g_ce;
    Tensor<T> g_dice;
    ce = cross_entropy(probs, mask, grad ? &g_ce : nullptr);
    dice = dice_loss(probs, mask, grad ? &g_dice : nullptr);
    if (grad) {
      ensure_grad(grad, probs);
      for (std::size_t i = 0; i < probs.size(); ++i) {
        (*grad)[i] += static_cast<T>(w.beta * g_ce[i] + w.gamma_dice * g_dice[i]);
      }
    }
    return w.beta * ce + w.gamma_dice * dice;
  };
  out.sup_a = branch(probs_a, grad_a, out.ce_a, out.dice_a);
  out.sup_b = branch(probs_b, grad_b, out.ce_b, out.dice_b);
  out.total = out.sup_a + out.sup_b;
  return out;
}

double final_loss(double sup_total, double cons, const LossWeights& w) {
  if (!std::isfinite(sup_total)) throw Error(Errc::NonFiniteLoss, "supervised loss is " + std::to_string(sup_total));
  if (!std::isfinite(cons)) throw Error(Errc::NonFiniteLoss, "consistency loss is " + std::to_string(cons));
  return sup_total + w.lambda_cons * cons;
}

#define DUALSEG_INSTANTIATE_LOSSES(T)                                                                       \
  template double cross_entropy(const Tensor<T>&, const MaskBatch&, Tensor<T>*);                            \
  template double dice_loss(const Tensor<T>&, const MaskBatch&, Tensor<T>*);                                \
  template double consistency_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*, Tensor<T>*);             \
  template SupervisedLoss supervised_loss(const Tensor<T>&, const Tensor<T>&, const MaskBatch&,             \
                                          const LossWeights&, Tensor<T>*, Tensor<T>*);

DUALSEG_INSTANTIATE_LOSSES(float)
DUALSEG_INSTANTIATE_LOSSES(double)

#undef DUALSEG_INSTANTIATE_LOSSES

}  // namespace dualseg
