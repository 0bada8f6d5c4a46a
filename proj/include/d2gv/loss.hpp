#pragma once

#include "d2gv/image.hpp"
#include "d2gv/metrics.hpp"

namespace d2gv {

enum class LossKind { combined, l2_only, ssim_only };

template <typename Scalar>
struct LossValue {
  double value = 0;
  double mse = 0;
  double ssim = 1;
  Image<Scalar> grad;  // dL/dpred
};

/// Per-scale reconstruction loss: MSE + lambda_s * (1 - SSIM), or one of the
/// two terms alone for the loss ablations.
template <typename Scalar>
LossValue<Scalar> reconstruction_loss(const Image<Scalar>& pred, const Image<Scalar>& truth, double lambda_s,
                                      LossKind kind = LossKind::combined) {
  require_same_shape(pred, truth, "reconstruction_loss");
  LossValue<Scalar> out;
  const auto n = static_cast<double>(pred.pixels.size());
  out.grad = Image<Scalar>(pred.width, pred.height);
  out.mse = mse(pred, truth);
  if (kind != LossKind::ssim_only) {
    out.value += out.mse;
    out.grad.pixels = ((pred.pixels - truth.pixels) * static_cast<Scalar>(2.0 / n)).eval();
  }
  if (kind != LossKind::l2_only) {
    Image<Scalar> g;
    out.ssim = ssim(pred, truth, &g);
    const double w = kind == LossKind::ssim_only ? 1.0 : lambda_s;
    out.value += w * (1.0 - out.ssim);
    out.grad.pixels -= static_cast<Scalar>(w) * g.pixels;
  } else {
    out.ssim = ssim(pred, truth);
  }
  return out;
}

}  // namespace d2gv
