#include "scca/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace scca::loss {

LossKind parse_loss_kind(const std::string& s) {
  if (s == "l1") return LossKind::L1;
  if (s == "wing") return LossKind::Wing;
  if (s == "softwing") return LossKind::SoftWing;
  throw std::invalid_argument("unknown loss '" + s + "' (expected l1, wing or softwing)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::L1: return "l1";
    case LossKind::Wing: return "wing";
    case LossKind::SoftWing: return "softwing";
  }
  return "?";
}

double LossParams::wing_c() const { return omega - omega * std::log1p(omega / epsilon); }

double LossParams::softwing_b() const { return omega1 - omega2 * std::log1p(omega1 / epsilon); }

void LossParams::validate() const {
  if (!(epsilon > 0) || !std::isfinite(epsilon)) throw std::invalid_argument("loss: epsilon must be positive");
  if (kind == LossKind::Wing && (!(omega > 0) || !std::isfinite(omega))) {
    throw std::invalid_argument("loss: wing omega must be positive");
  }
  if (kind == LossKind::SoftWing) {
    if (!(omega1 >= 0) || !std::isfinite(omega1)) throw std::invalid_argument("loss: omega1 must be non-negative");
    if (!(omega2 >= 1) || !std::isfinite(omega2)) throw std::invalid_argument("loss: omega2 must be at least 1");
  }
}

LossParams default_params(LossKind kind) {
  LossParams p;
  p.kind = kind;
  return p;
}

double loss_value(double x, const LossParams& p) {
  const double a = std::fabs(x);
  switch (p.kind) {
    case LossKind::L1: return a;
    case LossKind::Wing: return a < p.omega ? p.omega * std::log1p(a / p.epsilon) : a - p.wing_c();
    case LossKind::SoftWing: return a < p.omega1 ? a : p.omega2 * std::log1p(a / p.epsilon) + p.softwing_b();
  }
  return 0.0;
}

double loss_grad(double x, const LossParams& p) {
  if (x == 0.0) return 0.0;
  const double a = std::fabs(x);
  const double s = x > 0 ? 1.0 : -1.0;
  switch (p.kind) {
    case LossKind::L1: return s;
    case LossKind::Wing: return a < p.omega ? s * p.omega / (a + p.epsilon) : s;
    case LossKind::SoftWing: return a < p.omega1 ? s : s * p.omega2 / (a + p.epsilon);
  }
  return 0.0;
}

namespace {

void check_shapes(const nk::Tensor& pred, const nk::Tensor& gt, const nk::Tensor* weights) {
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument("batch_loss: prediction " + nk::shape_string(pred.shape()) + " vs target " +
                                nk::shape_string(gt.shape()));
  }
  if (weights && weights->shape() != gt.shape()) throw std::invalid_argument("batch_loss: weight shape mismatch");
}

double denominator(const nk::Tensor& gt, const nk::Tensor* weights) {
  if (!weights) return static_cast<double>(gt.size());
  double s = 0.0;
  for (std::size_t i = 0; i < weights->size(); ++i) s += (*weights)[i];
  if (!(s > 0)) throw std::invalid_argument("batch_loss: weights sum to zero");
  return s;
}

}  // namespace

double batch_loss_value(const nk::Tensor& pred, const nk::Tensor& gt, const LossParams& p,
                        const nk::Tensor* weights) {
  check_shapes(pred, gt, weights);
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double w = weights ? (*weights)[i] : 1.0;
    total += w * loss_value(kVirtualFrame * (pred[i] - gt[i]), p);
  }
  return total / denominator(gt, weights);
}

nk::Var batch_loss(const nk::Var& pred, const nk::Tensor& gt, const LossParams& p, const nk::Tensor* weights) {
  p.validate();
  const nk::Tensor& pv = pred.value();
  const double value = batch_loss_value(pv, gt, p, weights);
  const double inv = 1.0 / denominator(gt, weights);
  nk::Tensor w = weights ? *weights : nk::Tensor();
  return pred.tape()->record(nk::Tensor::scalar(value), {pred},
                             [pred, gt, p, w, inv](nk::Tape& tp, const nk::Tensor& g) {
                               const nk::Tensor& pv = tp.value(pred);
                               nk::Tensor& gp = tp.grad_slot(pred);
                               const double c = g[0] * kVirtualFrame * inv;
                               for (std::size_t i = 0; i < pv.size(); ++i) {
                                 const double wi = w.empty() ? 1.0 : w[i];
                                 gp[i] += c * wi * loss_grad(kVirtualFrame * (pv[i] - gt[i]), p);
                               }
                             },
                             "batch_loss");
}

}  // namespace scca::loss
