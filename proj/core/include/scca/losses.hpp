#pragma once

#include <string>

#include "scca/numkit/tape.hpp"
#include "scca/numkit/tensor.hpp"

// Per-coordinate regression losses. Errors are measured in a 256-unit virtual
// frame so the loss parameters keep their pixel meaning for any image size.
namespace scca::loss {

inline constexpr double kVirtualFrame = 256.0;

enum class LossKind { L1, Wing, SoftWing };

LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind kind);

struct LossParams {
  LossKind kind = LossKind::SoftWing;
  double omega = 20.0;   // wing threshold and log scale
  double omega1 = 2.0;   // soft wing switch point
  double omega2 = 20.0;  // soft wing log scale
  double epsilon = 0.5;

  // Wing offset: omega - omega * ln(1 + omega / epsilon).
  double wing_c() const;
  // Soft wing offset: omega1 - omega2 * ln(1 + omega1 / epsilon).
  double softwing_b() const;

  // Throws std::invalid_argument for epsilon <= 0, omega <= 0, omega1 < 0 or
  // omega2 < 1.
  void validate() const;
};

LossParams default_params(LossKind kind);

double loss_value(double x, const LossParams& p);
// Derivative in x; 0 at x = 0, right-limit value at the switch point.
double loss_grad(double x, const LossParams& p);

// pred and gt are [B, N, 2] coordinates normalised by image size. Returns the
// mean loss of the 256-scaled errors. `weights`, when given, has the same shape
// and scales each coordinate's term; the mean then divides by the weight sum.
nk::Var batch_loss(const nk::Var& pred, const nk::Tensor& gt, const LossParams& p,
                   const nk::Tensor* weights = nullptr);

// Same reduction on plain tensors.
double batch_loss_value(const nk::Tensor& pred, const nk::Tensor& gt, const LossParams& p,
                        const nk::Tensor* weights = nullptr);

}  // namespace scca::loss
