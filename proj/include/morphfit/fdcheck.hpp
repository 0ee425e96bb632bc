#ifndef MORPHFIT_FDCHECK_HPP_
#define MORPHFIT_FDCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "morphfit/net.hpp"

namespace morphfit {

struct LossGradCheck {
  std::string loss_name;
  GradCheckReport report;
};

/// Finite-difference validation of every training loss composed through
/// render/project and through the regressor: the analytic parameter gradient
/// (exactly as the trainer computes it) is compared against central
/// differences at `trials` random regressor parameters per loss.
///
/// Losses covered: l3d (importance weights frozen, as in training), l2d_con,
/// l3d_con (both passes through the regressor), lcyc (full cycle including
/// re-rasterization, which is a stop-gradient boundary), lsc (through the
/// critic input), and vdc.
std::vector<LossGradCheck> run_loss_grad_checks(std::uint64_t seed, int trials);

}  // namespace morphfit

#endif  // MORPHFIT_FDCHECK_HPP_
