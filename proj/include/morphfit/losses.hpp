#ifndef MORPHFIT_LOSSES_HPP_
#define MORPHFIT_LOSSES_HPP_

#include <Eigen/Core>
#include <vector>

#include "morphfit/model.hpp"

namespace morphfit {

// ---- Landmark weight mask ---------------------------------------------------

/// Selector value standing for the synthetic mouth-center point (midpoint of
/// the two mouth-corner landmarks).
inline constexpr int kMouthCenterSelector = -1;

struct MaskEntry {
  int selector = 0;  // landmark index in [0,68), or kMouthCenterSelector
  double weight = 1.0;
};

/// The 18-point weight mask for the 2D landmark consistency loss.
struct WeightMask {
  std::vector<MaskEntry> entries;

  void validate() const;

  /// Default tiering: eye corners, nose tip, mouth corners and the mouth
  /// center at weight 4; brow endpoints and nose base corners at weight 2;
  /// four central face points at weight 1.
  static WeightMask default_mask();
  /// Same 18 selectors, all weights 1 (the mask-off ablation setting).
  static WeightMask uniform_mask();
};

// ---- Loss results -------------------------------------------------------------

struct LossWeights {
  double lambda_2d = 0.005;
  double lambda_3d = 0.005;
  double lambda_cyc = 1.0;
  double lambda_sc = 0.005;
};

struct LossBreakdown {
  double l3d = 0.0;
  double l2d_con = 0.0;
  double l3d_con = 0.0;
  double lcyc = 0.0;
  double lsc = 0.0;
  double total = 0.0;
  LossWeights lambdas;
};

/// total = l3d + lambda_1*l2d_con + lambda_2*l3d_con + lambda_3*lcyc + lambda_4*lsc
LossBreakdown total_loss(double l3d, double l2d_con, double l3d_con, double lcyc, double lsc,
                         const LossWeights& lambdas);

/// Scalar value plus gradients w.r.t. both landmark sets (rows follow the
/// 68-point layout; only rows touched by the mask are nonzero).
struct LandmarkLoss {
  double value = 0.0;
  Eigen::MatrixXd grad_first;   // 68 x dim
  Eigen::MatrixXd grad_second;  // 68 x dim
};

// ---- Operations ---------------------------------------------------------------

/// Per-coefficient importance: raw_i is the landmark displacement caused by
/// splicing pred[i] into gt, normalized to sum 1. All-zero displacement
/// (pred == gt) falls back to uniform weights.
Eigen::VectorXd importance_weights(const CoefficientVector& pred, const CoefficientVector& gt,
                                   const MorphableModel& model);

/// loss = sum_i w_i (gt_i - pred_i)^2, with w treated as a constant.
/// Returns the loss and writes d(loss)/d(pred) into grad_pred.
double weighted_coeff_loss(const CoefficientVector& pred, const CoefficientVector& gt,
                           const Eigen::VectorXd& weights, Eigen::VectorXd& grad_pred);

/// Sum over the mask's 18 selected points of weight * ||x_i - y_i||.
/// The mouth-center selector resolves to the midpoint of landmarks 48 and 54
/// in each set; its gradient splits evenly between the two corners.
LandmarkLoss landmark_2d_consistency(const LandmarkSet& x, const LandmarkSet& y,
                                     const WeightMask& mask);

/// Sum of the 68 per-point Euclidean distances between two 3D landmark sets.
LandmarkLoss landmark_3d_consistency(const LandmarkSet& forward, const LandmarkSet& backward);

/// Cycle consistency: the 2D consistency loss applied to (input, twice-mapped).
LandmarkLoss cycle_loss(const LandmarkSet& x_input, const LandmarkSet& x_recovered,
                        const WeightMask& mask);

/// Adversarial objectives on post-sigmoid scores, clamped to [eps, 1-eps].
/// The critic minimizes critic_loss = -[log s_real + log(1 - s_fake)]; the
/// regressor minimizes the non-saturating regressor_loss = -log s_fake.
struct SelfCriticLosses {
  double critic_loss = 0.0;
  double regressor_loss = 0.0;
  double d_critic_d_real = 0.0;      // d critic_loss / d s_real
  double d_critic_d_fake = 0.0;      // d critic_loss / d s_fake
  double d_regressor_d_fake = 0.0;   // d regressor_loss / d s_fake
};
SelfCriticLosses self_critic_losses(double score_real, double score_fake);

/// Mean squared distance between the full projected vertex sets of two
/// coefficient vectors: ||project(render(pred)) - project(render(gt))||^2 / N.
/// Accumulates d(loss)/d(pred) into grad_pred.
double vertex_distance_cost(const CoefficientVector& pred, const CoefficientVector& gt,
                            const MorphableModel& model, Eigen::VectorXd& grad_pred);

}  // namespace morphfit

#endif  // MORPHFIT_LOSSES_HPP_
