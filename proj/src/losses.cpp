#include "morphfit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace morphfit {

void WeightMask::validate() const {
  if (entries.size() != 18) throw ConfigError("weight mask must have exactly 18 entries");
  std::set<int> seen;
  for (const MaskEntry& e : entries) {
    if (e.selector != kMouthCenterSelector && (e.selector < 0 || e.selector >= kLandmarkCount))
      throw ConfigError("mask selector " + std::to_string(e.selector) + " out of range");
    if (!seen.insert(e.selector).second)
      throw ConfigError("mask selector " + std::to_string(e.selector) + " repeated");
    if (!(e.weight > 0)) throw ConfigError("mask weights must be positive");
  }
}

WeightMask WeightMask::default_mask() {
  WeightMask m;
  for (int sel : {36, 39, 42, 45, 30, kMouthCornerLeft, kMouthCornerRight, kMouthCenterSelector})
    m.entries.push_back({sel, 4.0});
  for (int sel : {17, 21, 22, 26, 31, 35}) m.entries.push_back({sel, 2.0});
  for (int sel : {27, 33, 51, 57}) m.entries.push_back({sel, 1.0});
  m.validate();
  return m;
}

WeightMask WeightMask::uniform_mask() {
  WeightMask m = default_mask();
  for (MaskEntry& e : m.entries) e.weight = 1.0;
  return m;
}

LossBreakdown total_loss(double l3d, double l2d_con, double l3d_con, double lcyc, double lsc,
                         const LossWeights& lambdas) {
  LossBreakdown b;
  b.l3d = l3d;
  b.l2d_con = l2d_con;
  b.l3d_con = l3d_con;
  b.lcyc = lcyc;
  b.lsc = lsc;
  b.lambdas = lambdas;
  b.total = l3d + lambdas.lambda_2d * l2d_con + lambdas.lambda_3d * l3d_con +
            lambdas.lambda_cyc * lcyc + lambdas.lambda_sc * lsc;
  return b;
}

Eigen::VectorXd importance_weights(const CoefficientVector& pred, const CoefficientVector& gt,
                                   const MorphableModel& model) {
  if (pred.size() != gt.size()) throw ConfigError("pred/gt coefficient sizes differ");
  const int n = gt.size();
  const Eigen::MatrixXd ref = landmarks_2d(model, gt).points;
  Eigen::VectorXd raw(n);
  CoefficientVector hybrid = gt;
  for (int i = 0; i < n; ++i) {
    const double keep = hybrid.raw()[i];
    hybrid.raw()[i] = pred.raw()[i];
    raw[i] = (landmarks_2d(model, hybrid).points - ref).norm();
    hybrid.raw()[i] = keep;
  }
  const double sum = raw.sum();
  if (sum <= 0.0) return Eigen::VectorXd::Constant(n, 1.0 / n);
  return raw / sum;
}

double weighted_coeff_loss(const CoefficientVector& pred, const CoefficientVector& gt,
                           const Eigen::VectorXd& weights, Eigen::VectorXd& grad_pred) {
  if (pred.size() != gt.size() || weights.size() != pred.size())
    throw ConfigError("weighted_coeff_loss size mismatch");
  if (grad_pred.size() != pred.size()) throw ConfigError("gradient accumulator size mismatch");
  const Eigen::VectorXd diff = gt.raw() - pred.raw();
  grad_pred.noalias() += -2.0 * weights.cwiseProduct(diff);
  return diff.cwiseProduct(weights.cwiseProduct(diff)).sum();
}

namespace {

struct SelectedPoint {
  Eigen::VectorXd pos;  // dim-sized
};

Eigen::VectorXd selected_point(const LandmarkSet& set, int selector) {
  if (selector == kMouthCenterSelector)
    return 0.5 * (set.points.row(kMouthCornerLeft) + set.points.row(kMouthCornerRight));
  return set.points.row(selector);
}

// Distributes a gradient on a selected point back to the underlying rows.
void scatter_gradient(Eigen::MatrixXd& grad, int selector, const Eigen::VectorXd& g) {
  if (selector == kMouthCenterSelector) {
    grad.row(kMouthCornerLeft) += 0.5 * g.transpose();
    grad.row(kMouthCornerRight) += 0.5 * g.transpose();
  } else {
    grad.row(selector) += g.transpose();
  }
}

}  // namespace

LandmarkLoss landmark_2d_consistency(const LandmarkSet& x, const LandmarkSet& y,
                                     const WeightMask& mask) {
  if (x.dim != 2 || y.dim != 2) throw ConfigError("2D consistency loss requires 2D landmark sets");
  mask.validate();
  LandmarkLoss out;
  out.grad_first = Eigen::MatrixXd::Zero(kLandmarkCount, 2);
  out.grad_second = Eigen::MatrixXd::Zero(kLandmarkCount, 2);
  for (const MaskEntry& e : mask.entries) {
    const Eigen::VectorXd px = selected_point(x, e.selector);
    const Eigen::VectorXd py = selected_point(y, e.selector);
    const Eigen::VectorXd d = px - py;
    const double dist = d.norm();
    out.value += e.weight * dist;
    if (dist > 0.0) {
      const Eigen::VectorXd g = (e.weight / dist) * d;
      scatter_gradient(out.grad_first, e.selector, g);
      scatter_gradient(out.grad_second, e.selector, -g);
    }
  }
  return out;
}

LandmarkLoss landmark_3d_consistency(const LandmarkSet& forward, const LandmarkSet& backward) {
  if (forward.dim != 3 || backward.dim != 3)
    throw ConfigError("3D consistency loss requires 3D landmark sets");
  LandmarkLoss out;
  out.grad_first = Eigen::MatrixXd::Zero(kLandmarkCount, 3);
  out.grad_second = Eigen::MatrixXd::Zero(kLandmarkCount, 3);
  for (int j = 0; j < kLandmarkCount; ++j) {
    const Eigen::Vector3d d = forward.points.row(j) - backward.points.row(j);
    const double dist = d.norm();
    out.value += dist;
    if (dist > 0.0) {
      out.grad_first.row(j) += (d / dist).transpose();
      out.grad_second.row(j) -= (d / dist).transpose();
    }
  }
  return out;
}

LandmarkLoss cycle_loss(const LandmarkSet& x_input, const LandmarkSet& x_recovered,
                        const WeightMask& mask) {
  return landmark_2d_consistency(x_input, x_recovered, mask);
}

SelfCriticLosses self_critic_losses(double score_real, double score_fake) {
  constexpr double kEps = 1e-7;
  SelfCriticLosses out;
  const bool real_clamped = score_real < kEps || score_real > 1.0 - kEps;
  const bool fake_clamped = score_fake < kEps || score_fake > 1.0 - kEps;
  const double sr = std::clamp(score_real, kEps, 1.0 - kEps);
  const double sf = std::clamp(score_fake, kEps, 1.0 - kEps);
  out.critic_loss = -(std::log(sr) + std::log(1.0 - sf));
  out.regressor_loss = -std::log(sf);
  out.d_critic_d_real = real_clamped ? 0.0 : -1.0 / sr;
  out.d_critic_d_fake = fake_clamped ? 0.0 : 1.0 / (1.0 - sf);
  out.d_regressor_d_fake = fake_clamped ? 0.0 : -1.0 / sf;
  return out;
}

double vertex_distance_cost(const CoefficientVector& pred, const CoefficientVector& gt,
                            const MorphableModel& model, Eigen::VectorXd& grad_pred) {
  if (grad_pred.size() != pred.size()) throw ConfigError("gradient accumulator size mismatch");
  const Eigen::VectorXd vp = project(render_shape(model, pred), pred);
  const Eigen::VectorXd vg = project(render_shape(model, gt), gt);
  const Eigen::VectorXd diff = vp - vg;
  const double inv_n = 1.0 / model.n_vertices;
  dense_projection_vjp(model, pred, (2.0 * inv_n) * diff, grad_pred);
  return diff.squaredNorm() * inv_n;
}

}  // namespace morphfit
