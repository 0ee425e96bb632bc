#include "morphfit/fdcheck.hpp"

#include <cmath>

#include "morphfit/data.hpp"
#include "morphfit/losses.hpp"
#include "morphfit/rng.hpp"
#include "morphfit/train.hpp"

namespace morphfit {

namespace {

struct CheckContext {
  MorphableModel model;
  NetworkStack stack;
  WeightMask mask;
  int resolution = 120;

  Eigen::VectorXd input_ann;   // encoded annotated-style input
  Eigen::VectorXd input_wild;  // encoded wild-style input
  ImageGrid wild_proxy;
  LandmarkSet wild_landmarks;  // the fixed "detector" landmarks
  CoefficientVector gt;        // supervision target for l3d / vdc
};

CoefficientVector predict(const CheckContext& ctx, const Eigen::VectorXd& params,
                          const Eigen::VectorXd& input) {
  Network net = ctx.stack.regressor;
  unflatten_parameters(net, params);
  const Eigen::MatrixXd out = forward(net, input);
  return CoefficientVector(out.col(0), ctx.stack.config.k_shape, ctx.stack.config.k_expr);
}

// Analytic d(loss)/d(regressor params) given d(loss)/d(coefficients) produced
// by forward passes at `params` on the listed inputs.
Eigen::VectorXd backprop_through_regressor(const CheckContext& ctx, const Eigen::VectorXd& params,
                                           const std::vector<const Eigen::VectorXd*>& inputs,
                                           const std::vector<Eigen::VectorXd>& coeff_grads) {
  Network net = ctx.stack.regressor;
  unflatten_parameters(net, params);
  NetworkGrads grads = NetworkGrads::zeros_like(net);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ForwardTape tape;
    forward(net, *inputs[i], tape);
    backward(net, tape, coeff_grads[i], grads);
  }
  return flatten_gradients(grads);
}

// Minimum distance of any predicted 2D landmark coordinate to a half-integer
// rasterization boundary; the cycle check requires a safety margin so that
// finite differences stay inside one constant region of the landmark map.
double raster_margin(const LandmarkSet& lm) {
  double margin = 1e300;
  for (int j = 0; j < kLandmarkCount; ++j)
    for (int d = 0; d < 2; ++d) {
      const double v = lm.points(j, d) + 0.5;
      margin = std::min(margin, std::abs(v - std::round(v)));
    }
  return margin;
}

CheckContext make_context(std::uint64_t seed) {
  CheckContext ctx;
  ModelGenConfig mc;
  mc.seed = derive_seed(seed, 0xF0D);
  mc.n_vertices = 90;
  mc.k_shape = 8;
  mc.k_expr = 4;
  ctx.model = synthesize_model(mc);

  StackConfig sc;
  sc.input_edge = 16;
  sc.regressor_hidden = {48, 32};
  sc.encoder_hidden = {24};
  sc.latent_dim = 12;
  sc.critic_hidden = {24, 16};
  sc.k_shape = ctx.model.k_shape();
  sc.k_expr = ctx.model.k_expr();
  sc.seed = derive_seed(seed, 0x57AC);
  ctx.stack = build_stack(sc);
  ctx.mask = WeightMask::default_mask();

  DataGenConfig dc;
  dc.resolution = ctx.resolution;
  dc.noise.sigma_px = 1.0;
  dc.noise.outlier_prob = 0.0;

  // The annotated-style side.
  std::mt19937_64 rng = make_engine(seed, 0xA55);
  ctx.gt = sample_coefficients(rng, dc.coeff, ctx.model);
  const ImageGrid ann_proxy = render_proxy_image(ctx.model, ctx.gt, ctx.resolution, ctx.resolution);
  const FacialLandmarkMap ann_flm =
      rasterize_flm(landmarks_2d(ctx.model, ctx.gt), ctx.resolution, ctx.resolution).map;
  ctx.input_ann = encode_network_input(ann_proxy.values, ann_flm.grid, ctx.resolution,
                                       ctx.resolution, sc.input_edge, true);

  // The wild-style side; redraw until the predicted landmarks of the initial
  // regressor sit away from rasterization boundaries (see raster_margin).
  const Eigen::VectorXd params0 = flatten_parameters(ctx.stack.regressor);
  for (std::uint64_t attempt = 0;; ++attempt) {
    std::mt19937_64 wrng = make_engine(seed, 0x317D, attempt);
    const CoefficientVector wild_gt = sample_coefficients(wrng, dc.coeff, ctx.model);
    ctx.wild_proxy = render_proxy_image(ctx.model, wild_gt, ctx.resolution, ctx.resolution);
    ctx.wild_landmarks = corrupt_landmarks(landmarks_2d(ctx.model, wild_gt), wrng, dc.noise);
    const FacialLandmarkMap wild_flm =
        rasterize_flm(ctx.wild_landmarks, ctx.resolution, ctx.resolution).map;
    ctx.input_wild = encode_network_input(ctx.wild_proxy.values, wild_flm.grid, ctx.resolution,
                                          ctx.resolution, sc.input_edge, true);
    const CoefficientVector alpha_fwd = predict(ctx, params0, ctx.input_wild);
    if (raster_margin(landmarks_2d(ctx.model, alpha_fwd)) > 1e-3) break;
    if (attempt > 64) throw NumericError("could not find a raster-safe wild sample");
  }
  return ctx;
}

GradCheckReport check_l3d(const CheckContext& ctx, int trials, std::mt19937_64& rng) {
  const Eigen::VectorXd params = flatten_parameters(ctx.stack.regressor);
  const CoefficientVector pred0 = predict(ctx, params, ctx.input_ann);
  const Eigen::VectorXd w = importance_weights(pred0, ctx.gt, ctx.model);  // frozen

  auto loss_fn = [&](const Eigen::VectorXd& p) {
    const CoefficientVector pred = predict(ctx, p, ctx.input_ann);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(pred.size());
    return weighted_coeff_loss(pred, ctx.gt, w, g);
  };
  Eigen::VectorXd d_coeff = Eigen::VectorXd::Zero(pred0.size());
  weighted_coeff_loss(pred0, ctx.gt, w, d_coeff);
  const Eigen::VectorXd analytic =
      backprop_through_regressor(ctx, params, {&ctx.input_ann}, {d_coeff});
  return grad_check(loss_fn, params, analytic, trials, rng);
}

GradCheckReport check_l2d_con(const CheckContext& ctx, int trials, std::mt19937_64& rng) {
  const Eigen::VectorXd params = flatten_parameters(ctx.stack.regressor);
  auto loss_fn = [&](const Eigen::VectorXd& p) {
    const CoefficientVector alpha = predict(ctx, p, ctx.input_wild);
    return landmark_2d_consistency(ctx.wild_landmarks, landmarks_2d(ctx.model, alpha), ctx.mask)
        .value;
  };
  const CoefficientVector alpha0 = predict(ctx, params, ctx.input_wild);
  const LandmarkLoss l =
      landmark_2d_consistency(ctx.wild_landmarks, landmarks_2d(ctx.model, alpha0), ctx.mask);
  Eigen::VectorXd d_coeff = Eigen::VectorXd::Zero(alpha0.size());
  landmarks_2d_vjp(ctx.model, alpha0, l.grad_second, d_coeff);
  const Eigen::VectorXd analytic =
      backprop_through_regressor(ctx, params, {&ctx.input_wild}, {d_coeff});
  return grad_check(loss_fn, params, analytic, trials, rng);
}

GradCheckReport check_l3d_con(const CheckContext& ctx, int trials, std::mt19937_64& rng) {
  // Both landmark sets go through the regressor (two different inputs), as in
  // the forward/backward passes of training.
  const Eigen::VectorXd params = flatten_parameters(ctx.stack.regressor);
  auto loss_fn = [&](const Eigen::VectorXd& p) {
    const CoefficientVector a = predict(ctx, p, ctx.input_wild);
    const CoefficientVector b = predict(ctx, p, ctx.input_ann);
    return landmark_3d_consistency(landmarks_3d(ctx.model, a), landmarks_3d(ctx.model, b)).value;
  };
  const CoefficientVector a0 = predict(ctx, params, ctx.input_wild);
  const CoefficientVector b0 = predict(ctx, params, ctx.input_ann);
  const LandmarkLoss l =
      landmark_3d_consistency(landmarks_3d(ctx.model, a0), landmarks_3d(ctx.model, b0));
  Eigen::VectorXd da = Eigen::VectorXd::Zero(a0.size());
  Eigen::VectorXd db = Eigen::VectorXd::Zero(b0.size());
  landmarks_3d_vjp(ctx.model, a0, l.grad_first, da);
  landmarks_3d_vjp(ctx.model, b0, l.grad_second, db);
  const Eigen::VectorXd analytic =
      backprop_through_regressor(ctx, params, {&ctx.input_wild, &ctx.input_ann}, {da, db});
  return grad_check(loss_fn, params, analytic, trials, rng);
}

GradCheckReport check_lcyc(const CheckContext& ctx, int trials, std::mt19937_64& rng) {
  // Full cycle: forward prediction, re-rasterized landmark map, backward
  // prediction. Rasterization is piecewise constant, so the analytic gradient
  // flows through the second pass only; the raster-margin guarantee keeps the
  // finite differences inside one constant region.
  const Eigen::VectorXd params = flatten_parameters(ctx.stack.regressor);
  const int edge = ctx.stack.config.input_edge;
  auto backward_input = [&](const Eigen::VectorXd& p) {
    const CoefficientVector alpha_fwd = predict(ctx, p, ctx.input_wild);
    const FacialLandmarkMap flm2 =
        rasterize_flm(landmarks_2d(ctx.model, alpha_fwd), ctx.resolution, ctx.resolution).map;
    return encode_network_input(ctx.wild_proxy.values, flm2.grid, ctx.resolution, ctx.resolution,
                                edge, true);
  };
  auto loss_fn = [&](const Eigen::VectorXd& p) {
    const Eigen::VectorXd input2 = backward_input(p);
    const CoefficientVector alpha_bwd = predict(ctx, p, input2);
    return cycle_loss(ctx.wild_landmarks, landmarks_2d(ctx.model, alpha_bwd), ctx.mask).value;
  };
  const Eigen::VectorXd input2 = backward_input(params);
  const CoefficientVector alpha_bwd0 = predict(ctx, params, input2);
  const LandmarkLoss l =
      cycle_loss(ctx.wild_landmarks, landmarks_2d(ctx.model, alpha_bwd0), ctx.mask);
  Eigen::VectorXd d_coeff = Eigen::VectorXd::Zero(alpha_bwd0.size());
  landmarks_2d_vjp(ctx.model, alpha_bwd0, l.grad_second, d_coeff);
  const Eigen::VectorXd analytic = backprop_through_regressor(ctx, params, {&input2}, {d_coeff});
  return grad_check(loss_fn, params, analytic, trials, rng);
}

GradCheckReport check_lsc(const CheckContext& ctx, int trials, std::mt19937_64& rng) {
  // Non-saturating objective through the critic input (critic and encoder
  // parameters held fixed).
  const Eigen::VectorXd params = flatten_parameters(ctx.stack.regressor);
  const int latent = ctx.stack.config.latent_dim;
  const int coeff_size = ctx.stack.config.coeff_size();
  const Eigen::MatrixXd z = forward(ctx.stack.encoder, ctx.input_wild);

  auto score = [&](const CoefficientVector& alpha, ForwardTape* tape) {
    Eigen::VectorXd cin(latent + coeff_size);
    cin.head(latent) = z.col(0);
    cin.tail(coeff_size) = ctx.stack.normalize_coeff(alpha.raw());
    ForwardTape local;
    return forward(ctx.stack.critic, cin, tape ? *tape : local)(0, 0);
  };
  auto loss_fn = [&](const Eigen::VectorXd& p) {
    const double s_fake = score(predict(ctx, p, ctx.input_wild), nullptr);
    return self_critic_losses(0.5, s_fake).regressor_loss;
  };

  const CoefficientVector alpha0 = predict(ctx, params, ctx.input_wild);
  ForwardTape tape_c;
  const double s0 = score(alpha0, &tape_c);
  const SelfCriticLosses sc = self_critic_losses(0.5, s0);
  Eigen::MatrixXd ds(1, 1);
  ds(0, 0) = sc.d_regressor_d_fake;
  NetworkGrads discard = NetworkGrads::zeros_like(ctx.stack.critic);
  const Eigen::MatrixXd din = backward(ctx.stack.critic, tape_c, ds, discard);
  const Eigen::VectorXd d_coeff =
      din.bottomRows(coeff_size).col(0).cwiseQuotient(ctx.stack.coeff_scale);
  const Eigen::VectorXd analytic =
      backprop_through_regressor(ctx, params, {&ctx.input_wild}, {d_coeff});
  return grad_check(loss_fn, params, analytic, trials, rng);
}

GradCheckReport check_vdc(const CheckContext& ctx, int trials, std::mt19937_64& rng) {
  const Eigen::VectorXd params = flatten_parameters(ctx.stack.regressor);
  auto loss_fn = [&](const Eigen::VectorXd& p) {
    const CoefficientVector pred = predict(ctx, p, ctx.input_ann);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(pred.size());
    return vertex_distance_cost(pred, ctx.gt, ctx.model, g);
  };
  const CoefficientVector pred0 = predict(ctx, params, ctx.input_ann);
  Eigen::VectorXd d_coeff = Eigen::VectorXd::Zero(pred0.size());
  vertex_distance_cost(pred0, ctx.gt, ctx.model, d_coeff);
  const Eigen::VectorXd analytic =
      backprop_through_regressor(ctx, params, {&ctx.input_ann}, {d_coeff});
  return grad_check(loss_fn, params, analytic, trials, rng);
}

}  // namespace

std::vector<LossGradCheck> run_loss_grad_checks(std::uint64_t seed, int trials) {
  const CheckContext ctx = make_context(seed);
  std::mt19937_64 rng = make_engine(seed, 0xFDC);
  std::vector<LossGradCheck> out;
  out.push_back({"l3d", check_l3d(ctx, trials, rng)});
  out.push_back({"l2d_con", check_l2d_con(ctx, trials, rng)});
  out.push_back({"l3d_con", check_l3d_con(ctx, trials, rng)});
  out.push_back({"lcyc", check_lcyc(ctx, trials, rng)});
  out.push_back({"lsc", check_lsc(ctx, trials, rng)});
  out.push_back({"vdc", check_vdc(ctx, trials, rng)});
  return out;
}

}  // namespace morphfit
