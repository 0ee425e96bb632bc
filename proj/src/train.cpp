#include "morphfit/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "morphfit/io_util.hpp"
#include "morphfit/rng.hpp"

namespace morphfit {

AblationFlags flags_for_variant(const std::string& variant) {
  AblationFlags f;
  if (variant == "base") {
    f.use_flm_input = false;
    f.use_cycle_losses = false;
    f.use_self_critic = false;
  } else if (variant == "cyc") {
    f.use_flm_input = true;
    f.use_cycle_losses = true;
    f.use_self_critic = false;
  } else if (variant == "sc") {
    f.use_flm_input = false;
    f.use_cycle_losses = false;
    f.use_self_critic = true;
  } else if (variant == "cyc+sc") {
    f.use_flm_input = true;
    f.use_cycle_losses = true;
    f.use_self_critic = true;
  } else {
    throw ConfigError("unknown variant '" + variant + "' (base|cyc|sc|cyc+sc)");
  }
  return f;
}

void write_stage1_log(const std::vector<LossRow>& rows, const std::string& path) {
  std::string out = "step,l3d,l2d_con,l3d_con,lcyc,lsc,total,lr\n";
  for (const LossRow& r : rows) {
    out += std::to_string(r.step);
    for (double v : {r.losses.l3d, r.losses.l2d_con, r.losses.l3d_con, r.losses.lcyc,
                     r.losses.lsc, r.losses.total, r.lr}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

void write_stage2_log(const std::vector<VdcRow>& rows, const std::string& path) {
  std::string out = "step,vdc,lr\n";
  for (const VdcRow& r : rows) {
    out += std::to_string(r.step);
    out += ',';
    out += format_double(r.vdc);
    out += ',';
    out += format_double(r.lr);
    out += '\n';
  }
  write_text_atomic(path, out);
}

// ---- Wild consistency pieces ---------------------------------------------------

WildForwardResult wild_forward_pass(const MorphableModel& model, const LandmarkSet& input_2d,
                                    const CoefficientVector& alpha_fwd, const WeightMask& mask,
                                    int resolution) {
  WildForwardResult r;
  r.predicted_2d = landmarks_2d(model, alpha_fwd);
  const LandmarkLoss l = landmark_2d_consistency(input_2d, r.predicted_2d, mask);
  r.l2d_con = l.value;
  r.d_alpha_fwd = Eigen::VectorXd::Zero(alpha_fwd.size());
  landmarks_2d_vjp(model, alpha_fwd, l.grad_second, r.d_alpha_fwd);
  r.flm_backward = rasterize_flm(r.predicted_2d, resolution, resolution).map;
  return r;
}

WildBackwardResult wild_backward_pass(const MorphableModel& model, const LandmarkSet& input_2d,
                                      const CoefficientVector& alpha_fwd,
                                      const CoefficientVector& alpha_bwd, const WeightMask& mask) {
  WildBackwardResult r;
  const LandmarkSet x3d_fwd = landmarks_3d(model, alpha_fwd);
  const LandmarkSet x3d_bwd = landmarks_3d(model, alpha_bwd);
  const LandmarkLoss con = landmark_3d_consistency(x3d_fwd, x3d_bwd);
  r.l3d_con = con.value;
  r.d3d_alpha_fwd = Eigen::VectorXd::Zero(alpha_fwd.size());
  r.d3d_alpha_bwd = Eigen::VectorXd::Zero(alpha_bwd.size());
  landmarks_3d_vjp(model, alpha_fwd, con.grad_first, r.d3d_alpha_fwd);
  landmarks_3d_vjp(model, alpha_bwd, con.grad_second, r.d3d_alpha_bwd);

  const LandmarkSet x2d_bwd = landmarks_2d(model, alpha_bwd);
  const LandmarkLoss cyc = cycle_loss(input_2d, x2d_bwd, mask);
  r.lcyc = cyc.value;
  r.dcyc_alpha_bwd = Eigen::VectorXd::Zero(alpha_bwd.size());
  landmarks_2d_vjp(model, alpha_bwd, cyc.grad_second, r.dcyc_alpha_bwd);
  return r;
}

// ---- Trainer ---------------------------------------------------------------------

namespace {
void clip_gradient_norm(NetworkGrads& grads, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.weights.size(); ++i)
    sq += grads.weights[i].squaredNorm() + grads.bias[i].squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) grads.scale(max_norm / norm);
}
}  // namespace

struct Trainer::IndexStream {
  std::vector<std::size_t> order;
  std::size_t pos = 0;
  std::mt19937_64 rng;

  IndexStream(std::size_t n, std::uint64_t seed) : rng(seed) {
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::size_t next() {
    if (order.empty()) throw ConfigError("drawing from an empty dataset");
    if (pos >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      pos = 0;
    }
    return order[pos++];
  }
};

Trainer::~Trainer() = default;

Eigen::VectorXd Trainer::encode_sample(const ImageGrid& proxy, const FacialLandmarkMap& flm) const {
  return encode_network_input(proxy.values, flm.grid, proxy.rows, proxy.cols,
                              stack_.config.input_edge, stack_.config.use_flm_input);
}

namespace {
void validate_training_config(const TrainingConfig& c) {
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.stage1_epochs < 0 || c.stage2_epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(c.regressor_lr > 0) || !(c.critic_lr > 0)) throw ConfigError("learning rates must be > 0");
  if (!(c.lr_decay_per_epoch > 0) || c.lr_decay_per_epoch > 1)
    throw ConfigError("lr decay must be in (0, 1]");
  c.mask.validate();
}
}  // namespace

Trainer::Trainer(const TrainingConfig& config, const MorphableModel& model,
                 const Dataset& annotated, const Dataset& wild)
    : config_(config), model_(model), annotated_(annotated), wild_(wild) {
  validate_training_config(config_);
  if (annotated_.records.empty()) throw ConfigError("training requires annotated samples");

  active_mask_ = config_.mask;
  if (!config_.flags.use_weight_mask)
    for (MaskEntry& e : active_mask_.entries) e.weight = 1.0;

  StackConfig sc = config_.stack;
  sc.k_shape = model.k_shape();
  sc.k_expr = model.k_expr();
  sc.use_flm_input = config_.flags.use_flm_input;
  sc.seed = derive_seed(config_.seed, 0x57A11ULL);
  stack_ = build_stack(sc);

  const int in_size = stack_.config.network_input_size();
  const int coeff_size = stack_.config.coeff_size();
  const auto n_ann = static_cast<Eigen::Index>(annotated_.size());
  const auto n_wild = static_cast<Eigen::Index>(wild_.size());

  ann_inputs_.resize(in_size, n_ann);
  targets_.setConstant(coeff_size, n_ann + n_wild, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index i = 0; i < n_ann; ++i) {
    const auto* s = std::get_if<Annotated3DSample>(&annotated_.records[i]);
    if (s == nullptr) throw ConfigError("annotated split contains a wild record");
    ann_inputs_.col(i) = encode_sample(s->proxy, s->flm);
    targets_.col(i) = s->gt_coeff.raw();
  }
  wild_inputs_.resize(in_size, n_wild);
  for (Eigen::Index i = 0; i < n_wild; ++i) {
    const auto* s = std::get_if<Wild2DSample>(&wild_.records[i]);
    if (s == nullptr) throw ConfigError("wild split contains an annotated record");
    wild_inputs_.col(i) = encode_sample(s->proxy, s->flm);
  }

  if (config_.calibrate_output && n_ann >= 2) {
    const Eigen::VectorXd mean = targets_.leftCols(n_ann).rowwise().mean();
    Eigen::VectorXd std_dev(coeff_size);
    for (int r = 0; r < coeff_size; ++r) {
      const double var =
          (targets_.row(r).head(n_ann).array() - mean[r]).square().sum() / double(n_ann);
      std_dev[r] = std::max(std::sqrt(var), 1e-6);
    }
    stack_.coeff_mean = mean;
    stack_.coeff_scale = std_dev;
    calibrate_output_layer(stack_.regressor, mean, std_dev);
  }

  regressor_opt_ = OptimizerState::sgd(config_.regressor_lr, config_.lr_decay_per_epoch);
  encoder_opt_ = OptimizerState::adam(config_.critic_lr);
  critic_opt_ = OptimizerState::adam(config_.critic_lr);

  master_rng_.seed(derive_seed(config_.seed, 0x7EA17ULL));
  ann_stream_ = std::make_unique<IndexStream>(annotated_.size(), master_rng_());
  wild_stream_ = std::make_unique<IndexStream>(wild_.size(), master_rng_());
}

Trainer::Trainer(const TrainingConfig& config, const MorphableModel& model,
                 const Dataset& annotated, const Dataset& wild, const Checkpoint& checkpoint)
    : Trainer(config, model, annotated, wild) {
  stack_ = checkpoint.stack;
  regressor_opt_ = checkpoint.regressor_opt;
  encoder_opt_ = checkpoint.encoder_opt;
  critic_opt_ = checkpoint.critic_opt;
  global_step_ = static_cast<std::int64_t>(checkpoint.steps_done);
  std::istringstream in(checkpoint.rng_state);
  in >> master_rng_;
  if (!in) throw IntegrityError("checkpoint rng state failed to parse");
  // The checkpointed stack may have been built under different flags; inputs
  // must be re-encoded if the landmark-map channel setting differs.
  if (checkpoint.stack.config.use_flm_input != config.flags.use_flm_input ||
      checkpoint.stack.config.input_edge != config.stack.input_edge)
    throw ConfigError("checkpoint input settings differ from the requested config");
}

void Trainer::set_prediction_override(PredictionOverride override_fn) {
  override_ = std::move(override_fn);
}

CoefficientVector Trainer::predicted_or_override(const Eigen::MatrixXd& outputs, int col,
                                                 bool is_wild, std::size_t index) const {
  if (override_) return override_(is_wild, index);
  return CoefficientVector(outputs.col(col), stack_.config.k_shape, stack_.config.k_expr);
}

int Trainer::steps_per_epoch_stage1() const {
  const std::size_t n = wild_.size() > 0 ? wild_.size() : annotated_.size();
  return static_cast<int>((n + config_.batch_size - 1) / config_.batch_size);
}

int Trainer::steps_per_epoch_stage2() const {
  return static_cast<int>((annotated_.size() + config_.batch_size - 1) / config_.batch_size);
}

LossBreakdown Trainer::stage1_step() { return stage1_step_impl(false, nullptr); }

LossBreakdown Trainer::stage1_step_impl(bool add_vertex_cost, double* vdc_out) {
  const int batch = config_.batch_size;
  const int coeff_size = stack_.config.coeff_size();
  const bool frozen = static_cast<bool>(override_);
  const bool wild_loaded = wild_.size() > 0;
  const bool run_cycle = wild_loaded && config_.flags.use_cycle_losses;
  const bool run_critic = wild_loaded && config_.flags.use_self_critic;
  const bool run_wild_forward = run_cycle || run_critic;
  const LossWeights& lam = config_.lambdas;

  // Annotated batch: weighted coefficient supervision (plus the vertex cost
  // when fine-tuning with the overall loss enabled).
  std::vector<std::size_t> ann_ids(batch);
  Eigen::MatrixXd xa(ann_inputs_.rows(), batch);
  for (int b = 0; b < batch; ++b) {
    ann_ids[b] = ann_stream_->next();
    xa.col(b) = ann_inputs_.col(static_cast<Eigen::Index>(ann_ids[b]));
  }
  ForwardTape tape_a;
  const Eigen::MatrixXd pred_a = forward(stack_.regressor, xa, tape_a);

  Eigen::MatrixXd d_pred_a = Eigen::MatrixXd::Zero(coeff_size, batch);
  double l3d = 0.0, vdc = 0.0;
  for (int b = 0; b < batch; ++b) {
    const CoefficientVector pred = predicted_or_override(pred_a, b, false, ann_ids[b]);
    const CoefficientVector gt(targets_.col(static_cast<Eigen::Index>(ann_ids[b])),
                               stack_.config.k_shape, stack_.config.k_expr);
    const Eigen::VectorXd w = importance_weights(pred, gt, model_);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(coeff_size);
    l3d += weighted_coeff_loss(pred, gt, w, g);
    if (add_vertex_cost) {
      Eigen::VectorXd gv = Eigen::VectorXd::Zero(coeff_size);
      vdc += vertex_distance_cost(pred, gt, model_, gv);
      g += gv;
    }
    d_pred_a.col(b) = g / batch;
  }
  l3d /= batch;
  vdc /= batch;
  if (vdc_out != nullptr) *vdc_out = vdc;

  // Wild batch.
  std::vector<std::size_t> wild_ids;
  Eigen::MatrixXd xw;
  ForwardTape tape_w;
  Eigen::MatrixXd pred_w;
  Eigen::MatrixXd d_pred_w;
  if (run_wild_forward) {
    wild_ids.resize(batch);
    xw.resize(wild_inputs_.rows(), batch);
    for (int b = 0; b < batch; ++b) {
      wild_ids[b] = wild_stream_->next();
      xw.col(b) = wild_inputs_.col(static_cast<Eigen::Index>(wild_ids[b]));
    }
    pred_w = forward(stack_.regressor, xw, tape_w);
    d_pred_w = Eigen::MatrixXd::Zero(coeff_size, batch);
  }

  double l2d = 0.0, l3dcon = 0.0, lcyc = 0.0, lsc = 0.0;
  ForwardTape tape_w2;
  Eigen::MatrixXd d_pred_w2;
  if (run_cycle) {
    std::vector<WildForwardResult> fwd(batch);
    std::vector<CoefficientVector> alpha_fwd(batch);
    Eigen::MatrixXd xw2(wild_inputs_.rows(), batch);
    for (int b = 0; b < batch; ++b) {
      const auto& sample = std::get<Wild2DSample>(wild_.records[wild_ids[b]]);
      alpha_fwd[b] = predicted_or_override(pred_w, b, true, wild_ids[b]);
      fwd[b] = wild_forward_pass(model_, sample.noisy_landmarks, alpha_fwd[b], active_mask_,
                                 wild_.rows);
      l2d += fwd[b].l2d_con;
      d_pred_w.col(b) += (lam.lambda_2d / batch) * fwd[b].d_alpha_fwd;
      xw2.col(b) = encode_sample(sample.proxy, fwd[b].flm_backward);
    }
    const Eigen::MatrixXd pred_w2 = forward(stack_.regressor, xw2, tape_w2);
    d_pred_w2 = Eigen::MatrixXd::Zero(coeff_size, batch);
    for (int b = 0; b < batch; ++b) {
      const auto& sample = std::get<Wild2DSample>(wild_.records[wild_ids[b]]);
      const CoefficientVector alpha_bwd = predicted_or_override(pred_w2, b, true, wild_ids[b]);
      const WildBackwardResult bwd =
          wild_backward_pass(model_, sample.noisy_landmarks, alpha_fwd[b], alpha_bwd, active_mask_);
      l3dcon += bwd.l3d_con;
      lcyc += bwd.lcyc;
      d_pred_w.col(b) += (lam.lambda_3d / batch) * bwd.d3d_alpha_fwd;
      d_pred_w2.col(b) += (lam.lambda_3d / batch) * bwd.d3d_alpha_bwd +
                          (lam.lambda_cyc / batch) * bwd.dcyc_alpha_bwd;
    }
    l2d /= batch;
    l3dcon /= batch;
    lcyc /= batch;
  }

  if (run_critic) {
    const int latent = stack_.config.latent_dim;
    // Critic update first: maximize discrimination of (latent, coefficients)
    // pairs, with gradients also training the encoder.
    ForwardTape tape_er, tape_ef;
    const Eigen::MatrixXd z_real = forward(stack_.encoder, xa, tape_er);
    const Eigen::MatrixXd z_fake = forward(stack_.encoder, xw, tape_ef);
    Eigen::MatrixXd cin_real(latent + coeff_size, batch), cin_fake(latent + coeff_size, batch);
    for (int b = 0; b < batch; ++b) {
      cin_real.col(b).head(latent) = z_real.col(b);
      cin_real.col(b).tail(coeff_size) =
          stack_.normalize_coeff(targets_.col(static_cast<Eigen::Index>(ann_ids[b])));
      cin_fake.col(b).head(latent) = z_fake.col(b);
      cin_fake.col(b).tail(coeff_size) = stack_.normalize_coeff(pred_w.col(b));
    }
    ForwardTape tape_cr, tape_cf;
    const Eigen::MatrixXd s_real = forward(stack_.critic, cin_real, tape_cr);
    const Eigen::MatrixXd s_fake = forward(stack_.critic, cin_fake, tape_cf);
    Eigen::MatrixXd ds_real(1, batch), ds_fake(1, batch);
    for (int b = 0; b < batch; ++b) {
      const SelfCriticLosses sc = self_critic_losses(s_real(0, b), s_fake(0, b));
      ds_real(0, b) = sc.d_critic_d_real / batch;
      ds_fake(0, b) = sc.d_critic_d_fake / batch;
    }
    if (!frozen) {
      NetworkGrads critic_g = NetworkGrads::zeros_like(stack_.critic);
      const Eigen::MatrixXd din_real = backward(stack_.critic, tape_cr, ds_real, critic_g);
      const Eigen::MatrixXd din_fake = backward(stack_.critic, tape_cf, ds_fake, critic_g);
      NetworkGrads enc_g = NetworkGrads::zeros_like(stack_.encoder);
      backward(stack_.encoder, tape_er, din_real.topRows(latent), enc_g);
      backward(stack_.encoder, tape_ef, din_fake.topRows(latent), enc_g);
      optimizer_step(critic_opt_, stack_.critic, critic_g);
      optimizer_step(encoder_opt_, stack_.encoder, enc_g);
    }

    // Regressor objective against the just-updated critic (non-saturating).
    const Eigen::MatrixXd z_fake2 = forward(stack_.encoder, xw);
    Eigen::MatrixXd cin2(latent + coeff_size, batch);
    for (int b = 0; b < batch; ++b) {
      cin2.col(b).head(latent) = z_fake2.col(b);
      cin2.col(b).tail(coeff_size) = stack_.normalize_coeff(
          override_ ? override_(true, wild_ids[b]).raw() : pred_w.col(b));
    }
    ForwardTape tape_c2;
    const Eigen::MatrixXd s2 = forward(stack_.critic, cin2, tape_c2);
    Eigen::MatrixXd ds2(1, batch);
    for (int b = 0; b < batch; ++b) {
      const SelfCriticLosses sc = self_critic_losses(0.5, s2(0, b));
      lsc += sc.regressor_loss / batch;
      ds2(0, b) = sc.d_regressor_d_fake / batch;
    }
    if (!frozen) {
      NetworkGrads discard = NetworkGrads::zeros_like(stack_.critic);
      const Eigen::MatrixXd din2 = backward(stack_.critic, tape_c2, ds2, discard);
      const Eigen::MatrixXd d_alpha =
          (din2.bottomRows(coeff_size).array().colwise() / stack_.coeff_scale.array()).matrix();
      d_pred_w += lam.lambda_sc * d_alpha;
    }
  }

  if (!frozen) {
    NetworkGrads reg_g = NetworkGrads::zeros_like(stack_.regressor);
    backward(stack_.regressor, tape_a, d_pred_a, reg_g);
    if (run_wild_forward) backward(stack_.regressor, tape_w, d_pred_w, reg_g);
    if (run_cycle) backward(stack_.regressor, tape_w2, d_pred_w2, reg_g);
    clip_gradient_norm(reg_g, config_.clip_grad_norm);
    optimizer_step(regressor_opt_, stack_.regressor, reg_g);
  }

  ++global_step_;
  const LossBreakdown breakdown = total_loss(l3d, l2d, l3dcon, lcyc, lsc, lam);
  const struct {
    const char* name;
    double value;
  } terms[] = {{"l3d", breakdown.l3d},     {"l2d_con", breakdown.l2d_con},
               {"l3d_con", breakdown.l3d_con}, {"lcyc", breakdown.lcyc},
               {"lsc", breakdown.lsc},     {"vdc", vdc},
               {"total", breakdown.total}};
  for (const auto& term : terms) {
    if (!std::isfinite(term.value)) {
      std::ostringstream msg;
      msg << "step " << global_step_ << ": non-finite " << term.name << " (config seed 0x"
          << std::hex << config_.seed << ", first annotated id "
          << std::dec << (ann_ids.empty() ? 0 : ann_ids[0]) << ")";
      throw NumericError(msg.str());
    }
  }
  return breakdown;
}

double Trainer::stage2_step() {
  if (config_.stage2_add_overall_loss) {
    double vdc = 0.0;
    const LossBreakdown bd = stage1_step_impl(true, &vdc);
    (void)bd;
    return vdc;
  }

  const int batch = config_.batch_size;
  const int coeff_size = stack_.config.coeff_size();
  const bool frozen = static_cast<bool>(override_);

  std::vector<std::size_t> ann_ids(batch);
  Eigen::MatrixXd xa(ann_inputs_.rows(), batch);
  for (int b = 0; b < batch; ++b) {
    ann_ids[b] = ann_stream_->next();
    xa.col(b) = ann_inputs_.col(static_cast<Eigen::Index>(ann_ids[b]));
  }
  ForwardTape tape;
  const Eigen::MatrixXd pred = forward(stack_.regressor, xa, tape);
  Eigen::MatrixXd d_pred = Eigen::MatrixXd::Zero(coeff_size, batch);
  double vdc = 0.0;
  for (int b = 0; b < batch; ++b) {
    const CoefficientVector p = predicted_or_override(pred, b, false, ann_ids[b]);
    const CoefficientVector gt(targets_.col(static_cast<Eigen::Index>(ann_ids[b])),
                               stack_.config.k_shape, stack_.config.k_expr);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(coeff_size);
    vdc += vertex_distance_cost(p, gt, model_, g);
    d_pred.col(b) = g / batch;
  }
  vdc /= batch;
  if (!std::isfinite(vdc)) {
    std::ostringstream msg;
    msg << "step " << global_step_ + 1 << ": non-finite vdc (config seed 0x" << std::hex
        << config_.seed << ")";
    throw NumericError(msg.str());
  }
  if (!frozen) {
    NetworkGrads reg_g = NetworkGrads::zeros_like(stack_.regressor);
    backward(stack_.regressor, tape, d_pred, reg_g);
    clip_gradient_norm(reg_g, config_.clip_grad_norm);
    optimizer_step(regressor_opt_, stack_.regressor, reg_g);
  }
  ++global_step_;
  return vdc;
}

void Trainer::train_stage1() {
  const int spe = steps_per_epoch_stage1();
  const int base_epoch = regressor_opt_.epoch;
  for (int e = 0; e < config_.stage1_epochs; ++e) {
    regressor_opt_.epoch = base_epoch + e;
    for (int s = 0; s < spe; ++s) {
      const LossBreakdown bd = stage1_step();
      if (config_.log_every > 0 &&
          (global_step_ % config_.log_every == 0 || (e + 1 == config_.stage1_epochs && s + 1 == spe)))
        stage1_history_.push_back({global_step_, bd, regressor_opt_.current_lr()});
    }
  }
  regressor_opt_.epoch = base_epoch + config_.stage1_epochs;
}

void Trainer::train_stage2() {
  ann_stream_ = std::make_unique<IndexStream>(annotated_.size(), master_rng_());
  const int spe = steps_per_epoch_stage2();
  const int base_epoch = regressor_opt_.epoch;
  for (int e = 0; e < config_.stage2_epochs; ++e) {
    regressor_opt_.epoch = base_epoch + e;
    for (int s = 0; s < spe; ++s) {
      const double vdc = stage2_step();
      if (config_.log_every > 0 &&
          (global_step_ % config_.log_every == 0 || (e + 1 == config_.stage2_epochs && s + 1 == spe)))
        stage2_history_.push_back({global_step_, vdc, regressor_opt_.current_lr()});
    }
  }
  regressor_opt_.epoch = base_epoch + config_.stage2_epochs;
}

Checkpoint Trainer::make_checkpoint(std::uint32_t stage) const {
  Checkpoint cp;
  cp.stack = stack_;
  cp.regressor_opt = regressor_opt_;
  cp.encoder_opt = encoder_opt_;
  cp.critic_opt = critic_opt_;
  std::ostringstream out;
  out << master_rng_;
  cp.rng_state = out.str();
  cp.stage = stage;
  cp.steps_done = static_cast<std::uint64_t>(global_step_);
  return cp;
}

// ---- Ablation suite -----------------------------------------------------------------

double median(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

Dataset wild_subset(const Dataset& wild, double fraction) {
  Dataset out;
  out.rows = wild.rows;
  out.cols = wild.cols;
  out.k_shape = wild.k_shape;
  out.k_expr = wild.k_expr;
  const auto count = static_cast<std::size_t>(std::lround(fraction * wild.records.size()));
  out.records.assign(wild.records.begin(), wild.records.begin() + std::min(count, wild.records.size()));
  return out;
}

struct RunOutcome {
  double stage1_nme = std::numeric_limits<double>::quiet_NaN();
  double stage2_nme = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

RunOutcome run_one(const TrainingConfig& cfg, const MorphableModel& model,
                   const Dataset& annotated, const Dataset& wild, const Dataset& eval_set,
                   const EvalOptions& eval_opts) {
  RunOutcome out;
  try {
    Trainer trainer(cfg, model, annotated, wild);
    trainer.train_stage1();
    const EvalReport rep1 = evaluate_checkpoint(trainer.stack(), model, eval_set, eval_opts);
    out.stage1_nme = summarize_metric(rep1, Metric::nme_2d_sparse).overall_mean;
    trainer.train_stage2();
    const EvalReport rep2 = evaluate_checkpoint(trainer.stack(), model, eval_set, eval_opts);
    out.stage2_nme = summarize_metric(rep2, Metric::nme_2d_sparse).overall_mean;
  } catch (const Error& e) {
    out.error = e.what();
    log_info(std::string("ablation run failed: ") + e.what());
  }
  return out;
}

}  // namespace

AblationResult run_ablation_suite(const AblationConfig& config, const MorphableModel& model,
                                  const Dataset& annotated, const Dataset& wild,
                                  const Dataset& eval_set) {
  if (config.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  AblationResult result;

  const char* variants[] = {"base", "cyc", "sc", "cyc+sc"};
  for (const char* variant : variants) {
    for (const bool mask_on : {true, false}) {
      std::vector<double> s1, s2;
      for (std::uint64_t seed : config.seeds) {
        TrainingConfig cfg = config.base;
        cfg.flags = flags_for_variant(variant);
        cfg.flags.use_weight_mask = mask_on;
        cfg.seed = seed;
        const RunOutcome run = run_one(cfg, model, annotated, wild, eval_set, config.eval);
        result.runs.push_back({variant, mask_on ? "on" : "off", seed, run.stage1_nme,
                               run.stage2_nme, run.error});
        s1.push_back(run.stage1_nme);
        s2.push_back(run.stage2_nme);
        log_info(std::string("ablation ") + variant + (mask_on ? "/mask" : "/nomask") + " seed " +
                 std::to_string(seed) + ": stage1 " + format_double(run.stage1_nme) + " stage2 " +
                 format_double(run.stage2_nme));
      }
      result.variant_rows.push_back(
          {variant, mask_on ? "on" : "off", median(s1), median(s2)});
    }
  }

  for (double volume : config.wild_volumes) {
    const Dataset subset = wild_subset(wild, volume);
    std::vector<double> s1, s2;
    const std::string label = "wild-" + std::to_string(static_cast<int>(std::lround(volume * 100))) + "%";
    for (std::uint64_t seed : config.seeds) {
      TrainingConfig cfg = config.base;
      cfg.flags = flags_for_variant("cyc+sc");
      cfg.flags.use_weight_mask = true;
      cfg.seed = seed;
      const RunOutcome run = run_one(cfg, model, annotated, subset, eval_set, config.eval);
      result.runs.push_back({label, "on", seed, run.stage1_nme, run.stage2_nme, run.error});
      s1.push_back(run.stage1_nme);
      s2.push_back(run.stage2_nme);
      log_info("ablation " + label + " seed " + std::to_string(seed) + ": stage1 " +
               format_double(run.stage1_nme) + " stage2 " + format_double(run.stage2_nme));
    }
    result.volume_rows.push_back({label, "on", median(s1), median(s2)});
  }
  return result;
}

void write_ablation_csv(const AblationResult& result, const std::string& path) {
  std::string out = "variant,mask,stage1_nme,stage2_nme\n";
  auto emit = [&out](const AblationCell& cell) {
    out += cell.variant + ',' + cell.mask + ',' + format_double(cell.stage1_nme) + ',' +
           format_double(cell.stage2_nme) + '\n';
  };
  for (const AblationCell& cell : result.variant_rows) emit(cell);
  for (const AblationCell& cell : result.volume_rows) emit(cell);
  write_text_atomic(path, out);
}

void write_ablation_runs_csv(const AblationResult& result, const std::string& path) {
  std::string out = "variant,mask,seed,stage1_nme,stage2_nme,error\n";
  for (const AblationRunRow& row : result.runs) {
    out += row.variant + ',' + row.mask + ',' + std::to_string(row.seed) + ',' +
           format_double(row.stage1_nme) + ',' + format_double(row.stage2_nme) + ',' +
           (row.error.empty() ? "" : "\"" + row.error + "\"") + '\n';
  }
  write_text_atomic(path, out);
}

}  // namespace morphfit
