#include <doctest.h>

#include <cmath>
#include <random>

#include "morphfit/io_util.hpp"
#include "morphfit/train.hpp"
#include "test_util.hpp"

using namespace morphfit;

namespace {

struct World {
  MorphableModel model;
  Dataset annotated;
  Dataset wild;
  Dataset eval;
  std::vector<CoefficientVector> wild_gt;  // known because wild derives from annotated
};

// Small but complete training world. Wild samples are converted annotated
// samples so tests can know their ground truth; noise_sigma 0 keeps the
// landmarks exact (the oracle tests rely on this).
World tiny_world(std::uint64_t seed, int n_ann = 48, int n_wild = 48, int n_eval = 16,
                 double noise_sigma = 0.0) {
  World w;
  ModelGenConfig mc;
  mc.seed = seed;
  mc.n_vertices = 100;
  mc.k_shape = 4;
  mc.k_expr = 2;
  w.model = synthesize_model(mc);

  DataGenConfig dc;
  dc.seed = seed + 1;
  dc.n_annotated = n_ann + n_wild;
  dc.n_wild = 0;
  dc.n_eval = n_eval;
  dc.resolution = 64;
  dc.coeff.frame_edge = 64;
  dc.noise.sigma_px = noise_sigma;
  dc.noise.outlier_prob = 0.0;
  const GeneratedSplits splits = generate_splits(w.model, dc);

  auto init = [&](Dataset& d) {
    d.rows = d.cols = dc.resolution;
    d.k_shape = w.model.k_shape();
    d.k_expr = w.model.k_expr();
  };
  init(w.annotated);
  init(w.wild);
  w.eval = splits.eval;

  std::mt19937_64 noise_rng(seed + 2);
  for (int i = 0; i < n_ann + n_wild; ++i) {
    const auto& s = std::get<Annotated3DSample>(splits.annotated.records[i]);
    if (i < n_ann) {
      w.annotated.records.push_back(s);
      continue;
    }
    Wild2DSample wild;
    wild.proxy = s.proxy;
    wild.noisy_landmarks = landmarks_2d(w.model, s.gt_coeff);
    if (noise_sigma > 0) {
      LandmarkNoiseConfig nc;
      nc.sigma_px = noise_sigma;
      nc.outlier_prob = 0.0;
      wild.noisy_landmarks = corrupt_landmarks(wild.noisy_landmarks, noise_rng, nc);
    }
    wild.flm = rasterize_flm(wild.noisy_landmarks, dc.resolution, dc.resolution).map;
    w.wild.records.push_back(wild);
    w.wild_gt.push_back(s.gt_coeff);
  }
  return w;
}

TrainingConfig tiny_config(std::uint64_t seed) {
  TrainingConfig c;
  c.seed = seed;
  c.batch_size = 8;
  c.stage1_epochs = 1;
  c.stage2_epochs = 1;
  c.stack.input_edge = 16;
  c.stack.regressor_hidden = {32, 24};
  c.stack.encoder_hidden = {16};
  c.stack.latent_dim = 8;
  c.stack.critic_hidden = {32, 16};
  return c;
}

Eigen::VectorXd all_params(const NetworkStack& s) {
  Eigen::VectorXd r = flatten_parameters(s.regressor);
  Eigen::VectorXd e = flatten_parameters(s.encoder);
  Eigen::VectorXd c = flatten_parameters(s.critic);
  Eigen::VectorXd out(r.size() + e.size() + c.size());
  out << r, e, c;
  return out;
}

}  // namespace

TEST_CASE("variant flags match the published ablation rows") {
  const AblationFlags base = flags_for_variant("base");
  CHECK(!base.use_flm_input);
  CHECK(!base.use_cycle_losses);
  CHECK(!base.use_self_critic);  // all four wild-data terms off

  const AblationFlags cyc = flags_for_variant("cyc");
  CHECK(cyc.use_flm_input);
  CHECK(cyc.use_cycle_losses);
  CHECK(!cyc.use_self_critic);

  const AblationFlags sc = flags_for_variant("sc");
  CHECK(!sc.use_flm_input);
  CHECK(!sc.use_cycle_losses);
  CHECK(sc.use_self_critic);

  const AblationFlags both = flags_for_variant("cyc+sc");
  CHECK(both.use_flm_input);
  CHECK(both.use_cycle_losses);
  CHECK(both.use_self_critic);

  CHECK_THROWS_AS(flags_for_variant("bogus"), ConfigError);
}

TEST_CASE("zero epochs leave every parameter unchanged") {
  const World w = tiny_world(401);
  TrainingConfig cfg = tiny_config(401);
  cfg.stage1_epochs = 0;
  cfg.stage2_epochs = 0;
  Trainer t(cfg, w.model, w.annotated, w.wild);
  const Eigen::VectorXd before = all_params(t.stack());
  t.train_stage1();
  t.train_stage2();
  CHECK(all_params(t.stack()) == before);
  CHECK(t.stage1_history().empty());
}

TEST_CASE("base variant records zero for all four wild-data terms") {
  const World w = tiny_world(403);
  TrainingConfig cfg = tiny_config(403);
  cfg.flags = flags_for_variant("base");
  Trainer t(cfg, w.model, w.annotated, w.wild);
  for (int s = 0; s < 5; ++s) {
    const LossBreakdown bd = t.stage1_step();
    CHECK(bd.l2d_con == 0.0);
    CHECK(bd.l3d_con == 0.0);
    CHECK(bd.lcyc == 0.0);
    CHECK(bd.lsc == 0.0);
    CHECK(bd.total == bd.l3d);
    CHECK(bd.l3d > 0.0);
  }
}

TEST_CASE("oracle regressor: supervised loss exactly zero, consistency below 1e-9") {
  const World w = tiny_world(409);
  TrainingConfig cfg = tiny_config(409);
  Trainer t(cfg, w.model, w.annotated, w.wild);
  t.set_prediction_override([&](bool is_wild, std::size_t index) {
    if (is_wild) return w.wild_gt[index];
    return std::get<Annotated3DSample>(w.annotated.records[index]).gt_coeff;
  });
  for (int s = 0; s < 6; ++s) {
    const LossBreakdown bd = t.stage1_step();
    CHECK(bd.l3d == 0.0);  // exact: pred == gt
    CHECK(bd.l2d_con < 1e-9);
    CHECK(bd.l3d_con < 1e-9);
    CHECK(bd.lcyc < 1e-9);
  }
  // Stage-2 cost is exactly zero for the oracle as well.
  CHECK(t.stage2_step() == 0.0);
}

TEST_CASE("wild pieces: oracle coefficients give zero losses and gradients") {
  const World w = tiny_world(419);
  const auto& wild = std::get<Wild2DSample>(w.wild.records[0]);
  const CoefficientVector& gt = w.wild_gt[0];
  const WeightMask mask = WeightMask::default_mask();

  const WildForwardResult fwd = wild_forward_pass(w.model, wild.noisy_landmarks, gt, mask, 64);
  CHECK(fwd.l2d_con == 0.0);
  CHECK(fwd.d_alpha_fwd.norm() == 0.0);
  CHECK(fwd.flm_backward == wild.flm);  // re-rasterization reproduces the input map

  const WildBackwardResult bwd = wild_backward_pass(w.model, wild.noisy_landmarks, gt, gt, mask);
  CHECK(bwd.l3d_con == 0.0);
  CHECK(bwd.lcyc == 0.0);
  CHECK(bwd.d3d_alpha_bwd.norm() == 0.0);
  CHECK(bwd.dcyc_alpha_bwd.norm() == 0.0);
}

TEST_CASE("loss accounting identity holds at every step") {
  const World w = tiny_world(421, 48, 48, 8);
  TrainingConfig cfg = tiny_config(421);
  Trainer t(cfg, w.model, w.annotated, w.wild);
  t.train_stage1();
  REQUIRE(!t.stage1_history().empty());
  for (const LossRow& row : t.stage1_history()) {
    const LossBreakdown& b = row.losses;
    const double expect = b.l3d + b.lambdas.lambda_2d * b.l2d_con +
                          b.lambdas.lambda_3d * b.l3d_con + b.lambdas.lambda_cyc * b.lcyc +
                          b.lambdas.lambda_sc * b.lsc;
    CHECK(std::abs(b.total - expect) < 1e-12);
  }
}

TEST_CASE("disabling the self-critic leaves critic and encoder bit-identical") {
  const World w = tiny_world(431);
  TrainingConfig cfg = tiny_config(431);
  cfg.flags.use_self_critic = false;
  Trainer t(cfg, w.model, w.annotated, w.wild);
  const Eigen::VectorXd critic0 = flatten_parameters(t.stack().critic);
  const Eigen::VectorXd encoder0 = flatten_parameters(t.stack().encoder);
  const Eigen::VectorXd regressor0 = flatten_parameters(t.stack().regressor);
  t.train_stage1();
  CHECK(flatten_parameters(t.stack().critic) == critic0);
  CHECK(flatten_parameters(t.stack().encoder) == encoder0);
  CHECK(flatten_parameters(t.stack().regressor) != regressor0);  // regressor did train
}

TEST_CASE("wild coefficient slots are NaN by construction and never read") {
  const World w = tiny_world(433);
  TrainingConfig cfg = tiny_config(433);
  Trainer t(cfg, w.model, w.annotated, w.wild);

  // Poisoned by construction: every wild target column is NaN.
  const Eigen::MatrixXd& targets = t.targets();
  REQUIRE(targets.cols() == static_cast<Eigen::Index>(w.annotated.size() + w.wild.size()));
  for (Eigen::Index c = static_cast<Eigen::Index>(w.annotated.size()); c < targets.cols(); ++c)
    CHECK(!targets.col(c).allFinite());

  // If any wild slot leaked into the supervised losses, the NaN guard would
  // abort; full stage-1 and stage-2 epochs must stay finite.
  t.train_stage1();
  t.train_stage2();
  for (const LossRow& row : t.stage1_history()) CHECK(std::isfinite(row.losses.total));
  for (const VdcRow& row : t.stage2_history()) CHECK(std::isfinite(row.vdc));
}

TEST_CASE("poisoned annotated targets trip the NaN abort with a diagnostic") {
  World w = tiny_world(439);
  auto& sample = std::get<Annotated3DSample>(w.annotated.records[0]);
  sample.gt_coeff.raw()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainingConfig cfg = tiny_config(439);
  cfg.batch_size = static_cast<int>(w.annotated.size());  // ensure the bad sample is drawn
  Trainer t(cfg, w.model, w.annotated, w.wild);
  try {
    t.stage1_step();
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("identical config and seed reproduce checkpoints bit for bit") {
  const World w = tiny_world(443);
  const TrainingConfig cfg = tiny_config(443);
  test::TempDir dir("det");

  Trainer a(cfg, w.model, w.annotated, w.wild);
  a.train_stage1();
  save_checkpoint(a.make_checkpoint(1), dir.file("a.mfck"));

  Trainer b(cfg, w.model, w.annotated, w.wild);
  b.train_stage1();
  save_checkpoint(b.make_checkpoint(1), dir.file("b.mfck"));

  CHECK(read_file(dir.file("a.mfck")) == read_file(dir.file("b.mfck")));
}

TEST_CASE("stage 2 resumed from a checkpoint file matches the in-process run") {
  const World w = tiny_world(449);
  const TrainingConfig cfg = tiny_config(449);
  test::TempDir dir("resume");

  Trainer a(cfg, w.model, w.annotated, w.wild);
  a.train_stage1();
  a.train_stage2();
  save_checkpoint(a.make_checkpoint(2), dir.file("inproc.mfck"));

  Trainer b(cfg, w.model, w.annotated, w.wild);
  b.train_stage1();
  save_checkpoint(b.make_checkpoint(1), dir.file("stage1.mfck"));
  const Checkpoint cp1 = load_checkpoint(dir.file("stage1.mfck"));
  Trainer c(cfg, w.model, w.annotated, w.wild, cp1);
  c.train_stage2();
  save_checkpoint(c.make_checkpoint(2), dir.file("resumed.mfck"));

  CHECK(read_file(dir.file("inproc.mfck")) == read_file(dir.file("resumed.mfck")));
}

TEST_CASE("learning-rate decay continues across stages") {
  const World w = tiny_world(457);
  TrainingConfig cfg = tiny_config(457);
  cfg.stage1_epochs = 2;
  cfg.stage2_epochs = 2;
  Trainer t(cfg, w.model, w.annotated, w.wild);
  t.train_stage1();
  REQUIRE(!t.stage1_history().empty());
  const double lr_first = t.stage1_history().front().lr;
  CHECK(lr_first == doctest::Approx(cfg.regressor_lr));
  const double lr_last_stage1 = t.stage1_history().back().lr;
  CHECK(lr_last_stage1 == doctest::Approx(cfg.regressor_lr * 0.95));
  t.train_stage2();
  const double lr_first_stage2 = t.stage2_history().front().lr;
  CHECK(lr_first_stage2 == doctest::Approx(cfg.regressor_lr * 0.95 * 0.95));
  const double lr_last_stage2 = t.stage2_history().back().lr;
  CHECK(lr_last_stage2 == doctest::Approx(cfg.regressor_lr * std::pow(0.95, 3)).epsilon(1e-12));
}

TEST_CASE("smoke run: training reduces both the total loss and the vertex cost") {
  // A scaled-down version of the standard pipeline: full 120px frames, all
  // loss terms active.
  ModelGenConfig mc;
  mc.seed = 461;
  mc.n_vertices = 300;
  mc.k_shape = 20;
  mc.k_expr = 6;
  const MorphableModel model = synthesize_model(mc);
  DataGenConfig dc;
  dc.seed = 462;
  dc.n_annotated = 512;
  dc.n_wild = 1024;
  dc.n_eval = 48;
  const GeneratedSplits splits = generate_splits(model, dc);
  TrainingConfig cfg;
  cfg.seed = 463;
  cfg.stack.input_edge = 32;
  cfg.stack.regressor_hidden = {128, 64};
  cfg.stack.encoder_hidden = {64};
  cfg.stack.latent_dim = 32;
  cfg.stack.critic_hidden = {128, 64};
  Trainer t(cfg, model, splits.annotated, splits.wild);

  // 200 steps; the recorded total at the end must be below the first.
  std::vector<double> totals;
  for (int s = 0; s < 200; ++s) totals.push_back(t.stage1_step().total);
  CHECK(totals.back() < totals.front());

  // Held-out vertex cost must decrease monotonically over the first three
  // fine-tuning epochs.
  auto eval_vdc = [&]() {
    double total = 0.0;
    for (const DatasetRecord& rec : splits.eval.records) {
      const auto& s = std::get<Annotated3DSample>(rec);
      const Eigen::VectorXd input =
          encode_network_input(s.proxy.values, s.flm.grid, s.proxy.rows, s.proxy.cols,
                               t.stack().config.input_edge, t.stack().config.use_flm_input);
      ForwardTape tape;
      const CoefficientVector pred = forward_regressor(t.stack(), input, tape);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(pred.size());
      total += vertex_distance_cost(pred, s.gt_coeff, model, g);
    }
    return total / static_cast<double>(splits.eval.size());
  };

  std::vector<double> curve;
  curve.push_back(eval_vdc());
  for (int epoch = 0; epoch < 3; ++epoch) {
    for (int s = 0; s < t.steps_per_epoch_stage2(); ++s) t.stage2_step();
    curve.push_back(eval_vdc());
  }
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i] < curve[i - 1]);
}

TEST_CASE("stage logs are written with the documented schemas") {
  const World w = tiny_world(463);
  TrainingConfig cfg = tiny_config(463);
  Trainer t(cfg, w.model, w.annotated, w.wild);
  t.train_stage1();
  t.train_stage2();
  test::TempDir dir("logs");
  write_stage1_log(t.stage1_history(), dir.file("s1.csv"));
  write_stage2_log(t.stage2_history(), dir.file("s2.csv"));
  const auto s1 = read_file(dir.file("s1.csv"));
  const std::string s1_text(s1.begin(), s1.end());
  CHECK(s1_text.rfind("step,l3d,l2d_con,l3d_con,lcyc,lsc,total,lr\n", 0) == 0);
  const auto s2 = read_file(dir.file("s2.csv"));
  const std::string s2_text(s2.begin(), s2.end());
  CHECK(s2_text.rfind("step,vdc,lr\n", 0) == 0);
  // One row per step plus the header.
  CHECK(std::count(s1_text.begin(), s1_text.end(), '\n') ==
        1 + static_cast<long>(t.stage1_history().size()));
}

TEST_CASE("ablation suite: csv shape is 8 variant rows plus volume rows") {
  const World w = tiny_world(467, 24, 24, 8);
  AblationConfig ab;
  ab.base = tiny_config(467);
  ab.base.stage1_epochs = 1;
  ab.base.stage2_epochs = 1;
  ab.seeds = {1};
  ab.wild_volumes = {0.5, 1.0};
  ab.eval.with_reconstruction = false;
  const AblationResult result = run_ablation_suite(ab, w.model, w.annotated, w.wild, w.eval);
  CHECK(result.variant_rows.size() == 8);
  CHECK(result.volume_rows.size() == 2);
  CHECK(result.runs.size() == 8 + 2);
  for (const AblationRunRow& run : result.runs) {
    CHECK(run.error.empty());
    CHECK(std::isfinite(run.stage1_nme));
    CHECK(std::isfinite(run.stage2_nme));
  }

  test::TempDir dir("ablate");
  write_ablation_csv(result, dir.file("ablation.csv"));
  const auto bytes = read_file(dir.file("ablation.csv"));
  const std::string text(bytes.begin(), bytes.end());
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 8 + 2);
  CHECK(text.rfind("variant,mask,stage1_nme,stage2_nme\n", 0) == 0);
  CHECK(text.find("base,on") != std::string::npos);
  CHECK(text.find("cyc+sc,off") != std::string::npos);
  CHECK(text.find("wild-50%,on") != std::string::npos);
}

TEST_CASE("median helper: odd, even, and NaN-skipping") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(median({nan, 1.0, 3.0}) == 2.0);
  CHECK(std::isnan(median({nan, nan})));
}
