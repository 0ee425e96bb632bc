#ifndef MORPHFIT_TRAIN_HPP_
#define MORPHFIT_TRAIN_HPP_

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "morphfit/data.hpp"
#include "morphfit/eval.hpp"
#include "morphfit/losses.hpp"
#include "morphfit/net.hpp"

namespace morphfit {

struct AblationFlags {
  bool use_flm_input = true;
  bool use_cycle_losses = true;  // the 2D/3D consistency and cycle terms
  bool use_self_critic = true;
  bool use_weight_mask = true;   // false: same 18 points, uniform weights
};

/// The paper-style variants: base (image only, supervised loss alone),
/// cyc (landmark-map input + consistency losses), sc (self-critic only),
/// cyc+sc (everything).
AblationFlags flags_for_variant(const std::string& variant);

struct TrainingConfig {
  LossWeights lambdas;
  int batch_size = 32;
  double regressor_lr = 5e-5;
  double lr_decay_per_epoch = 0.95;
  double critic_lr = 1e-4;
  int stage1_epochs = 2;
  int stage2_epochs = 10;
  std::uint64_t seed = 1;
  AblationFlags flags;
  WeightMask mask = WeightMask::default_mask();
  bool stage2_add_overall_loss = false;  // false: fine-tune on the vertex cost alone
  bool calibrate_output = true;          // scale the regressor output layer to
                                         // the annotated coefficient statistics
  double clip_grad_norm = 600.0;         // global-norm clip on the regressor
                                         // gradient (0 disables); keeps the
                                         // pixel-scale vertex cost stable
  int log_every = 1;
  StackConfig stack;
};

/// One row of the stage-1 loss log (the CSV schema is fixed).
struct LossRow {
  std::int64_t step = 0;
  LossBreakdown losses;
  double lr = 0.0;
};

/// One row of the stage-2 log.
struct VdcRow {
  std::int64_t step = 0;
  double vdc = 0.0;
  double lr = 0.0;
};

void write_stage1_log(const std::vector<LossRow>& rows, const std::string& path);
void write_stage2_log(const std::vector<VdcRow>& rows, const std::string& path);

// ---- Pure per-sample pieces of the wild consistency scheme -------------------

/// Forward half: landmarks predicted from the forward pass, their 2D
/// consistency against the input landmarks, and the re-rasterized landmark
/// map that feeds the backward pass.
struct WildForwardResult {
  double l2d_con = 0.0;
  Eigen::VectorXd d_alpha_fwd;  // gradient of l2d_con w.r.t. the forward coefficients
  LandmarkSet predicted_2d;
  FacialLandmarkMap flm_backward;
};
WildForwardResult wild_forward_pass(const MorphableModel& model, const LandmarkSet& input_2d,
                                    const CoefficientVector& alpha_fwd, const WeightMask& mask,
                                    int resolution);

/// Backward half: 3D consistency between the two passes and the cycle loss of
/// the twice-mapped landmarks against the input. Gradients are reported per
/// term so the caller applies the lambda weights.
struct WildBackwardResult {
  double l3d_con = 0.0;
  double lcyc = 0.0;
  Eigen::VectorXd d3d_alpha_fwd;   // d l3d_con / d alpha_fwd
  Eigen::VectorXd d3d_alpha_bwd;   // d l3d_con / d alpha_bwd
  Eigen::VectorXd dcyc_alpha_bwd;  // d lcyc / d alpha_bwd
};
WildBackwardResult wild_backward_pass(const MorphableModel& model, const LandmarkSet& input_2d,
                                      const CoefficientVector& alpha_fwd,
                                      const CoefficientVector& alpha_bwd, const WeightMask& mask);

// ---- Trainer -------------------------------------------------------------------

/// Replaces the regressor output for loss computation (tests inject oracles).
/// Arguments: true for wild samples, and the dataset record index.
using PredictionOverride = std::function<CoefficientVector(bool is_wild, std::size_t index)>;

class Trainer {
 public:
  /// Fresh trainer: builds and (optionally) calibrates the network stack.
  Trainer(const TrainingConfig& config, const MorphableModel& model, const Dataset& annotated,
          const Dataset& wild);
  /// Resumes from a checkpoint (used for stage 2 from a stage-1 file).
  Trainer(const TrainingConfig& config, const MorphableModel& model, const Dataset& annotated,
          const Dataset& wild, const Checkpoint& checkpoint);
  ~Trainer();

  /// Stage 1: per step, one annotated and one wild batch; critic update then
  /// regressor update. An epoch is one pass over the wild split (or the
  /// annotated split when no wild data is loaded).
  void train_stage1();
  /// Stage 2: vertex-distance fine-tuning on annotated batches, learning-rate
  /// decay continuing from the stage-1 epoch counter.
  void train_stage2();

  LossBreakdown stage1_step();  // exposed for tests
  double stage2_step();

  int steps_per_epoch_stage1() const;
  int steps_per_epoch_stage2() const;

  const std::vector<LossRow>& stage1_history() const { return stage1_history_; }
  const std::vector<VdcRow>& stage2_history() const { return stage2_history_; }
  const NetworkStack& stack() const { return stack_; }

  /// Coefficient targets, one column per sample, annotated columns first.
  /// Wild columns are NaN by construction: the supervised losses only index
  /// annotated columns, and the NaN-abort would trip if that ever changed.
  const Eigen::MatrixXd& targets() const { return targets_; }

  Checkpoint make_checkpoint(std::uint32_t stage) const;

  void set_prediction_override(PredictionOverride override_fn);

 private:
  struct IndexStream;

  Eigen::VectorXd encode_sample(const ImageGrid& proxy, const FacialLandmarkMap& flm) const;
  CoefficientVector predicted_or_override(const Eigen::MatrixXd& outputs, int col, bool is_wild,
                                          std::size_t index) const;
  LossBreakdown stage1_step_impl(bool add_vertex_cost, double* vdc_out);

  TrainingConfig config_;
  const MorphableModel& model_;
  const Dataset& annotated_;
  const Dataset& wild_;
  WeightMask active_mask_;

  NetworkStack stack_;
  OptimizerState regressor_opt_;
  OptimizerState encoder_opt_;
  OptimizerState critic_opt_;
  std::mt19937_64 master_rng_;

  Eigen::MatrixXd ann_inputs_;   // encoded once; in x n_annotated
  Eigen::MatrixXd wild_inputs_;  // in x n_wild
  Eigen::MatrixXd targets_;      // coeff x (n_annotated + n_wild); wild part NaN

  std::unique_ptr<IndexStream> ann_stream_;
  std::unique_ptr<IndexStream> wild_stream_;

  std::vector<LossRow> stage1_history_;
  std::vector<VdcRow> stage2_history_;
  std::int64_t global_step_ = 0;
  PredictionOverride override_;
};

// ---- Ablation suite ----------------------------------------------------------------

struct AblationConfig {
  TrainingConfig base;
  std::vector<std::uint64_t> seeds = {101, 202, 303, 404, 505};
  std::vector<double> wild_volumes = {0.25, 0.5, 0.75, 1.0};
  EvalOptions eval{.with_reconstruction = false};
};

struct AblationCell {
  std::string variant;  // "base", "cyc", "sc", "cyc+sc", or "wild-25%" style
  std::string mask;     // "on" / "off"
  double stage1_nme = 0.0;  // medians over seeds (NaN for failed cells)
  double stage2_nme = 0.0;
};

struct AblationRunRow {
  std::string variant;
  std::string mask;
  std::uint64_t seed = 0;
  double stage1_nme = 0.0;
  double stage2_nme = 0.0;
  std::string error;  // empty on success
};

struct AblationResult {
  std::vector<AblationCell> variant_rows;  // 8 rows: 4 variants x mask on/off
  std::vector<AblationCell> volume_rows;   // one per wild volume
  std::vector<AblationRunRow> runs;        // per-seed detail
};

/// Trains every Table-2-style variant and the wild-volume sweep, evaluating
/// the 68-point 2D NME after each stage. Failed runs are recorded and skipped
/// in the medians; remaining cells continue.
AblationResult run_ablation_suite(const AblationConfig& config, const MorphableModel& model,
                                  const Dataset& annotated, const Dataset& wild,
                                  const Dataset& eval_set);

void write_ablation_csv(const AblationResult& result, const std::string& path);
void write_ablation_runs_csv(const AblationResult& result, const std::string& path);

double median(std::vector<double> values);

}  // namespace morphfit

#endif  // MORPHFIT_TRAIN_HPP_
