#ifndef MORPHFIT_NET_HPP_
#define MORPHFIT_NET_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "morphfit/common.hpp"
#include "morphfit/model.hpp"

namespace morphfit {

enum class Activation : std::uint8_t { identity = 0, relu = 1, sigmoid = 2 };

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
  Activation activation = Activation::identity;
};

struct Network {
  std::vector<DenseLayer> layers;

  int input_size() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weights.cols()); }
  int output_size() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weights.rows()); }
  std::size_t parameter_count() const;
};

/// Activation record of one batched forward pass. Samples are columns.
struct ForwardTape {
  Eigen::MatrixXd input;                     // in x batch
  std::vector<Eigen::MatrixXd> activations;  // post-activation per layer, out_l x batch
};

struct NetworkGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;

  static NetworkGrads zeros_like(const Network& net);
  void add_scaled(const NetworkGrads& other, double factor);
  void scale(double factor);
};

/// Batched affine+activation chain. Returns the final activations (out x batch)
/// and fills the tape needed for backward.
Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs, ForwardTape& tape);
Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs);

/// Exact reverse-mode pass. output_grad is d(loss)/d(outputs) (out x batch);
/// fills parameter gradients (accumulating) and returns d(loss)/d(inputs).
/// ReLU uses subgradient 0 at exactly 0.
Eigen::MatrixXd backward(const Network& net, const ForwardTape& tape,
                         const Eigen::MatrixXd& output_grad, NetworkGrads& grads);

/// Glorot-uniform MLP: hidden layers use `hidden`, the final layer `output`.
Network make_mlp(const std::vector<int>& dims, Activation hidden, Activation output,
                 std::mt19937_64& rng);

/// Rescales the output layer so that unit-scale activations produce outputs
/// distributed like the given per-row mean/scale (row i of the weight matrix
/// is multiplied by scale[i], bias set to mean[i]).
void calibrate_output_layer(Network& net, const Eigen::VectorXd& mean, const Eigen::VectorXd& scale);

// ---- Flattened parameter access (used by the gradient checker) -------------

Eigen::VectorXd flatten_parameters(const Network& net);
void unflatten_parameters(Network& net, const Eigen::VectorXd& params);
Eigen::VectorXd flatten_gradients(const NetworkGrads& grads);

// ---- Optimizers --------------------------------------------------------------

enum class OptimizerKind : std::uint8_t { sgd_exp_decay = 0, adam = 1 };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd_exp_decay;
  double base_lr = 5e-5;
  double decay_per_epoch = 1.0;  // lr = base_lr * decay^epoch (SGD only)
  int epoch = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t step_count = 0;
  NetworkGrads moment1, moment2;  // Adam running moments, lazily sized

  static OptimizerState sgd(double lr0, double decay);
  static OptimizerState adam(double lr);

  double current_lr() const;
};

void optimizer_step(OptimizerState& state, Network& net, const NetworkGrads& grads);

// ---- Finite-difference gradient checker --------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int trials = 0;
};

/// Central differences (default step 1e-6) at `trials` randomly sampled
/// coordinates of `params`, compared against `analytic_grad`. Relative error
/// uses a unit floor: |a - n| / max(1, |a|, |n|). Throws NumericError naming
/// the coordinate if the loss evaluates non-finite.
GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& loss_fn,
                           const Eigen::VectorXd& params, const Eigen::VectorXd& analytic_grad,
                           int trials, std::mt19937_64& rng, double step = 1e-6);

// ---- The three-network stack --------------------------------------------------

struct StackConfig {
  int input_edge = 32;  // each input channel is downsampled to edge x edge
  std::vector<int> regressor_hidden = {256, 128};
  std::vector<int> encoder_hidden = {128};
  int latent_dim = 64;
  std::vector<int> critic_hidden = {512, 1024, 1024};
  int k_shape = 40;
  int k_expr = 10;
  bool use_flm_input = true;
  std::uint64_t seed = 1;

  int network_input_size() const { return 2 * input_edge * input_edge; }
  int coeff_size() const { return CoefficientVector::size_for(k_shape, k_expr); }
};

/// Regressor (inputs -> coefficients), encoder (inputs -> latent) and critic
/// ([latent, normalized coefficients] -> score in (0,1)). The critic ends in
/// a single sigmoid unit; coeff_mean/coeff_scale normalize coefficients at
/// the critic input (identity until calibrated).
struct NetworkStack {
  Network regressor;
  Network encoder;
  Network critic;
  Eigen::VectorXd coeff_mean;   // coeff_size
  Eigen::VectorXd coeff_scale;  // coeff_size, strictly positive
  StackConfig config;
  std::uint64_t rng_seed = 0;

  Eigen::VectorXd normalize_coeff(const Eigen::VectorXd& raw) const;
};

NetworkStack build_stack(const StackConfig& config);

/// Downsamples the two 120x120-style channels to edge x edge by box-mean
/// binning and concatenates them (proxy first). A disabled landmark-map
/// channel is replaced by the blank value -1.
Eigen::VectorXd encode_network_input(std::span<const float> proxy, std::span<const std::int8_t> flm,
                                     int rows, int cols, int edge, bool use_flm_input);

/// Forward pass of the regressor on one encoded input; returns the predicted
/// coefficient vector and the tape for backward.
CoefficientVector forward_regressor(const NetworkStack& stack, const Eigen::VectorXd& input,
                                    ForwardTape& tape);

// ---- Checkpoints ----------------------------------------------------------------

struct Checkpoint {
  NetworkStack stack;
  OptimizerState regressor_opt;
  OptimizerState encoder_opt;
  OptimizerState critic_opt;
  std::string rng_state;  // serialized mt19937_64
  std::uint32_t stage = 0;
  std::uint64_t steps_done = 0;
};

void save_checkpoint(const Checkpoint& cp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace morphfit

#endif  // MORPHFIT_NET_HPP_
