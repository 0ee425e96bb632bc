#include "morphfit/net.hpp"

#include <cmath>
#include <sstream>

#include "morphfit/io_util.hpp"

namespace morphfit {

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

NetworkGrads NetworkGrads::zeros_like(const Network& net) {
  NetworkGrads g;
  g.weights.reserve(net.layers.size());
  g.bias.reserve(net.layers.size());
  for (const DenseLayer& l : net.layers) {
    g.weights.emplace_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    g.bias.emplace_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

void NetworkGrads::add_scaled(const NetworkGrads& other, double factor) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i].noalias() += factor * other.weights[i];
    bias[i].noalias() += factor * other.bias[i];
  }
}

void NetworkGrads::scale(double factor) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] *= factor;
    bias[i] *= factor;
  }
}

namespace {

inline void apply_activation(Eigen::MatrixXd& z, Activation act) {
  switch (act) {
    case Activation::identity:
      break;
    case Activation::relu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::sigmoid:
      z = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      break;
  }
}

// act' expressed through the post-activation value a.
inline Eigen::MatrixXd activation_grad_from_output(const Eigen::MatrixXd& a, Activation act) {
  switch (act) {
    case Activation::identity:
      return Eigen::MatrixXd::Ones(a.rows(), a.cols());
    case Activation::relu:
      return (a.array() > 0.0).cast<double>();
    case Activation::sigmoid:
      return (a.array() * (1.0 - a.array())).matrix();
  }
  return {};
}

}  // namespace

Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs, ForwardTape& tape) {
  if (net.layers.empty()) throw ConfigError("forward on an empty network");
  if (inputs.rows() != net.input_size())
    throw ConfigError("network input size " + std::to_string(inputs.rows()) + " != expected " +
                      std::to_string(net.input_size()));
  tape.input = inputs;
  tape.activations.clear();
  tape.activations.reserve(net.layers.size());
  const Eigen::MatrixXd* x = &tape.input;
  for (const DenseLayer& l : net.layers) {
    Eigen::MatrixXd z = l.weights * (*x);
    z.colwise() += l.bias;
    apply_activation(z, l.activation);
    tape.activations.push_back(std::move(z));
    x = &tape.activations.back();
  }
  return tape.activations.back();
}

Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs) {
  ForwardTape tape;
  return forward(net, inputs, tape);
}

Eigen::MatrixXd backward(const Network& net, const ForwardTape& tape,
                         const Eigen::MatrixXd& output_grad, NetworkGrads& grads) {
  const auto n_layers = net.layers.size();
  if (tape.activations.size() != n_layers) throw ConfigError("stale or mismatched forward tape");
  if (grads.weights.size() != n_layers) throw ConfigError("gradient accumulator layer mismatch");
  if (output_grad.rows() != net.output_size() || output_grad.cols() != tape.input.cols())
    throw ConfigError("output gradient shape mismatch");

  Eigen::MatrixXd g = output_grad;
  for (std::size_t li = n_layers; li-- > 0;) {
    const DenseLayer& l = net.layers[li];
    const Eigen::MatrixXd gz =
        g.cwiseProduct(activation_grad_from_output(tape.activations[li], l.activation));
    const Eigen::MatrixXd& below = (li == 0) ? tape.input : tape.activations[li - 1];
    grads.weights[li].noalias() += gz * below.transpose();
    grads.bias[li].noalias() += gz.rowwise().sum();
    g.noalias() = l.weights.transpose() * gz;
  }
  return g;
}

Network make_mlp(const std::vector<int>& dims, Activation hidden, Activation output,
                 std::mt19937_64& rng) {
  if (dims.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
  Network net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i], fan_out = dims[i + 1];
    if (fan_in <= 0 || fan_out <= 0) throw ConfigError("layer sizes must be positive");
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer l;
    l.weights.resize(fan_out, fan_in);
    for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r) l.weights(r, c) = u(rng);
    l.bias = Eigen::VectorXd::Zero(fan_out);
    l.activation = (i + 2 == dims.size()) ? output : hidden;
    net.layers.push_back(std::move(l));
  }
  return net;
}

void calibrate_output_layer(Network& net, const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
  if (net.layers.empty()) throw ConfigError("cannot calibrate an empty network");
  DenseLayer& last = net.layers.back();
  if (mean.size() != last.weights.rows() || scale.size() != last.weights.rows())
    throw ConfigError("calibration size mismatch");
  for (Eigen::Index r = 0; r < last.weights.rows(); ++r) {
    last.weights.row(r) *= scale[r];
    last.bias[r] = mean[r];
  }
}

Eigen::VectorXd flatten_parameters(const Network& net) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(net.parameter_count()));
  Eigen::Index pos = 0;
  for (const DenseLayer& l : net.layers) {
    for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r) out[pos++] = l.weights(r, c);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out[pos++] = l.bias[i];
  }
  return out;
}

void unflatten_parameters(Network& net, const Eigen::VectorXd& params) {
  if (params.size() != static_cast<Eigen::Index>(net.parameter_count()))
    throw ConfigError("parameter vector size mismatch");
  Eigen::Index pos = 0;
  for (DenseLayer& l : net.layers) {
    for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r) l.weights(r, c) = params[pos++];
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = params[pos++];
  }
}

Eigen::VectorXd flatten_gradients(const NetworkGrads& grads) {
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < grads.weights.size(); ++i)
    total += grads.weights[i].size() + grads.bias[i].size();
  Eigen::VectorXd out(total);
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < grads.weights.size(); ++i) {
    const Eigen::MatrixXd& w = grads.weights[i];
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) out[pos++] = w(r, c);
    for (Eigen::Index k = 0; k < grads.bias[i].size(); ++k) out[pos++] = grads.bias[i][k];
  }
  return out;
}

// ---- Optimizers ---------------------------------------------------------------

OptimizerState OptimizerState::sgd(double lr0, double decay) {
  OptimizerState s;
  s.kind = OptimizerKind::sgd_exp_decay;
  s.base_lr = lr0;
  s.decay_per_epoch = decay;
  return s;
}

OptimizerState OptimizerState::adam(double lr) {
  OptimizerState s;
  s.kind = OptimizerKind::adam;
  s.base_lr = lr;
  s.decay_per_epoch = 1.0;
  return s;
}

double OptimizerState::current_lr() const {
  if (kind == OptimizerKind::sgd_exp_decay) return base_lr * std::pow(decay_per_epoch, epoch);
  return base_lr;
}

void optimizer_step(OptimizerState& state, Network& net, const NetworkGrads& grads) {
  if (grads.weights.size() != net.layers.size()) throw ConfigError("optimizer gradient mismatch");
  ++state.step_count;
  if (state.kind == OptimizerKind::sgd_exp_decay) {
    const double lr = state.current_lr();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      net.layers[i].weights.noalias() -= lr * grads.weights[i];
      net.layers[i].bias.noalias() -= lr * grads.bias[i];
    }
    return;
  }

  if (state.moment1.weights.empty()) {
    state.moment1 = NetworkGrads::zeros_like(net);
    state.moment2 = NetworkGrads::zeros_like(net);
  }
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  const double lr = state.base_lr;
  auto update = [&](auto& m, auto& v, const auto& g, auto& p) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    update(state.moment1.weights[i], state.moment2.weights[i], grads.weights[i],
           net.layers[i].weights);
    update(state.moment1.bias[i], state.moment2.bias[i], grads.bias[i], net.layers[i].bias);
  }
}

// ---- Gradient checker ------------------------------------------------------------

GradCheckReport grad_check(const std::function<double(const Eigen::VectorXd&)>& loss_fn,
                           const Eigen::VectorXd& params, const Eigen::VectorXd& analytic_grad,
                           int trials, std::mt19937_64& rng, double step) {
  if (params.size() == 0) throw ConfigError("grad_check on empty parameter vector");
  if (analytic_grad.size() != params.size())
    throw ConfigError("analytic gradient size mismatch");
  std::uniform_int_distribution<Eigen::Index> pick(0, params.size() - 1);
  GradCheckReport report;
  report.trials = trials;
  Eigen::VectorXd x = params;
  for (int t = 0; t < trials; ++t) {
    const Eigen::Index i = pick(rng);
    const double keep = x[i];
    x[i] = keep + step;
    const double f_plus = loss_fn(x);
    x[i] = keep - step;
    const double f_minus = loss_fn(x);
    x[i] = keep;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
      throw NumericError("grad_check: non-finite loss at coordinate " + std::to_string(i));
    const double numeric = (f_plus - f_minus) / (2.0 * step);
    const double analytic = analytic_grad[i];
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

// ---- Network stack -----------------------------------------------------------------

Eigen::VectorXd NetworkStack::normalize_coeff(const Eigen::VectorXd& raw) const {
  return (raw - coeff_mean).cwiseQuotient(coeff_scale);
}

NetworkStack build_stack(const StackConfig& config) {
  if (config.input_edge <= 0) throw ConfigError("input_edge must be positive");
  if (config.latent_dim <= 0) throw ConfigError("latent_dim must be positive");
  NetworkStack stack;
  stack.config = config;
  stack.rng_seed = config.seed;
  const int in = config.network_input_size();
  const int coeff = config.coeff_size();

  std::mt19937_64 rng(config.seed);
  std::vector<int> reg_dims = {in};
  reg_dims.insert(reg_dims.end(), config.regressor_hidden.begin(), config.regressor_hidden.end());
  reg_dims.push_back(coeff);
  stack.regressor = make_mlp(reg_dims, Activation::relu, Activation::identity, rng);

  std::vector<int> enc_dims = {in};
  enc_dims.insert(enc_dims.end(), config.encoder_hidden.begin(), config.encoder_hidden.end());
  enc_dims.push_back(config.latent_dim);
  stack.encoder = make_mlp(enc_dims, Activation::relu, Activation::identity, rng);

  std::vector<int> critic_dims = {config.latent_dim + coeff};
  critic_dims.insert(critic_dims.end(), config.critic_hidden.begin(), config.critic_hidden.end());
  critic_dims.push_back(1);
  stack.critic = make_mlp(critic_dims, Activation::relu, Activation::sigmoid, rng);

  stack.coeff_mean = Eigen::VectorXd::Zero(coeff);
  stack.coeff_scale = Eigen::VectorXd::Ones(coeff);
  return stack;
}

Eigen::VectorXd encode_network_input(std::span<const float> proxy, std::span<const std::int8_t> flm,
                                     int rows, int cols, int edge, bool use_flm_input) {
  if (rows <= 0 || cols <= 0) throw ConfigError("invalid channel resolution");
  if (edge <= 0 || edge > rows || edge > cols)
    throw ConfigError("input edge must be in [1, min(rows, cols)]");
  const std::size_t cells = static_cast<std::size_t>(rows) * cols;
  if (proxy.size() != cells || flm.size() != cells)
    throw ConfigError("channel buffer size mismatch");

  Eigen::VectorXd out(2 * edge * edge);
  for (int br = 0; br < edge; ++br) {
    const int r0 = br * rows / edge, r1 = (br + 1) * rows / edge;
    for (int bc = 0; bc < edge; ++bc) {
      const int c0 = bc * cols / edge, c1 = (bc + 1) * cols / edge;
      double sum_proxy = 0.0, sum_flm = 0.0;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) {
          const std::size_t idx = static_cast<std::size_t>(r) * cols + c;
          sum_proxy += proxy[idx];
          sum_flm += flm[idx];
        }
      const double area = static_cast<double>((r1 - r0) * (c1 - c0));
      out[br * edge + bc] = sum_proxy / area;
      // The map channel is remapped from {-1,+1} to [0,1] landmark density so
      // that blank regions (and a disabled channel) contribute exactly zero.
      out[edge * edge + br * edge + bc] =
          use_flm_input ? 0.5 * (sum_flm / area + 1.0) : 0.0;
    }
  }
  return out;
}

CoefficientVector forward_regressor(const NetworkStack& stack, const Eigen::VectorXd& input,
                                    ForwardTape& tape) {
  const Eigen::MatrixXd y = forward(stack.regressor, input, tape);
  return CoefficientVector(y.col(0), stack.config.k_shape, stack.config.k_expr);
}

// ---- Checkpoints ----------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'M', 'F', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.u64(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v[i]);
}

Eigen::VectorXd read_vector(ByteReader& r) {
  const auto n = static_cast<Eigen::Index>(r.u64());
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = r.f64();
  return v;
}

void write_network(ByteWriter& w, const Network& net) {
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const DenseLayer& l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.weights.rows()));
    w.u32(static_cast<std::uint32_t>(l.weights.cols()));
    w.u8(static_cast<std::uint8_t>(l.activation));
    for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weights.rows(); ++r) w.f64(l.weights(r, c));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias[i]);
  }
}

Network read_network(ByteReader& r) {
  Network net;
  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t li = 0; li < n_layers; ++li) {
    DenseLayer l;
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    const std::uint8_t act = r.u8();
    if (act > 2) throw IntegrityError("checkpoint: unknown activation code");
    l.activation = static_cast<Activation>(act);
    l.weights.resize(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index row = 0; row < rows; ++row) l.weights(row, c) = r.f64();
    l.bias.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) l.bias[i] = r.f64();
    net.layers.push_back(std::move(l));
  }
  return net;
}

void write_grads(ByteWriter& w, const NetworkGrads& g) {
  w.u32(static_cast<std::uint32_t>(g.weights.size()));
  for (std::size_t i = 0; i < g.weights.size(); ++i) {
    const Eigen::MatrixXd& m = g.weights[i];
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) w.f64(m(r, c));
    write_vector(w, g.bias[i]);
  }
}

NetworkGrads read_grads(ByteReader& r) {
  NetworkGrads g;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index row = 0; row < rows; ++row) m(row, c) = r.f64();
    g.weights.push_back(std::move(m));
    g.bias.push_back(read_vector(r));
  }
  return g;
}

void write_optimizer(ByteWriter& w, const OptimizerState& s) {
  w.u8(static_cast<std::uint8_t>(s.kind));
  w.f64(s.base_lr);
  w.f64(s.decay_per_epoch);
  w.u32(static_cast<std::uint32_t>(s.epoch));
  w.f64(s.beta1);
  w.f64(s.beta2);
  w.f64(s.eps);
  w.u64(static_cast<std::uint64_t>(s.step_count));
  const bool has_moments = !s.moment1.weights.empty();
  w.u8(has_moments ? 1 : 0);
  if (has_moments) {
    write_grads(w, s.moment1);
    write_grads(w, s.moment2);
  }
}

OptimizerState read_optimizer(ByteReader& r) {
  OptimizerState s;
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw IntegrityError("checkpoint: unknown optimizer kind");
  s.kind = static_cast<OptimizerKind>(kind);
  s.base_lr = r.f64();
  s.decay_per_epoch = r.f64();
  s.epoch = static_cast<int>(r.u32());
  s.beta1 = r.f64();
  s.beta2 = r.f64();
  s.eps = r.f64();
  s.step_count = static_cast<std::int64_t>(r.u64());
  if (r.u8() != 0) {
    s.moment1 = read_grads(r);
    s.moment2 = read_grads(r);
  }
  return s;
}
}  // namespace

void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);

  const StackConfig& c = cp.stack.config;
  w.u32(static_cast<std::uint32_t>(c.input_edge));
  w.u8(c.use_flm_input ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(c.k_shape));
  w.u32(static_cast<std::uint32_t>(c.k_expr));
  w.u32(static_cast<std::uint32_t>(c.latent_dim));
  w.u64(c.seed);
  auto write_dims = [&w](const std::vector<int>& dims) {
    w.u32(static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) w.u32(static_cast<std::uint32_t>(d));
  };
  write_dims(c.regressor_hidden);
  write_dims(c.encoder_hidden);
  write_dims(c.critic_hidden);

  w.u64(cp.stack.rng_seed);
  write_vector(w, cp.stack.coeff_mean);
  write_vector(w, cp.stack.coeff_scale);
  write_network(w, cp.stack.regressor);
  write_network(w, cp.stack.encoder);
  write_network(w, cp.stack.critic);
  write_optimizer(w, cp.regressor_opt);
  write_optimizer(w, cp.encoder_opt);
  write_optimizer(w, cp.critic_opt);
  w.str(cp.rng_state);
  w.u32(cp.stage);
  w.u64(cp.steps_done);

  const std::uint32_t checksum = crc32(w.data());
  w.u32(checksum);
  write_file_atomic(path, w.data());
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file(path);
  if (buf.size() < 8) throw IntegrityError(path + ": truncated checkpoint");
  const std::uint32_t stored = crc32(buf.data(), buf.size() - 4);
  ByteReader tail(buf.data() + buf.size() - 4, 4);
  if (tail.u32() != stored) throw IntegrityError(path + ": checkpoint checksum mismatch");

  ByteReader r(buf.data(), buf.size() - 4);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IntegrityError(path + ": not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IntegrityError(path + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint cp;
  StackConfig c;
  c.input_edge = static_cast<int>(r.u32());
  c.use_flm_input = r.u8() != 0;
  c.k_shape = static_cast<int>(r.u32());
  c.k_expr = static_cast<int>(r.u32());
  c.latent_dim = static_cast<int>(r.u32());
  c.seed = r.u64();
  auto read_dims = [&r]() {
    std::vector<int> dims(r.u32());
    for (int& d : dims) d = static_cast<int>(r.u32());
    return dims;
  };
  c.regressor_hidden = read_dims();
  c.encoder_hidden = read_dims();
  c.critic_hidden = read_dims();
  cp.stack.config = c;

  cp.stack.rng_seed = r.u64();
  cp.stack.coeff_mean = read_vector(r);
  cp.stack.coeff_scale = read_vector(r);
  cp.stack.regressor = read_network(r);
  cp.stack.encoder = read_network(r);
  cp.stack.critic = read_network(r);
  cp.regressor_opt = read_optimizer(r);
  cp.encoder_opt = read_optimizer(r);
  cp.critic_opt = read_optimizer(r);
  cp.rng_state = r.str();
  cp.stage = r.u32();
  cp.steps_done = r.u64();
  if (r.remaining() != 0) throw IntegrityError(path + ": trailing bytes in checkpoint");
  return cp;
}

}  // namespace morphfit
