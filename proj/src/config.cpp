#include "morphfit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "morphfit/rng.hpp"

namespace morphfit {

using nlohmann::json;

void ProjectConfig::apply_seed(std::uint64_t new_seed) {
  seed = new_seed;
  model.seed = derive_seed(new_seed, 0x300D);
  data.seed = derive_seed(new_seed, 0xDA7A);
  training.seed = derive_seed(new_seed, 0x7124);
}

ProjectConfig default_config() {
  ProjectConfig c;
  c.apply_seed(42);
  return c;
}

namespace {

// Strict field reader: tracks which keys were consumed and rejects leftovers.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  ~Fields() = default;

  void finish() const {
    for (const auto& item : j_.items()) {
      if (seen_.count(item.key()) == 0)
        throw ConfigError(path_ + "." + item.key() + ": unknown field");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const char* key) { return j_.at(key); }

  template <typename T>
  void number(const char* key, T& out, double lo, double hi) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(path_ + "." + key + ": expected a number");
    const double d = v.get<double>();
    if (d < lo || d > hi)
      throw ConfigError(path_ + "." + key + ": value " + std::to_string(d) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out = static_cast<T>(d);
  }

  void integer(const char* key, int& out, long long lo, long long hi) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer())
      throw ConfigError(path_ + "." + key + ": expected an integer");
    const long long d = v.get<long long>();
    if (d < lo || d > hi)
      throw ConfigError(path_ + "." + key + ": value " + std::to_string(d) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out = static_cast<int>(d);
  }

  void u64(const char* key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !v.is_number_integer())
      throw ConfigError(path_ + "." + key + ": expected an unsigned integer");
    out = v.get<std::uint64_t>();
  }

  void boolean(const char* key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(path_ + "." + key + ": expected a boolean");
    out = v.get<bool>();
  }

  void int_list(const char* key, std::vector<int>& out, int lo, int hi) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(path_ + "." + key + ": expected an array");
    std::vector<int> values;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(path_ + "." + key + ": expected integers");
      const long long d = e.get<long long>();
      if (d < lo || d > hi) throw ConfigError(path_ + "." + key + ": entry out of range");
      values.push_back(static_cast<int>(d));
    }
    out = std::move(values);
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_model(const json& j, ModelGenConfig& c) {
  Fields f(j, "model");
  f.u64("seed", c.seed);
  f.integer("n_vertices", c.n_vertices, 68, 1000000);
  f.integer("k_shape", c.k_shape, 0, 4096);
  f.integer("k_expr", c.k_expr, 0, 4096);
  f.integer("frame_edge", c.frame_edge, 8, 4096);
  f.number("footprint", c.footprint, 1.0, 1e6);
  f.finish();
}

void parse_data(const json& j, DataGenConfig& c) {
  Fields f(j, "data");
  f.u64("seed", c.seed);
  f.integer("n_annotated", c.n_annotated, 0, 10000000);
  f.integer("n_wild", c.n_wild, 0, 10000000);
  f.integer("n_eval", c.n_eval, 0, 10000000);
  f.integer("resolution", c.resolution, 8, 4096);
  f.number("alpha_sigma", c.coeff.alpha_sigma, 0.0, 1e3);
  f.number("yaw_min_deg", c.coeff.yaw_min_deg, 0.0, 90.0);
  f.number("yaw_max_deg", c.coeff.yaw_max_deg, 0.0, 90.0);
  f.number("pitch_roll_max_deg", c.coeff.pitch_roll_max_deg, 0.0, 45.0);
  f.number("fit_min", c.coeff.fit_min, 0.01, 0.95);
  f.number("fit_max", c.coeff.fit_max, 0.01, 0.95);
  f.number("frame_margin_px", c.coeff.frame_margin_px, 0.0, 64.0);
  f.number("noise_sigma_px", c.noise.sigma_px, 0.0, 100.0);
  f.number("outlier_prob", c.noise.outlier_prob, 0.0, 1.0);
  f.number("outlier_range_px", c.noise.outlier_range_px, 0.0, 1000.0);
  f.finish();
  c.coeff.frame_edge = c.resolution;
}

void parse_network(const json& j, StackConfig& c) {
  Fields f(j, "network");
  f.integer("input_edge", c.input_edge, 1, 1024);
  f.int_list("regressor_hidden", c.regressor_hidden, 1, 65536);
  f.int_list("encoder_hidden", c.encoder_hidden, 1, 65536);
  f.integer("latent_dim", c.latent_dim, 1, 65536);
  f.int_list("critic_hidden", c.critic_hidden, 1, 65536);
  f.finish();
}

void parse_training(const json& j, TrainingConfig& c) {
  Fields f(j, "training");
  f.u64("seed", c.seed);
  f.number("lambda_2d", c.lambdas.lambda_2d, 0.0, 1e6);
  f.number("lambda_3d", c.lambdas.lambda_3d, 0.0, 1e6);
  f.number("lambda_cyc", c.lambdas.lambda_cyc, 0.0, 1e6);
  f.number("lambda_sc", c.lambdas.lambda_sc, 0.0, 1e6);
  f.integer("batch_size", c.batch_size, 1, 65536);
  f.number("regressor_lr", c.regressor_lr, 1e-12, 1e3);
  f.number("lr_decay_per_epoch", c.lr_decay_per_epoch, 1e-6, 1.0);
  f.number("critic_lr", c.critic_lr, 1e-12, 1e3);
  f.integer("stage1_epochs", c.stage1_epochs, 0, 100000);
  f.integer("stage2_epochs", c.stage2_epochs, 0, 100000);
  f.boolean("use_flm_input", c.flags.use_flm_input);
  f.boolean("use_cycle_losses", c.flags.use_cycle_losses);
  f.boolean("use_self_critic", c.flags.use_self_critic);
  f.boolean("use_weight_mask", c.flags.use_weight_mask);
  f.boolean("stage2_add_overall_loss", c.stage2_add_overall_loss);
  f.boolean("calibrate_output", c.calibrate_output);
  f.number("clip_grad_norm", c.clip_grad_norm, 0.0, 1e9);
  f.integer("log_every", c.log_every, 1, 1000000);
  f.finish();
}

void parse_mask(const json& j, WeightMask& mask) {
  if (!j.is_array()) throw ConfigError("mask: expected an array of {selector, weight}");
  WeightMask m;
  int i = 0;
  for (const auto& e : j) {
    const std::string path = "mask[" + std::to_string(i++) + "]";
    Fields f(e, path);
    MaskEntry entry;
    if (!f.has("selector")) throw ConfigError(path + ": missing selector");
    const json& sel = f.at("selector");
    if (sel.is_string()) {
      if (sel.get<std::string>() != "MOUTH_CENTER")
        throw ConfigError(path + ".selector: unknown token '" + sel.get<std::string>() + "'");
      entry.selector = kMouthCenterSelector;
    } else if (sel.is_number_integer()) {
      entry.selector = sel.get<int>();
    } else {
      throw ConfigError(path + ".selector: expected an index or \"MOUTH_CENTER\"");
    }
    f.number("weight", entry.weight, 1e-9, 1e9);
    f.finish();
    m.entries.push_back(entry);
  }
  m.validate();
  mask = m;
}

void parse_eval(const json& j, EvalOptions& c) {
  Fields f(j, "eval");
  f.boolean("with_reconstruction", c.with_reconstruction);
  f.integer("discard_worst", c.discard_worst, 0, 1000000);
  f.integer("icp_max_iters", c.icp.max_iters, 1, 100000);
  f.number("icp_tol", c.icp.tol, 0.0, 1.0);
  f.boolean("icp_with_scale", c.icp.with_scale);
  f.integer("icp_restarts", c.icp.restarts, 1, 4096);
  f.finish();
}

void parse_ablation(const json& j, ProjectConfig& c) {
  Fields f(j, "ablation");
  if (f.has("seeds")) {
    const json& v = f.at("seeds");
    if (!v.is_array() || v.empty()) throw ConfigError("ablation.seeds: expected a non-empty array");
    c.ablation_seeds.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer() && !e.is_number_unsigned())
        throw ConfigError("ablation.seeds: expected integers");
      c.ablation_seeds.push_back(e.get<std::uint64_t>());
    }
  }
  if (f.has("wild_volumes")) {
    const json& v = f.at("wild_volumes");
    if (!v.is_array() || v.empty())
      throw ConfigError("ablation.wild_volumes: expected a non-empty array");
    c.wild_volumes.clear();
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError("ablation.wild_volumes: expected numbers");
      const double d = e.get<double>();
      if (d <= 0.0 || d > 1.0) throw ConfigError("ablation.wild_volumes: fractions in (0, 1]");
      c.wild_volumes.push_back(d);
    }
  }
  f.finish();
}

}  // namespace

ProjectConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ProjectConfig c = default_config();
  Fields f(j, "config");
  if (f.has("seed")) {
    const json& v = j.at("seed");
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw ConfigError("config.seed: expected an unsigned integer");
    c.apply_seed(v.get<std::uint64_t>());
  }
  if (f.has("model")) parse_model(f.at("model"), c.model);
  if (f.has("data")) parse_data(f.at("data"), c.data);
  if (f.has("network")) parse_network(f.at("network"), c.training.stack);
  if (f.has("training")) parse_training(f.at("training"), c.training);
  if (f.has("mask")) parse_mask(f.at("mask"), c.training.mask);
  if (f.has("eval")) parse_eval(f.at("eval"), c.eval);
  if (f.has("ablation")) parse_ablation(f.at("ablation"), c);
  f.finish();

  if (c.data.coeff.yaw_min_deg > c.data.coeff.yaw_max_deg)
    throw ConfigError("data.yaw_min_deg: must be <= data.yaw_max_deg");
  if (c.data.coeff.fit_min > c.data.coeff.fit_max)
    throw ConfigError("data.fit_min: must be <= data.fit_max");
  if (c.training.stack.input_edge > c.data.resolution)
    throw ConfigError("network.input_edge: must be <= data.resolution");
  if (c.model.frame_edge != c.data.resolution) c.model.frame_edge = c.data.resolution;
  return c;
}

ProjectConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ProjectConfig& c) {
  json mask = json::array();
  for (const MaskEntry& e : c.training.mask.entries) {
    json entry;
    if (e.selector == kMouthCenterSelector)
      entry["selector"] = "MOUTH_CENTER";
    else
      entry["selector"] = e.selector;
    entry["weight"] = e.weight;
    mask.push_back(entry);
  }
  const json j = {
      {"seed", c.seed},
      {"model",
       {{"seed", c.model.seed},
        {"n_vertices", c.model.n_vertices},
        {"k_shape", c.model.k_shape},
        {"k_expr", c.model.k_expr},
        {"frame_edge", c.model.frame_edge},
        {"footprint", c.model.footprint}}},
      {"data",
       {{"seed", c.data.seed},
        {"n_annotated", c.data.n_annotated},
        {"n_wild", c.data.n_wild},
        {"n_eval", c.data.n_eval},
        {"resolution", c.data.resolution},
        {"alpha_sigma", c.data.coeff.alpha_sigma},
        {"yaw_min_deg", c.data.coeff.yaw_min_deg},
        {"yaw_max_deg", c.data.coeff.yaw_max_deg},
        {"pitch_roll_max_deg", c.data.coeff.pitch_roll_max_deg},
        {"fit_min", c.data.coeff.fit_min},
        {"fit_max", c.data.coeff.fit_max},
        {"frame_margin_px", c.data.coeff.frame_margin_px},
        {"noise_sigma_px", c.data.noise.sigma_px},
        {"outlier_prob", c.data.noise.outlier_prob},
        {"outlier_range_px", c.data.noise.outlier_range_px}}},
      {"network",
       {{"input_edge", c.training.stack.input_edge},
        {"regressor_hidden", c.training.stack.regressor_hidden},
        {"encoder_hidden", c.training.stack.encoder_hidden},
        {"latent_dim", c.training.stack.latent_dim},
        {"critic_hidden", c.training.stack.critic_hidden}}},
      {"training",
       {{"seed", c.training.seed},
        {"lambda_2d", c.training.lambdas.lambda_2d},
        {"lambda_3d", c.training.lambdas.lambda_3d},
        {"lambda_cyc", c.training.lambdas.lambda_cyc},
        {"lambda_sc", c.training.lambdas.lambda_sc},
        {"batch_size", c.training.batch_size},
        {"regressor_lr", c.training.regressor_lr},
        {"lr_decay_per_epoch", c.training.lr_decay_per_epoch},
        {"critic_lr", c.training.critic_lr},
        {"stage1_epochs", c.training.stage1_epochs},
        {"stage2_epochs", c.training.stage2_epochs},
        {"use_flm_input", c.training.flags.use_flm_input},
        {"use_cycle_losses", c.training.flags.use_cycle_losses},
        {"use_self_critic", c.training.flags.use_self_critic},
        {"use_weight_mask", c.training.flags.use_weight_mask},
        {"stage2_add_overall_loss", c.training.stage2_add_overall_loss},
        {"calibrate_output", c.training.calibrate_output},
        {"clip_grad_norm", c.training.clip_grad_norm},
        {"log_every", c.training.log_every}}},
      {"mask", mask},
      {"eval",
       {{"with_reconstruction", c.eval.with_reconstruction},
        {"discard_worst", c.eval.discard_worst},
        {"icp_max_iters", c.eval.icp.max_iters},
        {"icp_tol", c.eval.icp.tol},
        {"icp_with_scale", c.eval.icp.with_scale},
        {"icp_restarts", c.eval.icp.restarts}}},
      {"ablation", {{"seeds", c.ablation_seeds}, {"wild_volumes", c.wild_volumes}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace morphfit
