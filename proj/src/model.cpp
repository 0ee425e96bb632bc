#include "morphfit/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "morphfit/io_util.hpp"
#include "morphfit/rng.hpp"

namespace morphfit {

CoefficientVector::CoefficientVector(Eigen::VectorXd raw, int k_shape, int k_expr)
    : raw_(std::move(raw)), ks_(k_shape), ke_(k_expr) {
  if (raw_.size() != size_for(k_shape, k_expr)) {
    throw ConfigError("coefficient vector length " + std::to_string(raw_.size()) +
                      " does not match 1+2+9+" + std::to_string(k_shape) + "+" +
                      std::to_string(k_expr));
  }
}

Eigen::Matrix3d CoefficientVector::projection() const {
  Eigen::Matrix3d p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p(r, c) = raw_[kProjectionOffset + 3 * r + c];
  return p;
}

void CoefficientVector::set_projection(const Eigen::Matrix3d& p) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) raw_[kProjectionOffset + 3 * r + c] = p(r, c);
}

void MorphableModel::rebuild_landmark_slice() {
  const int L = kLandmarkCount;
  landmark_mean.resize(3 * L);
  landmark_shape.resize(3 * L, shape_basis.cols());
  landmark_expr.resize(3 * L, expr_basis.cols());
  for (int j = 0; j < L; ++j) {
    const int v = static_cast<int>(landmark_indices[j]);
    landmark_mean.segment<3>(3 * j) = mean_shape.segment<3>(3 * v);
    landmark_shape.middleRows(3 * j, 3) = shape_basis.middleRows(3 * v, 3);
    landmark_expr.middleRows(3 * j, 3) = expr_basis.middleRows(3 * v, 3);
  }
}

namespace {
void check_orthonormal(const Eigen::MatrixXd& basis, const char* name) {
  const Eigen::MatrixXd gram = basis.transpose() * basis;
  const double dev = (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols()))
                         .cwiseAbs()
                         .maxCoeff();
  if (dev > 1e-9) {
    throw ConfigError(std::string(name) + " basis columns are not orthonormal (max deviation " +
                      std::to_string(dev) + ")");
  }
}
}  // namespace

void MorphableModel::validate() const {
  if (n_vertices <= 0) throw ConfigError("model has no vertices");
  if (mean_shape.size() != 3 * n_vertices) throw ConfigError("mean shape length != 3N");
  if (shape_basis.rows() != 3 * n_vertices) throw ConfigError("shape basis rows != 3N");
  if (expr_basis.rows() != 3 * n_vertices) throw ConfigError("expression basis rows != 3N");
  if (landmark_indices.size() != kLandmarkCount)
    throw ConfigError("model must carry exactly 68 landmark indices");
  std::vector<std::uint32_t> sorted(landmark_indices);
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("landmark indices must be distinct");
  if (sorted.back() >= static_cast<std::uint32_t>(n_vertices))
    throw ConfigError("landmark index out of range");
  if (shape_basis.cols() > 0) check_orthonormal(shape_basis, "shape");
  if (expr_basis.cols() > 0) check_orthonormal(expr_basis, "expression");
}

int FacialLandmarkMap::positive_count() const {
  int n = 0;
  for (std::int8_t v : grid) n += (v > 0);
  return n;
}

// ---- Core operations -------------------------------------------------------

Eigen::VectorXd render_shape(const MorphableModel& model, const CoefficientVector& coeff) {
  if (coeff.k_shape() != model.k_shape() || coeff.k_expr() != model.k_expr()) {
    throw ConfigError("coefficient partition (" + std::to_string(coeff.k_shape()) + "," +
                      std::to_string(coeff.k_expr()) + ") does not match model bases (" +
                      std::to_string(model.k_shape()) + "," + std::to_string(model.k_expr()) + ")");
  }
  Eigen::VectorXd shape = model.mean_shape;
  if (model.k_shape() > 0) shape.noalias() += model.shape_basis * coeff.alpha_shape();
  if (model.k_expr() > 0) shape.noalias() += model.expr_basis * coeff.alpha_expr();
  return shape;
}

Eigen::VectorXd project(const Eigen::VectorXd& shape, const CoefficientVector& coeff) {
  if (!coeff.all_finite()) throw NumericError("non-finite camera coefficients");
  if (shape.size() % 3 != 0) throw ConfigError("shape length must be a multiple of 3");
  const auto n = shape.size() / 3;
  const double f = coeff.scale();
  const Eigen::Matrix3d p = coeff.projection();
  const Eigen::Vector2d t = coeff.translation();
  Eigen::VectorXd out(2 * n);
  for (Eigen::Index v = 0; v < n; ++v) {
    const Eigen::Vector3d x = shape.segment<3>(3 * v);
    out[2 * v + 0] = f * p.row(0).dot(x) + t[0];
    out[2 * v + 1] = f * p.row(1).dot(x) + t[1];
  }
  return out;
}

Eigen::VectorXd pose_transform(const Eigen::VectorXd& shape, const CoefficientVector& coeff) {
  if (!coeff.all_finite()) throw NumericError("non-finite camera coefficients");
  if (shape.size() % 3 != 0) throw ConfigError("shape length must be a multiple of 3");
  const auto n = shape.size() / 3;
  const double f = coeff.scale();
  const Eigen::Matrix3d p = coeff.projection();
  const Eigen::Vector2d t = coeff.translation();
  Eigen::VectorXd out(3 * n);
  for (Eigen::Index v = 0; v < n; ++v) {
    const Eigen::Vector3d x = shape.segment<3>(3 * v);
    out.segment<3>(3 * v) = f * (p * x);
    out[3 * v + 0] += t[0];
    out[3 * v + 1] += t[1];
  }
  return out;
}

LandmarkSet sparse_landmarks(const MorphableModel& model, const Eigen::VectorXd& shape_or_vertices) {
  const Eigen::Index n3 = 3 * model.n_vertices;
  const Eigen::Index n2 = 2 * model.n_vertices;
  int dim;
  if (shape_or_vertices.size() == n3) {
    dim = 3;
  } else if (shape_or_vertices.size() == n2) {
    dim = 2;
  } else {
    throw ConfigError("input length " + std::to_string(shape_or_vertices.size()) +
                      " is neither 3N nor 2N for N=" + std::to_string(model.n_vertices));
  }
  LandmarkSet lm(dim);
  for (int j = 0; j < kLandmarkCount; ++j) {
    const auto idx = static_cast<Eigen::Index>(model.landmark_indices[j]);
    if (idx >= model.n_vertices) throw ConfigError("landmark index out of range");
    for (int d = 0; d < dim; ++d) lm.points(j, d) = shape_or_vertices[dim * idx + d];
  }
  return lm;
}

namespace {
// Half-up rounding: -0.5 rounds to 0, 2.5 rounds to 3.
inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }
}  // namespace

RasterizeResult rasterize_flm(const LandmarkSet& landmarks, int rows, int cols) {
  if (landmarks.dim != 2) throw ConfigError("rasterize_flm requires 2D landmarks");
  if (rows <= 0 || cols <= 0) throw ConfigError("rasterize_flm requires a positive resolution");
  RasterizeResult result;
  result.map = FacialLandmarkMap(rows, cols);
  for (int j = 0; j < kLandmarkCount; ++j) {
    const int c = round_half_up(landmarks.points(j, 0));
    const int r = round_half_up(landmarks.points(j, 1));
    if (r < 0 || r >= rows || c < 0 || c >= cols) {
      ++result.skipped;
      continue;
    }
    result.map.at(r, c) = 1;
  }
  return result;
}

// ---- Landmark-only fast paths ----------------------------------------------

namespace {
Eigen::VectorXd landmark_shape_vector(const MorphableModel& model, const CoefficientVector& coeff) {
  Eigen::VectorXd s = model.landmark_mean;
  if (model.k_shape() > 0) s.noalias() += model.landmark_shape * coeff.alpha_shape();
  if (model.k_expr() > 0) s.noalias() += model.landmark_expr * coeff.alpha_expr();
  return s;
}

void check_partition(const MorphableModel& model, const CoefficientVector& coeff) {
  if (coeff.k_shape() != model.k_shape() || coeff.k_expr() != model.k_expr())
    throw ConfigError("coefficient partition does not match model bases");
}
}  // namespace

LandmarkSet landmarks_2d(const MorphableModel& model, const CoefficientVector& coeff) {
  check_partition(model, coeff);
  const Eigen::VectorXd s = landmark_shape_vector(model, coeff);
  const double f = coeff.scale();
  const Eigen::Matrix3d p = coeff.projection();
  const Eigen::Vector2d t = coeff.translation();
  LandmarkSet lm(2);
  for (int j = 0; j < kLandmarkCount; ++j) {
    const Eigen::Vector3d x = s.segment<3>(3 * j);
    lm.points(j, 0) = f * p.row(0).dot(x) + t[0];
    lm.points(j, 1) = f * p.row(1).dot(x) + t[1];
  }
  return lm;
}

LandmarkSet landmarks_3d(const MorphableModel& model, const CoefficientVector& coeff) {
  check_partition(model, coeff);
  const Eigen::VectorXd s = landmark_shape_vector(model, coeff);
  const double f = coeff.scale();
  const Eigen::Matrix3d p = coeff.projection();
  const Eigen::Vector2d t = coeff.translation();
  LandmarkSet lm(3);
  for (int j = 0; j < kLandmarkCount; ++j) {
    const Eigen::Vector3d x = s.segment<3>(3 * j);
    Eigen::Vector3d u = f * (p * x);
    u[0] += t[0];
    u[1] += t[1];
    lm.points.row(j) = u.transpose();
  }
  return lm;
}

void landmarks_2d_vjp(const MorphableModel& model, const CoefficientVector& coeff,
                      const Eigen::MatrixXd& grad_points, Eigen::VectorXd& grad_coeff) {
  check_partition(model, coeff);
  if (grad_points.rows() != kLandmarkCount || grad_points.cols() != 2)
    throw ConfigError("landmarks_2d_vjp expects a 68x2 gradient");
  if (grad_coeff.size() != coeff.size()) throw ConfigError("gradient accumulator size mismatch");

  const Eigen::VectorXd s = landmark_shape_vector(model, coeff);
  const double f = coeff.scale();
  const Eigen::Matrix3d p = coeff.projection();

  Eigen::VectorXd ds(3 * kLandmarkCount);
  double df = 0.0;
  Eigen::Vector2d dt = Eigen::Vector2d::Zero();
  Eigen::Matrix3d dp = Eigen::Matrix3d::Zero();
  for (int j = 0; j < kLandmarkCount; ++j) {
    const Eigen::Vector3d x = s.segment<3>(3 * j);
    const Eigen::Vector2d g = grad_points.row(j).transpose();
    const Eigen::Vector3d m = p * x;  // pre-scale camera coords
    df += g[0] * m[0] + g[1] * m[1];
    dt += g;
    dp.row(0) += f * g[0] * x.transpose();
    dp.row(1) += f * g[1] * x.transpose();
    ds.segment<3>(3 * j) = f * (g[0] * p.row(0) + g[1] * p.row(1)).transpose();
  }
  grad_coeff[CoefficientVector::kScaleOffset] += df;
  grad_coeff.segment<2>(CoefficientVector::kTranslationOffset) += dt;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      grad_coeff[CoefficientVector::kProjectionOffset + 3 * r + c] += dp(r, c);
  if (model.k_shape() > 0)
    grad_coeff.segment(CoefficientVector::kAlphaOffset, model.k_shape()).noalias() +=
        model.landmark_shape.transpose() * ds;
  if (model.k_expr() > 0)
    grad_coeff.segment(CoefficientVector::kAlphaOffset + model.k_shape(), model.k_expr())
        .noalias() += model.landmark_expr.transpose() * ds;
}

void landmarks_3d_vjp(const MorphableModel& model, const CoefficientVector& coeff,
                      const Eigen::MatrixXd& grad_points, Eigen::VectorXd& grad_coeff) {
  check_partition(model, coeff);
  if (grad_points.rows() != kLandmarkCount || grad_points.cols() != 3)
    throw ConfigError("landmarks_3d_vjp expects a 68x3 gradient");
  if (grad_coeff.size() != coeff.size()) throw ConfigError("gradient accumulator size mismatch");

  const Eigen::VectorXd s = landmark_shape_vector(model, coeff);
  const double f = coeff.scale();
  const Eigen::Matrix3d p = coeff.projection();

  Eigen::VectorXd ds(3 * kLandmarkCount);
  double df = 0.0;
  Eigen::Vector2d dt = Eigen::Vector2d::Zero();
  Eigen::Matrix3d dp = Eigen::Matrix3d::Zero();
  for (int j = 0; j < kLandmarkCount; ++j) {
    const Eigen::Vector3d x = s.segment<3>(3 * j);
    const Eigen::Vector3d g = grad_points.row(j).transpose();
    df += g.dot(p * x);
    dt += g.head<2>();  // the z component of the offset is fixed at 0
    dp += f * g * x.transpose();
    ds.segment<3>(3 * j) = f * (p.transpose() * g);
  }
  grad_coeff[CoefficientVector::kScaleOffset] += df;
  grad_coeff.segment<2>(CoefficientVector::kTranslationOffset) += dt;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      grad_coeff[CoefficientVector::kProjectionOffset + 3 * r + c] += dp(r, c);
  if (model.k_shape() > 0)
    grad_coeff.segment(CoefficientVector::kAlphaOffset, model.k_shape()).noalias() +=
        model.landmark_shape.transpose() * ds;
  if (model.k_expr() > 0)
    grad_coeff.segment(CoefficientVector::kAlphaOffset + model.k_shape(), model.k_expr())
        .noalias() += model.landmark_expr.transpose() * ds;
}

void dense_projection_vjp(const MorphableModel& model, const CoefficientVector& coeff,
                          const Eigen::VectorXd& grad_vertices, Eigen::VectorXd& grad_coeff) {
  check_partition(model, coeff);
  if (grad_vertices.size() != 2 * model.n_vertices)
    throw ConfigError("dense_projection_vjp expects a 2N gradient");
  if (grad_coeff.size() != coeff.size()) throw ConfigError("gradient accumulator size mismatch");

  const Eigen::VectorXd shape = render_shape(model, coeff);
  const double f = coeff.scale();
  const Eigen::Matrix3d p = coeff.projection();

  Eigen::VectorXd ds(3 * model.n_vertices);
  double df = 0.0;
  Eigen::Vector2d dt = Eigen::Vector2d::Zero();
  Eigen::Matrix3d dp = Eigen::Matrix3d::Zero();
  for (int v = 0; v < model.n_vertices; ++v) {
    const Eigen::Vector3d x = shape.segment<3>(3 * v);
    const Eigen::Vector2d g(grad_vertices[2 * v], grad_vertices[2 * v + 1]);
    const Eigen::Vector3d m = p * x;
    df += g[0] * m[0] + g[1] * m[1];
    dt += g;
    dp.row(0) += f * g[0] * x.transpose();
    dp.row(1) += f * g[1] * x.transpose();
    ds.segment<3>(3 * v) = f * (g[0] * p.row(0) + g[1] * p.row(1)).transpose();
  }
  grad_coeff[CoefficientVector::kScaleOffset] += df;
  grad_coeff.segment<2>(CoefficientVector::kTranslationOffset) += dt;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      grad_coeff[CoefficientVector::kProjectionOffset + 3 * r + c] += dp(r, c);
  if (model.k_shape() > 0)
    grad_coeff.segment(CoefficientVector::kAlphaOffset, model.k_shape()).noalias() +=
        model.shape_basis.transpose() * ds;
  if (model.k_expr() > 0)
    grad_coeff.segment(CoefficientVector::kAlphaOffset + model.k_shape(), model.k_expr())
        .noalias() += model.expr_basis.transpose() * ds;
}

// ---- Synthetic model generation --------------------------------------------

namespace {

// Thin QR factor with deterministic column signs (diagonal of R >= 0).
Eigen::MatrixXd orthonormal_columns(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) g(r, c) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < cols; ++c)
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  return q;
}

}  // namespace

MorphableModel synthesize_model(const ModelGenConfig& config) {
  if (config.n_vertices < kLandmarkCount)
    throw ConfigError("synthetic model needs at least 68 vertices");
  if (config.k_shape < 0 || config.k_expr < 0) throw ConfigError("basis sizes must be >= 0");
  if (3 * config.n_vertices < std::max(config.k_shape, config.k_expr))
    throw ConfigError("basis larger than ambient dimension");

  const int n = config.n_vertices;
  std::mt19937_64 rng = make_engine(config.seed, 0x4d4f44ULL /* "MOD" */);

  // Smooth closed surface: a Fibonacci sphere whose radius is modulated by a
  // few low-frequency cosine waves, then squashed to face-like proportions.
  constexpr int kWaves = 6;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Eigen::Matrix<double, 3, kWaves> wave_dirs;
  Eigen::Matrix<double, kWaves, 1> wave_amp, wave_freq, wave_phase;
  for (int k = 0; k < kWaves; ++k) {
    wave_dirs.col(k) = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)).normalized();
    wave_amp[k] = 0.05 * unit(rng);
    wave_freq[k] = 1.0 + 2.0 * std::abs(unit(rng));
    wave_phase[k] = phase(rng);
  }
  const double spin = phase(rng);  // seeded twist of the lattice

  Eigen::VectorXd mean(3 * n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double rail = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double ang = golden * i + spin;
    Eigen::Vector3d d(rail * std::cos(ang), rail * std::sin(ang), z);
    double radius = 1.0;
    for (int k = 0; k < kWaves; ++k)
      radius += wave_amp[k] * std::cos(wave_freq[k] * wave_dirs.col(k).dot(d) + wave_phase[k]);
    Eigen::Vector3d pt = radius * d;
    pt.x() *= 0.85;
    pt.z() *= 0.65;  // shallower depth than width/height
    mean.segment<3>(3 * i) = pt;
  }

  // Center on the origin and scale the x/y extent to the frame footprint.
  // The camera translation places the face inside the frame, as with the
  // usual mean-centered morphable model convention.
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300, zmid = 0.0;
  for (int i = 0; i < n; ++i) {
    xmin = std::min(xmin, mean[3 * i]);
    xmax = std::max(xmax, mean[3 * i]);
    ymin = std::min(ymin, mean[3 * i + 1]);
    ymax = std::max(ymax, mean[3 * i + 1]);
    zmid += mean[3 * i + 2];
  }
  zmid /= n;
  const double extent = std::max(xmax - xmin, ymax - ymin);
  const double s = config.footprint / extent;
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  for (int i = 0; i < n; ++i) {
    mean[3 * i + 0] = (mean[3 * i + 0] - cx) * s;
    mean[3 * i + 1] = (mean[3 * i + 1] - cy) * s;
    mean[3 * i + 2] = (mean[3 * i + 2] - zmid) * s;
  }

  MorphableModel model;
  model.n_vertices = n;
  model.mean_shape = std::move(mean);
  model.shape_basis = orthonormal_columns(3 * n, config.k_shape, rng);
  model.expr_basis = orthonormal_columns(3 * n, config.k_expr, rng);

  std::vector<std::uint32_t> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = static_cast<std::uint32_t>(i);
  std::shuffle(ids.begin(), ids.end(), rng);
  model.landmark_indices.assign(ids.begin(), ids.begin() + kLandmarkCount);

  model.rebuild_landmark_slice();
  model.validate();
  return model;
}

// ---- Model file I/O ---------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'M', 'M', '3', 'D'};
constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> encode_model(const MorphableModel& model) {
  ByteWriter w;
  w.bytes(kModelMagic, 4);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.n_vertices));
  w.u32(static_cast<std::uint32_t>(model.k_shape()));
  w.u32(static_cast<std::uint32_t>(model.k_expr()));
  for (Eigen::Index i = 0; i < model.mean_shape.size(); ++i) w.f64(model.mean_shape[i]);
  for (Eigen::Index c = 0; c < model.shape_basis.cols(); ++c)
    for (Eigen::Index r = 0; r < model.shape_basis.rows(); ++r) w.f64(model.shape_basis(r, c));
  for (Eigen::Index c = 0; c < model.expr_basis.cols(); ++c)
    for (Eigen::Index r = 0; r < model.expr_basis.rows(); ++r) w.f64(model.expr_basis(r, c));
  for (std::uint32_t idx : model.landmark_indices) w.u32(idx);
  return w.take();
}
}  // namespace

void save_model(const MorphableModel& model, const std::string& path) {
  write_file_atomic(path, encode_model(model));
}

void save_model(const MorphableModel& model, const std::string& path, const ModelGenConfig& config) {
  write_file_atomic(path, encode_model(model));
  nlohmann::json sidecar = {
      {"seed", config.seed},         {"n_vertices", config.n_vertices},
      {"k_shape", config.k_shape},   {"k_expr", config.k_expr},
      {"frame_edge", config.frame_edge}, {"footprint", config.footprint},
  };
  write_text_atomic(path + ".json", sidecar.dump(2) + "\n");
}

MorphableModel load_model(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file(path);
  ByteReader r(buf);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kModelMagic, 4) != 0)
    throw IntegrityError(path + ": not a model file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kModelVersion)
    throw IntegrityError(path + ": unsupported model version " + std::to_string(version));
  const auto n = static_cast<int>(r.u32());
  const auto ks = static_cast<int>(r.u32());
  const auto ke = static_cast<int>(r.u32());
  if (n <= 0 || ks < 0 || ke < 0) throw IntegrityError(path + ": invalid model header");

  MorphableModel model;
  model.n_vertices = n;
  model.mean_shape.resize(3 * n);
  for (int i = 0; i < 3 * n; ++i) model.mean_shape[i] = r.f64();
  model.shape_basis.resize(3 * n, ks);
  for (int c = 0; c < ks; ++c)
    for (int row = 0; row < 3 * n; ++row) model.shape_basis(row, c) = r.f64();
  model.expr_basis.resize(3 * n, ke);
  for (int c = 0; c < ke; ++c)
    for (int row = 0; row < 3 * n; ++row) model.expr_basis(row, c) = r.f64();
  model.landmark_indices.resize(kLandmarkCount);
  for (int j = 0; j < kLandmarkCount; ++j) model.landmark_indices[j] = r.u32();
  if (r.remaining() != 0) throw IntegrityError(path + ": trailing bytes after model payload");

  model.rebuild_landmark_slice();
  model.validate();
  return model;
}

}  // namespace morphfit
