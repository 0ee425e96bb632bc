#ifndef MORPHFIT_MODEL_HPP_
#define MORPHFIT_MODEL_HPP_

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "morphfit/common.hpp"

namespace morphfit {

/// The 62-style camera/shape parameter vector, laid out as
/// [scale f | translation t (2) | projection matrix P (9, row-major) |
///  shape coefficients (k_shape) | expression coefficients (k_expr)].
/// With the default k_shape=40, k_expr=10 the total length is 62.
class CoefficientVector {
 public:
  CoefficientVector() : ks_(0), ke_(0) {}
  CoefficientVector(int k_shape, int k_expr)
      : raw_(Eigen::VectorXd::Zero(size_for(k_shape, k_expr))), ks_(k_shape), ke_(k_expr) {}
  CoefficientVector(Eigen::VectorXd raw, int k_shape, int k_expr);

  static int size_for(int k_shape, int k_expr) { return 1 + 2 + 9 + k_shape + k_expr; }

  int size() const { return static_cast<int>(raw_.size()); }
  int k_shape() const { return ks_; }
  int k_expr() const { return ke_; }

  const Eigen::VectorXd& raw() const { return raw_; }
  Eigen::VectorXd& raw() { return raw_; }

  double scale() const { return raw_[0]; }
  double& scale() { return raw_[0]; }
  Eigen::Vector2d translation() const { return raw_.segment<2>(1); }
  void set_translation(const Eigen::Vector2d& t) { raw_.segment<2>(1) = t; }
  /// Projection matrix, stored row-major in raw()[3..11].
  Eigen::Matrix3d projection() const;
  void set_projection(const Eigen::Matrix3d& p);
  Eigen::VectorXd alpha_shape() const { return raw_.segment(12, ks_); }
  Eigen::VectorXd alpha_expr() const { return raw_.segment(12 + ks_, ke_); }
  void set_alpha_shape(const Eigen::VectorXd& a) { raw_.segment(12, ks_) = a; }
  void set_alpha_expr(const Eigen::VectorXd& a) { raw_.segment(12 + ks_, ke_) = a; }

  bool all_finite() const { return raw_.allFinite(); }

  // Offsets of the partition blocks within raw().
  static constexpr int kScaleOffset = 0;
  static constexpr int kTranslationOffset = 1;
  static constexpr int kProjectionOffset = 3;
  static constexpr int kAlphaOffset = 12;

 private:
  Eigen::VectorXd raw_;
  int ks_;
  int ke_;
};

/// Linear face shape generator: mean shape plus orthonormal shape and
/// expression bases. Vertex coordinates are interleaved (x,y,z per vertex).
struct MorphableModel {
  Eigen::VectorXd mean_shape;              // 3N
  Eigen::MatrixXd shape_basis;             // 3N x k_shape, orthonormal columns
  Eigen::MatrixXd expr_basis;              // 3N x k_expr, orthonormal columns
  std::vector<std::uint32_t> landmark_indices;  // 68 distinct vertex ids
  int n_vertices = 0;

  int k_shape() const { return static_cast<int>(shape_basis.cols()); }
  int k_expr() const { return static_cast<int>(expr_basis.cols()); }

  // Rows of mean/basis restricted to the 68 landmark vertices (3*68 rows),
  // built once at load; used by the landmark-only fast paths.
  Eigen::VectorXd landmark_mean;   // 204
  Eigen::MatrixXd landmark_shape;  // 204 x k_shape
  Eigen::MatrixXd landmark_expr;   // 204 x k_expr

  void rebuild_landmark_slice();
  /// Throws ConfigError if any structural invariant is violated.
  void validate() const;
};

/// Ordered 68-point landmark coordinates, 2D (image plane) or 3D.
struct LandmarkSet {
  Eigen::MatrixXd points;  // 68 x dim
  int dim = 2;
  std::vector<std::uint8_t> valid;  // per-point validity, defaults to all true

  LandmarkSet() : points(kLandmarkCount, 2), valid(kLandmarkCount, 1) { points.setZero(); }
  explicit LandmarkSet(int d) : points(Eigen::MatrixXd::Zero(kLandmarkCount, d)), dim(d),
                                valid(kLandmarkCount, 1) {}

  bool all_finite() const { return points.allFinite(); }
};

/// Binary landmark map: +1 at landmark cells, -1 elsewhere.
struct FacialLandmarkMap {
  int rows = 0;
  int cols = 0;
  std::vector<std::int8_t> grid;  // rows*cols, row-major, values in {+1,-1}

  FacialLandmarkMap() = default;
  FacialLandmarkMap(int h, int w) : rows(h), cols(w), grid(static_cast<std::size_t>(h) * w, -1) {}

  std::int8_t at(int r, int c) const { return grid[static_cast<std::size_t>(r) * cols + c]; }
  std::int8_t& at(int r, int c) { return grid[static_cast<std::size_t>(r) * cols + c]; }
  int positive_count() const;

  bool operator==(const FacialLandmarkMap& o) const = default;
};

struct RasterizeResult {
  FacialLandmarkMap map;
  int skipped = 0;  // landmarks whose rounded cell fell outside the grid
};

// ---- Core rendering / projection ----------------------------------------

/// S = mean + A_s * alpha_s + A_exp * alpha_exp. Output length 3N.
Eigen::VectorXd render_shape(const MorphableModel& model, const CoefficientVector& coeff);

/// Scaled orthographic projection per vertex: out = f * Pr * P * v + t,
/// with Pr = [[1,0,0],[0,1,0]]. Output length 2N.
Eigen::VectorXd project(const Eigen::VectorXd& shape, const CoefficientVector& coeff);

/// Camera-space 3D vertices: u = f * P * v + (t_x, t_y, 0). Dropping z gives
/// exactly project(). Output length 3N.
Eigen::VectorXd pose_transform(const Eigen::VectorXd& shape, const CoefficientVector& coeff);

/// Gathers the 68 landmark coordinates from a full 3N shape or 2N projected
/// vertex vector, preserving landmark order.
LandmarkSet sparse_landmarks(const MorphableModel& model, const Eigen::VectorXd& shape_or_vertices);

/// Rasterizes 2D landmarks into a binary map. Cells use (row, col) =
/// (round(y), round(x)) with half-up rounding; out-of-bounds points are
/// skipped and counted.
RasterizeResult rasterize_flm(const LandmarkSet& landmarks, int rows, int cols);

// ---- Landmark-only fast paths and reverse-mode helpers -------------------

/// H_2d(alpha): the 68 projected 2D landmarks of the rendered shape.
LandmarkSet landmarks_2d(const MorphableModel& model, const CoefficientVector& coeff);

/// H_3d(alpha): the 68 camera-space 3D landmarks (pose applied, depth kept).
LandmarkSet landmarks_3d(const MorphableModel& model, const CoefficientVector& coeff);

/// Accumulates d(loss)/d(coeff) given d(loss)/d(2D landmark coords) (68x2).
void landmarks_2d_vjp(const MorphableModel& model, const CoefficientVector& coeff,
                      const Eigen::MatrixXd& grad_points, Eigen::VectorXd& grad_coeff);

/// Accumulates d(loss)/d(coeff) given d(loss)/d(3D landmark coords) (68x3).
void landmarks_3d_vjp(const MorphableModel& model, const CoefficientVector& coeff,
                      const Eigen::MatrixXd& grad_points, Eigen::VectorXd& grad_coeff);

/// Accumulates d(loss)/d(coeff) given d(loss)/d(project(render(coeff))) (2N).
void dense_projection_vjp(const MorphableModel& model, const CoefficientVector& coeff,
                          const Eigen::VectorXd& grad_vertices, Eigen::VectorXd& grad_coeff);

// ---- Synthetic model generation ------------------------------------------

struct ModelGenConfig {
  std::uint64_t seed = 7;
  int n_vertices = 500;
  int k_shape = 40;
  int k_expr = 10;
  int frame_edge = 120;      // the projected footprint target, pixels
  double footprint = 100.0;  // x/y extent of the mean shape within the frame
};

/// Builds a seeded synthetic model: a smooth random closed surface as the
/// mean shape (scaled so its x/y extent fits the frame footprint), orthonormal
/// random bases, and 68 seeded distinct landmark indices.
MorphableModel synthesize_model(const ModelGenConfig& config);

// ---- Model file I/O -------------------------------------------------------

/// Writes the documented little-endian "MM3D" binary plus a JSON sidecar
/// (path + ".json") describing the generation parameters.
void save_model(const MorphableModel& model, const std::string& path, const ModelGenConfig& config);
void save_model(const MorphableModel& model, const std::string& path);

MorphableModel load_model(const std::string& path);

}  // namespace morphfit

#endif  // MORPHFIT_MODEL_HPP_
