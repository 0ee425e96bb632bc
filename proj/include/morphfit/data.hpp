#ifndef MORPHFIT_DATA_HPP_
#define MORPHFIT_DATA_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "morphfit/model.hpp"

namespace morphfit {

/// Grayscale grid with values in [0,1]; stands in for the image channel.
struct ImageGrid {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;  // row-major

  ImageGrid() = default;
  ImageGrid(int h, int w) : rows(h), cols(w), values(static_cast<std::size_t>(h) * w, 0.0f) {}

  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }

  bool operator==(const ImageGrid&) const = default;
};

/// A coefficient-annotated sample (the 3D-supervised split). The landmark map
/// is rasterized from the ground-truth projected landmarks.
struct Annotated3DSample {
  ImageGrid proxy;
  FacialLandmarkMap flm;
  CoefficientVector gt_coeff;
};

/// A landmark-only sample (the in-the-wild split). The landmark map is
/// rasterized from the noisy detector-style landmarks; no coefficients.
struct Wild2DSample {
  ImageGrid proxy;
  FacialLandmarkMap flm;
  LandmarkSet noisy_landmarks;
};

using DatasetRecord = std::variant<Annotated3DSample, Wild2DSample>;

struct Dataset {
  int rows = 0;
  int cols = 0;
  int k_shape = 0;
  int k_expr = 0;
  std::vector<DatasetRecord> records;

  std::size_t size() const { return records.size(); }
};

// ---- Sampling configuration ---------------------------------------------------

struct CoefficientSampleConfig {
  double alpha_sigma = 0.5;
  double yaw_min_deg = 0.0;
  double yaw_max_deg = 90.0;       // |yaw| drawn uniformly within an equally likely
                                   // 30-degree bucket of [yaw_min, yaw_max]
  double pitch_roll_max_deg = 10.0;
  double fit_min = 0.60;           // fraction of the largest in-frame scale
  double fit_max = 0.85;
  double frame_margin_px = 2.0;
  int frame_edge = 120;
};

struct LandmarkNoiseConfig {
  double sigma_px = 1.5;
  double outlier_prob = 0.05;
  double outlier_range_px = 10.0;
};

struct DataGenConfig {
  std::uint64_t seed = 11;
  int n_annotated = 2000;
  int n_wild = 8000;
  int n_eval = 500;
  int resolution = 120;
  CoefficientSampleConfig coeff;
  LandmarkNoiseConfig noise;
};

// ---- Rotation helpers -----------------------------------------------------------

/// R = Rz(roll) * Rx(pitch) * Ry(yaw), angles in radians.
Eigen::Matrix3d rotation_from_euler(double yaw, double pitch, double roll);

/// Yaw (radians) recovered from a rotation built by rotation_from_euler;
/// stable for |pitch| < 90 degrees.
double yaw_of_rotation(const Eigen::Matrix3d& r);

// ---- Operations ------------------------------------------------------------------

/// Draws ground-truth coefficients: Gaussian shape/expression blocks, a
/// rotation with bucket-uniform |yaw| and small pitch/roll, and scale f and
/// translation t fitted so that every projected vertex lands inside the frame.
CoefficientVector sample_coefficients(std::mt19937_64& rng, const CoefficientSampleConfig& config,
                                      const MorphableModel& model);

/// Splats all projected vertices with bilinear weights and normalizes the
/// peak to 1. Vertices falling entirely outside the grid contribute nothing.
ImageGrid render_proxy_image(const MorphableModel& model, const CoefficientVector& coeff,
                             int rows, int cols);

/// Detector-noise simulation: i.i.d. Gaussian jitter per coordinate plus,
/// with outlier_prob per point, an additive uniform offset within the range.
LandmarkSet corrupt_landmarks(const LandmarkSet& landmarks, std::mt19937_64& rng,
                              const LandmarkNoiseConfig& config);

Annotated3DSample make_annotated_sample(const MorphableModel& model, const DataGenConfig& config,
                                        std::uint64_t stream_tag, std::uint64_t index);
Wild2DSample make_wild_sample(const MorphableModel& model, const DataGenConfig& config,
                              std::uint64_t stream_tag, std::uint64_t index);

/// The three generated splits (annotated + wild for training, annotated eval).
struct GeneratedSplits {
  Dataset annotated;
  Dataset wild;
  Dataset eval;
};
GeneratedSplits generate_splits(const MorphableModel& model, const DataGenConfig& config);

// ---- Dataset files -----------------------------------------------------------------

/// Length-prefixed record stream with a per-record CRC32; bit-exact round-trip.
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace morphfit

#endif  // MORPHFIT_DATA_HPP_
