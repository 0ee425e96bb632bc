#ifndef MORPHFIT_EVAL_HPP_
#define MORPHFIT_EVAL_HPP_

#include <Eigen/Core>
#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "morphfit/data.hpp"
#include "morphfit/model.hpp"
#include "morphfit/net.hpp"

namespace morphfit {

// ---- NME ------------------------------------------------------------------------

/// Mean per-point Euclidean distance between two equally sized point sets
/// (rows are points), divided by sqrt(bbox_w * bbox_h), as a percentage.
double nme(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt, double bbox_w, double bbox_h);

/// Tight bounding box (width, height) of a 2D landmark set.
std::pair<double, double> landmark_bbox(const LandmarkSet& landmarks);

// ---- EDC ------------------------------------------------------------------------

struct EdcCurve {
  std::vector<double> values;  // ascending, after discarding the worst
  double mean = 0.0;           // mean of the kept values
  int discarded = 0;
};

/// Drops the discard_worst largest values and returns the ascending remainder
/// (pair each value with its 1-based cumulative count to plot).
EdcCurve edc(std::vector<double> values, int discard_worst = 20);

void write_edc_csv(const EdcCurve& curve, const std::string& path);

// ---- ICP ------------------------------------------------------------------------

struct RigidTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (rotation * p) + translation; }
};

struct IcpOptions {
  int max_iters = 50;
  double tol = 1e-10;       // stop when the rms improvement falls below this
  bool with_scale = true;   // include a uniform scale in the fit
  int restarts = 1;         // initial rotations tried (identity, then the
                            // octahedral group, then seeded random rotations)
  std::uint64_t restart_seed = 0x1C9;
};

struct IcpResult {
  RigidTransform transform;
  std::vector<int> correspondence;  // index into gt per pred point
  double rms = 0.0;
  int iterations = 0;
  std::vector<double> rms_history;  // rms after each alignment, non-increasing
};

/// Alternates brute-force nearest-neighbor correspondence (pred -> gt, ties
/// to the lower index) with the closed-form least-squares similarity fit.
/// Multiple restarts keep the best final rms. Clouds are 3 x n matrices.
IcpResult icp_align(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt,
                    const IcpOptions& options = {});

/// Closed-form least-squares similarity alignment of corresponding points
/// (rotation + translation + optional uniform scale).
RigidTransform fit_similarity(const Eigen::Matrix3Xd& from, const Eigen::Matrix3Xd& to,
                              bool with_scale);

/// Renders and poses both coefficient vectors, ICP-aligns the prediction to
/// the ground truth, and returns the NME over the final correspondences.
double reconstruction_nme(const CoefficientVector& pred, const CoefficientVector& gt,
                          const MorphableModel& model, double bbox_w, double bbox_h,
                          const IcpOptions& options = {});

// ---- Checkpoint evaluation ---------------------------------------------------------

enum class Metric {
  nme_2d_sparse = 0,
  nme_3d_sparse = 1,
  nme_2d_dense = 2,
  nme_3d_dense = 3,
  nme_reconstruction = 4,
};
inline constexpr int kMetricCount = 5;
const char* metric_name(Metric m);

struct EvalRecord {
  std::int64_t sample_id = 0;
  int yaw_bucket = 0;  // 0: [0,30), 1: [30,60), 2: [60,90]
  std::array<double, kMetricCount> nme{};  // indexed by Metric

  double metric(Metric m) const { return nme[static_cast<int>(m)]; }
};

struct EvalOptions {
  bool with_reconstruction = true;
  int discard_worst = 20;
  IcpOptions icp{.max_iters = 40, .tol = 1e-12, .with_scale = true, .restarts = 12};
};

struct EvalReport {
  std::vector<EvalRecord> records;
  EvalOptions options;
};

struct MetricSummary {
  std::array<std::optional<double>, 3> bucket_mean;  // absent when a bucket is empty
  std::array<int, 3> bucket_count{};
  double overall_mean = 0.0;                  // over all images
  std::optional<double> discarded_mean;       // after worst-`discard` removal;
                                              // absent when too few records
};
MetricSummary summarize_metric(const EvalReport& report, Metric metric);

/// Predicted coefficients for eval sample `index`; lets tests inject oracles.
using CoeffPredictor =
    std::function<CoefficientVector(const Annotated3DSample& sample, std::size_t index)>;

EvalReport evaluate_predictions(const CoeffPredictor& predictor, const MorphableModel& model,
                                const Dataset& eval_set, const EvalOptions& options);

/// Runs the stack's regressor over an eval split of annotated samples.
EvalReport evaluate_checkpoint(const NetworkStack& stack, const MorphableModel& model,
                               const Dataset& eval_set, const EvalOptions& options = {});

/// One row per record, then a commented summary block.
void write_report_csv(const EvalReport& report, const std::string& path);
EvalReport read_report_csv(const std::string& path);

}  // namespace morphfit

#endif  // MORPHFIT_EVAL_HPP_
