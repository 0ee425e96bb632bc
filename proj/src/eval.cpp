#include "morphfit/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "morphfit/io_util.hpp"
#include "morphfit/rng.hpp"

namespace morphfit {

double nme(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt, double bbox_w, double bbox_h) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ConfigError("nme: point sets must have equal shape");
  if (pred.rows() == 0) throw ConfigError("nme: empty point sets");
  if (!(bbox_w > 0.0) || !(bbox_h > 0.0)) throw ConfigError("nme: bounding box must have area");
  const double mean_dist = (pred - gt).rowwise().norm().mean();
  return 100.0 * mean_dist / std::sqrt(bbox_w * bbox_h);
}

std::pair<double, double> landmark_bbox(const LandmarkSet& landmarks) {
  if (landmarks.dim != 2) throw ConfigError("landmark_bbox expects 2D landmarks");
  const auto& p = landmarks.points;
  return {p.col(0).maxCoeff() - p.col(0).minCoeff(), p.col(1).maxCoeff() - p.col(1).minCoeff()};
}

EdcCurve edc(std::vector<double> values, int discard_worst) {
  if (discard_worst < 0) throw ConfigError("edc: discard count must be >= 0");
  if (static_cast<int>(values.size()) <= discard_worst)
    throw ConfigError("edc: need more than " + std::to_string(discard_worst) + " records, got " +
                      std::to_string(values.size()));
  std::sort(values.begin(), values.end());
  EdcCurve curve;
  curve.discarded = discard_worst;
  curve.values.assign(values.begin(), values.end() - discard_worst);
  curve.mean = 0.0;
  for (double v : curve.values) curve.mean += v;
  curve.mean /= static_cast<double>(curve.values.size());
  return curve;
}

void write_edc_csv(const EdcCurve& curve, const std::string& path) {
  std::string out = "nme_percent,image_count\n";
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    out += format_double(curve.values[i]);
    out += ',';
    out += std::to_string(i + 1);
    out += '\n';
  }
  out += "# discarded=" + std::to_string(curve.discarded) +
         " mean=" + format_double(curve.mean) + "\n";
  write_text_atomic(path, out);
}

// ---- ICP ---------------------------------------------------------------------

namespace {

void check_cloud(const Eigen::Matrix3Xd& cloud, const char* name) {
  if (cloud.cols() == 0) throw ConfigError(std::string("icp: empty ") + name + " cloud");
  const Eigen::Vector3d centroid = cloud.rowwise().mean();
  const double spread = (cloud.colwise() - centroid).norm();
  if (!(spread > 0.0))
    throw NumericError(std::string("icp: degenerate ") + name + " cloud (all points coincide)");
}

// Nearest gt index for each transformed pred point; ties go to the lower index.
void nearest_neighbors(const Eigen::Matrix3Xd& moved, const Eigen::Matrix3Xd& gt,
                       std::vector<int>& out) {
  out.resize(moved.cols());
  for (Eigen::Index i = 0; i < moved.cols(); ++i) {
    const Eigen::Vector3d p = moved.col(i);
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (Eigen::Index j = 0; j < gt.cols(); ++j) {
      const double d = (gt.col(j) - p).squaredNorm();
      if (d < best) {
        best = d;
        best_j = static_cast<int>(j);
      }
    }
    out[static_cast<std::size_t>(i)] = best_j;
  }
}

// The 24 rotation matrices of the octahedral group (entries in {0,+1,-1}).
std::vector<Eigen::Matrix3d> octahedral_rotations() {
  std::vector<Eigen::Matrix3d> rots;
  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& perm : perms) {
    for (int signs = 0; signs < 8; ++signs) {
      Eigen::Matrix3d r = Eigen::Matrix3d::Zero();
      for (int row = 0; row < 3; ++row)
        r(row, perm[row]) = (signs >> row) & 1 ? -1.0 : 1.0;
      if (r.determinant() > 0.5) rots.push_back(r);
    }
  }
  return rots;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector4d q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  q.normalize();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

struct SingleIcpRun {
  RigidTransform transform;
  std::vector<int> correspondence;
  double rms = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::vector<double> rms_history;
};

SingleIcpRun run_icp_from(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt,
                          const RigidTransform& init, const IcpOptions& options) {
  SingleIcpRun run;
  run.transform = init;
  Eigen::Matrix3Xd corr_pts(3, pred.cols());
  double prev_rms = std::numeric_limits<double>::infinity();
  for (int it = 0; it < options.max_iters; ++it) {
    Eigen::Matrix3Xd moved =
        (run.transform.scale * (run.transform.rotation * pred)).colwise() +
        run.transform.translation;
    nearest_neighbors(moved, gt, run.correspondence);
    for (Eigen::Index i = 0; i < pred.cols(); ++i)
      corr_pts.col(i) = gt.col(run.correspondence[static_cast<std::size_t>(i)]);
    run.transform = fit_similarity(pred, corr_pts, options.with_scale);
    moved = (run.transform.scale * (run.transform.rotation * pred)).colwise() +
            run.transform.translation;
    run.rms = std::sqrt((moved - corr_pts).colwise().squaredNorm().mean());
    run.iterations = it + 1;
    run.rms_history.push_back(run.rms);
    if (run.rms < options.tol || prev_rms - run.rms < options.tol) break;
    prev_rms = run.rms;
  }
  return run;
}

}  // namespace

RigidTransform fit_similarity(const Eigen::Matrix3Xd& from, const Eigen::Matrix3Xd& to,
                              bool with_scale) {
  if (from.cols() != to.cols() || from.cols() == 0)
    throw ConfigError("fit_similarity: corresponding sets must be equal and non-empty");
  const double n = static_cast<double>(from.cols());
  const Eigen::Vector3d mu_from = from.rowwise().mean();
  const Eigen::Vector3d mu_to = to.rowwise().mean();
  const Eigen::Matrix3Xd x = from.colwise() - mu_from;
  const Eigen::Matrix3Xd y = to.colwise() - mu_to;
  const double var_from = x.colwise().squaredNorm().sum() / n;
  if (!(var_from > 0.0))
    throw NumericError("fit_similarity: degenerate source cloud (all points coincide)");

  const Eigen::Matrix3d sigma = (y * x.transpose()) / n;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s[2] = -1.0;

  RigidTransform t;
  t.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  t.scale = with_scale ? svd.singularValues().dot(s) / var_from : 1.0;
  t.translation = mu_to - t.scale * (t.rotation * mu_from);
  return t;
}

IcpResult icp_align(const Eigen::Matrix3Xd& pred, const Eigen::Matrix3Xd& gt,
                    const IcpOptions& options) {
  check_cloud(pred, "pred");
  check_cloud(gt, "gt");
  if (options.max_iters < 1) throw ConfigError("icp: max_iters must be >= 1");
  if (options.restarts < 1) throw ConfigError("icp: restarts must be >= 1");

  // Centroid/scale pre-alignment shared by every restart rotation.
  const Eigen::Vector3d mu_pred = pred.rowwise().mean();
  const Eigen::Vector3d mu_gt = gt.rowwise().mean();
  const double rms_pred = std::sqrt((pred.colwise() - mu_pred).colwise().squaredNorm().mean());
  const double rms_gt = std::sqrt((gt.colwise() - mu_gt).colwise().squaredNorm().mean());
  const double s0 = options.with_scale ? rms_gt / rms_pred : 1.0;

  // Initial rotations: identity first, then the four proper rotations that
  // map the principal axes of pred onto those of gt (exact for clouds that
  // are rigid copies), then the octahedral group, then seeded random draws.
  std::vector<Eigen::Matrix3d> inits;
  inits.push_back(Eigen::Matrix3d::Identity());
  if (options.restarts > 1) {
    const Eigen::Matrix3Xd xc = pred.colwise() - mu_pred;
    const Eigen::Matrix3Xd yc = gt.colwise() - mu_gt;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> ep(xc * xc.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eg(yc * yc.transpose());
    Eigen::Matrix3d up = ep.eigenvectors();
    Eigen::Matrix3d ug = eg.eigenvectors();
    if (up.determinant() < 0) up.col(0) = -up.col(0);
    if (ug.determinant() < 0) ug.col(0) = -ug.col(0);
    const double flips[4][3] = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
    for (const auto& f : flips) {
      if (static_cast<int>(inits.size()) >= options.restarts) break;
      const Eigen::Vector3d signs(f[0], f[1], f[2]);
      inits.push_back(ug * signs.asDiagonal() * up.transpose());
    }
    for (const Eigen::Matrix3d& r : octahedral_rotations()) {
      if ((r - Eigen::Matrix3d::Identity()).norm() < 1e-12) continue;
      if (static_cast<int>(inits.size()) >= options.restarts) break;
      inits.push_back(r);
    }
    std::mt19937_64 rng(options.restart_seed);
    while (static_cast<int>(inits.size()) < options.restarts) inits.push_back(random_rotation(rng));
  }

  SingleIcpRun best;
  for (const Eigen::Matrix3d& r0 : inits) {
    RigidTransform init;
    init.rotation = r0;
    init.scale = s0;
    init.translation = mu_gt - s0 * (r0 * mu_pred);
    SingleIcpRun run = run_icp_from(pred, gt, init, options);
    if (run.rms < best.rms) best = std::move(run);
  }

  IcpResult result;
  result.transform = best.transform;
  result.correspondence = std::move(best.correspondence);
  result.rms = best.rms;
  result.iterations = best.iterations;
  result.rms_history = std::move(best.rms_history);
  return result;
}

double reconstruction_nme(const CoefficientVector& pred, const CoefficientVector& gt,
                          const MorphableModel& model, double bbox_w, double bbox_h,
                          const IcpOptions& options) {
  const Eigen::VectorXd pred_posed = pose_transform(render_shape(model, pred), pred);
  const Eigen::VectorXd gt_posed = pose_transform(render_shape(model, gt), gt);
  const int n = model.n_vertices;
  const Eigen::Matrix3Xd pred_cloud = Eigen::Map<const Eigen::Matrix3Xd>(pred_posed.data(), 3, n);
  const Eigen::Matrix3Xd gt_cloud = Eigen::Map<const Eigen::Matrix3Xd>(gt_posed.data(), 3, n);

  const IcpResult icp = icp_align(pred_cloud, gt_cloud, options);
  Eigen::MatrixXd moved(n, 3), target(n, 3);
  for (int i = 0; i < n; ++i) {
    moved.row(i) = icp.transform.apply(pred_cloud.col(i)).transpose();
    target.row(i) = gt_cloud.col(icp.correspondence[static_cast<std::size_t>(i)]).transpose();
  }
  return nme(moved, target, bbox_w, bbox_h);
}

// ---- Checkpoint evaluation --------------------------------------------------------

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::nme_2d_sparse: return "nme_2d_sparse";
    case Metric::nme_3d_sparse: return "nme_3d_sparse";
    case Metric::nme_2d_dense: return "nme_2d_dense";
    case Metric::nme_3d_dense: return "nme_3d_dense";
    case Metric::nme_reconstruction: return "nme_reconstruction";
  }
  return "?";
}

namespace {
int yaw_bucket_of(const CoefficientVector& gt) {
  const double yaw_deg = std::abs(yaw_of_rotation(gt.projection())) * 180.0 / std::numbers::pi;
  return std::min(2, static_cast<int>(yaw_deg / 30.0));
}

Eigen::MatrixXd as_points(const Eigen::VectorXd& flat, int dim) {
  const int n = static_cast<int>(flat.size()) / dim;
  Eigen::MatrixXd pts(n, dim);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) pts(i, d) = flat[dim * i + d];
  return pts;
}
}  // namespace

EvalReport evaluate_predictions(const CoeffPredictor& predictor, const MorphableModel& model,
                                const Dataset& eval_set, const EvalOptions& options) {
  EvalReport report;
  report.options = options;
  report.records.reserve(eval_set.records.size());
  for (std::size_t idx = 0; idx < eval_set.records.size(); ++idx) {
    const auto* sample = std::get_if<Annotated3DSample>(&eval_set.records[idx]);
    if (sample == nullptr)
      throw ConfigError("evaluation requires annotated samples (record " + std::to_string(idx) +
                        " is wild)");
    const CoefficientVector pred = predictor(*sample, idx);
    const CoefficientVector& gt = sample->gt_coeff;

    const LandmarkSet gt_lm2d = landmarks_2d(model, gt);
    const auto [bw, bh] = landmark_bbox(gt_lm2d);

    EvalRecord rec;
    rec.sample_id = static_cast<std::int64_t>(idx);
    rec.yaw_bucket = yaw_bucket_of(gt);
    rec.nme[static_cast<int>(Metric::nme_2d_sparse)] =
        nme(landmarks_2d(model, pred).points, gt_lm2d.points, bw, bh);
    rec.nme[static_cast<int>(Metric::nme_3d_sparse)] =
        nme(landmarks_3d(model, pred).points, landmarks_3d(model, gt).points, bw, bh);

    const Eigen::VectorXd pred_shape = render_shape(model, pred);
    const Eigen::VectorXd gt_shape = render_shape(model, gt);
    rec.nme[static_cast<int>(Metric::nme_2d_dense)] =
        nme(as_points(project(pred_shape, pred), 2), as_points(project(gt_shape, gt), 2), bw, bh);
    rec.nme[static_cast<int>(Metric::nme_3d_dense)] =
        nme(as_points(pose_transform(pred_shape, pred), 3),
            as_points(pose_transform(gt_shape, gt), 3), bw, bh);
    rec.nme[static_cast<int>(Metric::nme_reconstruction)] =
        options.with_reconstruction ? reconstruction_nme(pred, gt, model, bw, bh, options.icp)
                                    : std::numeric_limits<double>::quiet_NaN();
    report.records.push_back(rec);
  }
  return report;
}

EvalReport evaluate_checkpoint(const NetworkStack& stack, const MorphableModel& model,
                               const Dataset& eval_set, const EvalOptions& options) {
  const StackConfig& cfg = stack.config;
  CoeffPredictor predictor = [&](const Annotated3DSample& sample, std::size_t) {
    const Eigen::VectorXd input =
        encode_network_input(sample.proxy.values, sample.flm.grid, sample.proxy.rows,
                             sample.proxy.cols, cfg.input_edge, cfg.use_flm_input);
    ForwardTape tape;
    return forward_regressor(stack, input, tape);
  };
  return evaluate_predictions(predictor, model, eval_set, options);
}

MetricSummary summarize_metric(const EvalReport& report, Metric metric) {
  MetricSummary s;
  std::array<double, 3> bucket_sum{};
  double total = 0.0;
  std::vector<double> values;
  values.reserve(report.records.size());
  for (const EvalRecord& rec : report.records) {
    const double v = rec.metric(metric);
    values.push_back(v);
    total += v;
    bucket_sum[rec.yaw_bucket] += v;
    ++s.bucket_count[rec.yaw_bucket];
  }
  for (int b = 0; b < 3; ++b)
    if (s.bucket_count[b] > 0) s.bucket_mean[b] = bucket_sum[b] / s.bucket_count[b];
  s.overall_mean = values.empty() ? 0.0 : total / static_cast<double>(values.size());
  if (static_cast<int>(values.size()) > report.options.discard_worst)
    s.discarded_mean = edc(values, report.options.discard_worst).mean;
  return s;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::string out = "sample_id,yaw_bucket";
  for (int m = 0; m < kMetricCount; ++m) {
    out += ',';
    out += metric_name(static_cast<Metric>(m));
  }
  out += '\n';
  for (const EvalRecord& rec : report.records) {
    out += std::to_string(rec.sample_id);
    out += ',';
    out += std::to_string(rec.yaw_bucket);
    for (int m = 0; m < kMetricCount; ++m) {
      out += ',';
      out += format_double(rec.nme[m]);
    }
    out += '\n';
  }
  static const char* kBucketNames[3] = {"yaw_0_30", "yaw_30_60", "yaw_60_90"};
  for (int m = 0; m < kMetricCount; ++m) {
    const Metric metric = static_cast<Metric>(m);
    const MetricSummary s = summarize_metric(report, metric);
    out += std::string("# summary,") + metric_name(metric);
    for (int b = 0; b < 3; ++b) {
      out += ',';
      out += kBucketNames[b];
      out += '=';
      out += s.bucket_mean[b] ? format_double(*s.bucket_mean[b]) : "absent";
    }
    out += ",mean=" + format_double(s.overall_mean);
    out += ",discarded_mean=";
    out += s.discarded_mean ? format_double(*s.discarded_mean) : "absent";
    out += '\n';
  }
  write_text_atomic(path, out);
}

EvalReport read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot open report: " + path);
  EvalReport report;
  std::string line;
  if (!std::getline(in, line)) throw IntegrityError(path + ": empty report");
  std::string expected_header = "sample_id,yaw_bucket";
  for (int m = 0; m < kMetricCount; ++m)
    expected_header += std::string(",") + metric_name(static_cast<Metric>(m));
  if (line != expected_header) throw IntegrityError(path + ": unexpected report header");
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string field;
    EvalRecord rec;
    auto next = [&](const char* what) {
      if (!std::getline(ss, field, ',')) throw IntegrityError(path + ": missing " + what);
      return field;
    };
    rec.sample_id = std::stoll(next("sample_id"));
    rec.yaw_bucket = std::stoi(next("yaw_bucket"));
    if (rec.yaw_bucket < 0 || rec.yaw_bucket > 2)
      throw IntegrityError(path + ": yaw bucket out of range");
    for (int m = 0; m < kMetricCount; ++m) rec.nme[m] = std::stod(next("nme"));
    report.records.push_back(rec);
  }
  return report;
}

}  // namespace morphfit
