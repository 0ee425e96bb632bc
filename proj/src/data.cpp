#include "morphfit/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "morphfit/io_util.hpp"
#include "morphfit/rng.hpp"

namespace morphfit {

Eigen::Matrix3d rotation_from_euler(double yaw, double pitch, double roll) {
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cr = std::cos(roll), sr = std::sin(roll);
  Eigen::Matrix3d ry, rx, rz;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rx << 1, 0, 0, 0, cp, -sp, 0, sp, cp;
  rz << cr, -sr, 0, sr, cr, 0, 0, 0, 1;
  return rz * rx * ry;
}

double yaw_of_rotation(const Eigen::Matrix3d& r) { return std::atan2(-r(2, 0), r(2, 2)); }

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;

// Splits [lo, hi] (degrees of |yaw|) at the 30/60 bucket boundaries; each
// non-empty piece is drawn with equal probability.
std::vector<std::pair<double, double>> yaw_buckets(double lo, double hi) {
  std::vector<std::pair<double, double>> buckets;
  const double edges[] = {0.0, 30.0, 60.0, 90.0};
  for (int b = 0; b < 3; ++b) {
    const double a = std::max(lo, edges[b]);
    const double z = std::min(hi, edges[b + 1]);
    if (a < z) buckets.emplace_back(a, z);
  }
  if (buckets.empty()) buckets.emplace_back(lo, hi);  // degenerate range, e.g. [0,0]
  return buckets;
}
}  // namespace

CoefficientVector sample_coefficients(std::mt19937_64& rng, const CoefficientSampleConfig& config,
                                      const MorphableModel& model) {
  if (config.yaw_min_deg < 0 || config.yaw_max_deg > 90 || config.yaw_min_deg > config.yaw_max_deg)
    throw ConfigError("yaw range must satisfy 0 <= min <= max <= 90");
  if (!(config.fit_min > 0) || config.fit_min > config.fit_max || config.fit_max > 0.95)
    throw ConfigError("fit range must satisfy 0 < min <= max <= 0.95");

  CoefficientVector coeff(model.k_shape(), model.k_expr());
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd alpha_s(model.k_shape()), alpha_e(model.k_expr());
  for (Eigen::Index i = 0; i < alpha_s.size(); ++i) alpha_s[i] = config.alpha_sigma * gauss(rng);
  for (Eigen::Index i = 0; i < alpha_e.size(); ++i) alpha_e[i] = config.alpha_sigma * gauss(rng);
  coeff.set_alpha_shape(alpha_s);
  coeff.set_alpha_expr(alpha_e);

  const auto buckets = yaw_buckets(config.yaw_min_deg, config.yaw_max_deg);
  std::uniform_int_distribution<std::size_t> pick(0, buckets.size() - 1);
  const auto [blo, bhi] = buckets[pick(rng)];
  double yaw_deg = blo;
  if (bhi > blo) {
    std::uniform_real_distribution<double> inside(blo, bhi);
    yaw_deg = inside(rng);
  }
  std::bernoulli_distribution flip(0.5);
  if (flip(rng)) yaw_deg = -yaw_deg;

  double pitch = 0.0, roll = 0.0;
  if (config.pitch_roll_max_deg > 0) {
    std::uniform_real_distribution<double> small(-config.pitch_roll_max_deg,
                                                 config.pitch_roll_max_deg);
    pitch = small(rng) * kDegToRad;
    roll = small(rng) * kDegToRad;
  }
  const Eigen::Matrix3d rot = rotation_from_euler(yaw_deg * kDegToRad, pitch, roll);
  coeff.set_projection(rot);

  // Fit scale and translation so the whole rotated footprint stays in frame.
  const Eigen::VectorXd shape = render_shape(model, coeff);
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (int v = 0; v < model.n_vertices; ++v) {
    const Eigen::Vector3d u = rot * Eigen::Vector3d(shape.segment<3>(3 * v));
    xmin = std::min(xmin, u.x());
    xmax = std::max(xmax, u.x());
    ymin = std::min(ymin, u.y());
    ymax = std::max(ymax, u.y());
  }
  const double m = config.frame_margin_px;
  const double span = config.frame_edge - 1 - 2 * m;
  if (span <= 0) throw ConfigError("frame too small for the requested margin");
  std::uniform_real_distribution<double> fit(config.fit_min, config.fit_max);
  const double f = fit(rng) * std::min(span / (xmax - xmin), span / (ymax - ymin));
  coeff.scale() = f;

  std::uniform_real_distribution<double> tx(m - f * xmin, config.frame_edge - 1 - m - f * xmax);
  std::uniform_real_distribution<double> ty(m - f * ymin, config.frame_edge - 1 - m - f * ymax);
  coeff.set_translation(Eigen::Vector2d(tx(rng), ty(rng)));
  return coeff;
}

ImageGrid render_proxy_image(const MorphableModel& model, const CoefficientVector& coeff,
                             int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw ConfigError("proxy image needs a positive resolution");
  const Eigen::VectorXd v2d = project(render_shape(model, coeff), coeff);
  std::vector<double> accum(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int v = 0; v < model.n_vertices; ++v) {
    const double x = v2d[2 * v], y = v2d[2 * v + 1];
    const int c0 = static_cast<int>(std::floor(x));
    const int r0 = static_cast<int>(std::floor(y));
    const double fx = x - c0, fy = y - r0;
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int rr[4] = {r0, r0, r0 + 1, r0 + 1};
    const int cc[4] = {c0, c0 + 1, c0, c0 + 1};
    for (int k = 0; k < 4; ++k) {
      if (rr[k] < 0 || rr[k] >= rows || cc[k] < 0 || cc[k] >= cols) continue;
      accum[static_cast<std::size_t>(rr[k]) * cols + cc[k]] += w[k];
    }
  }
  const double peak = *std::max_element(accum.begin(), accum.end());
  ImageGrid img(rows, cols);
  if (peak > 0) {
    for (std::size_t i = 0; i < accum.size(); ++i)
      img.values[i] = static_cast<float>(accum[i] / peak);
  }
  return img;
}

LandmarkSet corrupt_landmarks(const LandmarkSet& landmarks, std::mt19937_64& rng,
                              const LandmarkNoiseConfig& config) {
  if (landmarks.dim != 2) throw ConfigError("corrupt_landmarks expects 2D landmarks");
  LandmarkSet out = landmarks;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution is_outlier(config.outlier_prob);
  std::uniform_real_distribution<double> outlier(-config.outlier_range_px,
                                                 config.outlier_range_px);
  for (int j = 0; j < kLandmarkCount; ++j) {
    if (config.sigma_px > 0) {
      out.points(j, 0) += config.sigma_px * gauss(rng);
      out.points(j, 1) += config.sigma_px * gauss(rng);
    }
    if (config.outlier_prob > 0 && is_outlier(rng)) {
      out.points(j, 0) += outlier(rng);
      out.points(j, 1) += outlier(rng);
    }
  }
  return out;
}

namespace {
constexpr std::uint64_t kTagAnnotated = 0xA117;
constexpr std::uint64_t kTagWild = 0x317D;
constexpr std::uint64_t kTagEval = 0xE7A1;
}  // namespace

Annotated3DSample make_annotated_sample(const MorphableModel& model, const DataGenConfig& config,
                                        std::uint64_t stream_tag, std::uint64_t index) {
  std::mt19937_64 rng = make_engine(config.seed, stream_tag, index);
  Annotated3DSample s{.proxy = {}, .flm = {}, .gt_coeff = {}};
  s.gt_coeff = sample_coefficients(rng, config.coeff, model);
  s.proxy = render_proxy_image(model, s.gt_coeff, config.resolution, config.resolution);
  const LandmarkSet lm = landmarks_2d(model, s.gt_coeff);
  s.flm = rasterize_flm(lm, config.resolution, config.resolution).map;
  return s;
}

Wild2DSample make_wild_sample(const MorphableModel& model, const DataGenConfig& config,
                              std::uint64_t stream_tag, std::uint64_t index) {
  std::mt19937_64 rng = make_engine(config.seed, stream_tag, index);
  Wild2DSample s;
  const CoefficientVector coeff = sample_coefficients(rng, config.coeff, model);
  s.proxy = render_proxy_image(model, coeff, config.resolution, config.resolution);
  const LandmarkSet lm = landmarks_2d(model, coeff);
  s.noisy_landmarks = corrupt_landmarks(lm, rng, config.noise);
  s.flm = rasterize_flm(s.noisy_landmarks, config.resolution, config.resolution).map;
  return s;
}

GeneratedSplits generate_splits(const MorphableModel& model, const DataGenConfig& config) {
  if (config.n_annotated < 0 || config.n_wild < 0 || config.n_eval < 0)
    throw ConfigError("split sizes must be non-negative");
  GeneratedSplits out;
  auto init = [&](Dataset& d) {
    d.rows = d.cols = config.resolution;
    d.k_shape = model.k_shape();
    d.k_expr = model.k_expr();
  };
  init(out.annotated);
  init(out.wild);
  init(out.eval);
  for (int i = 0; i < config.n_annotated; ++i)
    out.annotated.records.emplace_back(make_annotated_sample(model, config, kTagAnnotated, i));
  for (int i = 0; i < config.n_wild; ++i)
    out.wild.records.emplace_back(make_wild_sample(model, config, kTagWild, i));
  for (int i = 0; i < config.n_eval; ++i)
    out.eval.records.emplace_back(make_annotated_sample(model, config, kTagEval, i));
  return out;
}

// ---- Dataset files ---------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[4] = {'M', 'F', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint8_t kKindAnnotated = 0;
constexpr std::uint8_t kKindWild = 1;

void write_grid(ByteWriter& w, const ImageGrid& g, const Dataset& d) {
  if (g.rows != d.rows || g.cols != d.cols)
    throw ConfigError("record resolution differs from dataset header");
  for (float v : g.values) w.f32(v);
}

void write_flm(ByteWriter& w, const FacialLandmarkMap& m, const Dataset& d) {
  if (m.rows != d.rows || m.cols != d.cols)
    throw ConfigError("record resolution differs from dataset header");
  for (std::int8_t v : m.grid) w.i8(v);
}
}  // namespace

void write_dataset(const Dataset& dataset, const std::string& path) {
  ByteWriter w;
  w.bytes(kDatasetMagic, 4);
  w.u32(kDatasetVersion);
  w.u64(dataset.records.size());
  w.u32(static_cast<std::uint32_t>(dataset.rows));
  w.u32(static_cast<std::uint32_t>(dataset.cols));
  w.u32(static_cast<std::uint32_t>(dataset.k_shape));
  w.u32(static_cast<std::uint32_t>(dataset.k_expr));

  for (const DatasetRecord& rec : dataset.records) {
    ByteWriter payload;
    std::uint8_t kind;
    if (const auto* a = std::get_if<Annotated3DSample>(&rec)) {
      kind = kKindAnnotated;
      write_grid(payload, a->proxy, dataset);
      write_flm(payload, a->flm, dataset);
      if (a->gt_coeff.k_shape() != dataset.k_shape || a->gt_coeff.k_expr() != dataset.k_expr)
        throw ConfigError("record coefficient partition differs from dataset header");
      for (Eigen::Index i = 0; i < a->gt_coeff.raw().size(); ++i) payload.f64(a->gt_coeff.raw()[i]);
    } else {
      const auto& s = std::get<Wild2DSample>(rec);
      kind = kKindWild;
      write_grid(payload, s.proxy, dataset);
      write_flm(payload, s.flm, dataset);
      if (s.noisy_landmarks.dim != 2) throw ConfigError("wild record landmarks must be 2D");
      for (int j = 0; j < kLandmarkCount; ++j) {
        payload.f64(s.noisy_landmarks.points(j, 0));
        payload.f64(s.noisy_landmarks.points(j, 1));
      }
      for (int j = 0; j < kLandmarkCount; ++j) payload.u8(s.noisy_landmarks.valid[j]);
    }
    w.u8(kind);
    w.u64(payload.data().size());
    w.bytes(payload.data().data(), payload.data().size());
    w.u32(crc32(payload.data()));
  }
  write_file_atomic(path, w.data());
}

Dataset read_dataset(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file(path);
  ByteReader r(buf);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw IntegrityError(path + ": not a dataset file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw IntegrityError(path + ": unsupported dataset version " + std::to_string(version));

  Dataset d;
  const std::uint64_t count = r.u64();
  d.rows = static_cast<int>(r.u32());
  d.cols = static_cast<int>(r.u32());
  d.k_shape = static_cast<int>(r.u32());
  d.k_expr = static_cast<int>(r.u32());
  if (d.rows <= 0 || d.cols <= 0) throw IntegrityError(path + ": invalid resolution header");
  const std::size_t cells = static_cast<std::size_t>(d.rows) * d.cols;

  d.records.reserve(count);
  for (std::uint64_t idx = 0; idx < count; ++idx) {
    const auto fail = [&](const std::string& why) {
      throw IntegrityError(path + ": record " + std::to_string(idx) + ": " + why);
    };
    std::uint8_t kind = 0;
    std::uint64_t len = 0;
    try {
      kind = r.u8();
      len = r.u64();
    } catch (const IntegrityError&) {
      fail("truncated record header");
    }
    if (len > r.remaining()) fail("truncated payload");
    std::vector<std::uint8_t> payload(len);
    r.bytes(payload.data(), len);
    std::uint32_t stored_crc = 0;
    try {
      stored_crc = r.u32();
    } catch (const IntegrityError&) {
      fail("missing checksum");
    }
    if (stored_crc != crc32(payload)) fail("checksum mismatch");

    ByteReader pr(payload);
    try {
      if (kind == kKindAnnotated) {
        Annotated3DSample s{.proxy = ImageGrid(d.rows, d.cols),
                            .flm = FacialLandmarkMap(d.rows, d.cols),
                            .gt_coeff = CoefficientVector(d.k_shape, d.k_expr)};
        for (std::size_t i = 0; i < cells; ++i) s.proxy.values[i] = pr.f32();
        for (std::size_t i = 0; i < cells; ++i) s.flm.grid[i] = pr.i8();
        for (Eigen::Index i = 0; i < s.gt_coeff.raw().size(); ++i) s.gt_coeff.raw()[i] = pr.f64();
        if (pr.remaining() != 0) fail("trailing payload bytes");
        d.records.emplace_back(std::move(s));
      } else if (kind == kKindWild) {
        Wild2DSample s;
        s.proxy = ImageGrid(d.rows, d.cols);
        s.flm = FacialLandmarkMap(d.rows, d.cols);
        s.noisy_landmarks = LandmarkSet(2);
        for (std::size_t i = 0; i < cells; ++i) s.proxy.values[i] = pr.f32();
        for (std::size_t i = 0; i < cells; ++i) s.flm.grid[i] = pr.i8();
        for (int j = 0; j < kLandmarkCount; ++j) {
          s.noisy_landmarks.points(j, 0) = pr.f64();
          s.noisy_landmarks.points(j, 1) = pr.f64();
        }
        for (int j = 0; j < kLandmarkCount; ++j) s.noisy_landmarks.valid[j] = pr.u8();
        if (pr.remaining() != 0) fail("trailing payload bytes");
        d.records.emplace_back(std::move(s));
      } else {
        fail("unknown record kind " + std::to_string(kind));
      }
    } catch (const IntegrityError& e) {
      fail(e.what());
    }
  }
  if (r.remaining() != 0) throw IntegrityError(path + ": trailing bytes after last record");
  return d;
}

}  // namespace morphfit
