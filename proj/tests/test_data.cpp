#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "morphfit/data.hpp"
#include "morphfit/io_util.hpp"
#include "test_util.hpp"

using namespace morphfit;

TEST_CASE("rotation helpers: euler construction and yaw recovery") {
  std::mt19937_64 rng(131);
  std::uniform_real_distribution<double> yaw_u(-1.5, 1.5), small(-0.17, 0.17);
  for (int t = 0; t < 50; ++t) {
    const double yaw = yaw_u(rng), pitch = small(rng), roll = small(rng);
    const Eigen::Matrix3d r = rotation_from_euler(yaw, pitch, roll);
    CHECK((r * r.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(yaw_of_rotation(r) == doctest::Approx(yaw).epsilon(1e-10));
  }
}

TEST_CASE("sample_coefficients: degenerate pose range gives the identity rotation") {
  const MorphableModel m = test::small_valid_model(137);
  CoefficientSampleConfig c;
  c.yaw_min_deg = 0.0;
  c.yaw_max_deg = 0.0;
  c.pitch_roll_max_deg = 0.0;
  std::mt19937_64 rng(139);
  const CoefficientVector coeff = sample_coefficients(rng, c, m);
  CHECK((coeff.projection() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
}

TEST_CASE("sample_coefficients: zero sigma zeroes the shape blocks") {
  const MorphableModel m = test::small_valid_model(149);
  CoefficientSampleConfig c;
  c.alpha_sigma = 0.0;
  std::mt19937_64 rng(151);
  const CoefficientVector coeff = sample_coefficients(rng, c, m);
  CHECK(coeff.alpha_shape().norm() == 0.0);
  CHECK(coeff.alpha_expr().norm() == 0.0);
}

TEST_CASE("sample_coefficients: yaw histogram is bucket-uniform within 3 sigma") {
  const MorphableModel m = test::small_valid_model(157);
  CoefficientSampleConfig c;
  std::mt19937_64 rng(163);
  const int draws = 10000;
  int counts[3] = {0, 0, 0};
  for (int t = 0; t < draws; ++t) {
    const CoefficientVector coeff = sample_coefficients(rng, c, m);
    const double yaw_deg =
        std::abs(yaw_of_rotation(coeff.projection())) * 180.0 / std::numbers::pi;
    CHECK(yaw_deg <= 90.0 + 1e-9);
    ++counts[std::min(2, static_cast<int>(yaw_deg / 30.0))];
  }
  // Multinomial with p=1/3: sigma = sqrt(n p (1-p)) ~ 47.1; allow 3 sigma.
  const double expected = draws / 3.0;
  const double three_sigma = 3.0 * std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0));
  for (int b = 0; b < 3; ++b) CHECK(std::abs(counts[b] - expected) < three_sigma);
}

TEST_CASE("sample_coefficients keeps every projected vertex in frame") {
  const MorphableModel m = test::small_valid_model(167);
  CoefficientSampleConfig c;
  std::mt19937_64 rng(173);
  for (int t = 0; t < 200; ++t) {
    const CoefficientVector coeff = sample_coefficients(rng, c, m);
    const Eigen::VectorXd v = project(render_shape(m, coeff), coeff);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      CHECK(v[i] >= 0.0);
      CHECK(v[i] <= 119.0);
    }
  }
}

TEST_CASE("render_proxy_image: out-of-frame and single-vertex splats") {
  const MorphableModel m = test::small_valid_model(179);

  SUBCASE("all vertices out of frame give an all-zero image") {
    CoefficientVector c(m.k_shape(), m.k_expr());
    c.scale() = 1.0;
    c.set_projection(Eigen::Matrix3d::Identity());
    c.set_translation({10000.0, 10000.0});
    const ImageGrid img = render_proxy_image(m, c, 32, 32);
    for (float v : img.values) CHECK(v == 0.0f);
  }

  SUBCASE("a vertex at a cell center lights exactly that cell") {
    // Scale 0 collapses every vertex onto the translation point.
    CoefficientVector c(m.k_shape(), m.k_expr());
    c.scale() = 0.0;
    c.set_projection(Eigen::Matrix3d::Identity());
    c.set_translation({7.0, 11.0});
    const ImageGrid img = render_proxy_image(m, c, 32, 32);
    int lit = 0;
    for (int r = 0; r < 32; ++r)
      for (int col = 0; col < 32; ++col)
        if (img.at(r, col) != 0.0f) {
          ++lit;
          CHECK(r == 11);
          CHECK(col == 7);
          CHECK(img.at(r, col) == 1.0f);
        }
    CHECK(lit == 1);
  }
}

TEST_CASE("render_proxy_image: +5px translation shifts the splat pattern by 5 cells") {
  const MorphableModel m = test::small_valid_model(181);
  std::mt19937_64 rng(191);
  CoefficientSampleConfig cfg;
  cfg.fit_min = cfg.fit_max = 0.5;  // leave room for the shift
  const CoefficientVector base = sample_coefficients(rng, cfg, m);
  CoefficientVector shifted = base;
  shifted.set_translation(base.translation() + Eigen::Vector2d(5.0, 0.0));

  const ImageGrid a = render_proxy_image(m, base, 120, 120);
  const ImageGrid b = render_proxy_image(m, shifted, 120, 120);
  double worst = 0.0;
  for (int r = 0; r < 120; ++r)
    for (int c = 0; c + 5 < 120; ++c)
      worst = std::max(worst, std::abs(double(b.at(r, c + 5)) - double(a.at(r, c))));
  CHECK(worst < 1e-6);  // integer shift: identical bilinear weights
}

TEST_CASE("corrupt_landmarks: identity, Rayleigh mean, outlier bound") {
  std::mt19937_64 rng(193);
  const LandmarkSet clean = test::random_landmarks(2, rng);

  SUBCASE("no noise is the identity") {
    LandmarkNoiseConfig c;
    c.sigma_px = 0.0;
    c.outlier_prob = 0.0;
    const LandmarkSet out = corrupt_landmarks(clean, rng, c);
    CHECK(out.points == clean.points);
  }

  SUBCASE("mean jitter magnitude approaches sigma*sqrt(pi/2)") {
    LandmarkNoiseConfig c;
    c.sigma_px = 1.5;
    c.outlier_prob = 0.0;
    double total = 0.0;
    const int reps = 10000 / kLandmarkCount + 1;
    int count = 0;
    for (int t = 0; t < reps * 3; ++t) {
      const LandmarkSet out = corrupt_landmarks(clean, rng, c);
      for (int j = 0; j < kLandmarkCount; ++j) {
        total += (out.points.row(j) - clean.points.row(j)).norm();
        ++count;
      }
    }
    const double mean = total / count;
    const double expect = 1.5 * std::sqrt(std::numbers::pi / 2.0);
    CHECK(std::abs(mean - expect) / expect < 0.02);
  }

  SUBCASE("pure outliers stay within range*sqrt(2)") {
    LandmarkNoiseConfig c;
    c.sigma_px = 0.0;
    c.outlier_prob = 1.0;
    c.outlier_range_px = 10.0;
    for (int t = 0; t < 50; ++t) {
      const LandmarkSet out = corrupt_landmarks(clean, rng, c);
      for (int j = 0; j < kLandmarkCount; ++j) {
        const double offset = (out.points.row(j) - clean.points.row(j)).norm();
        CHECK(offset <= 10.0 * std::numbers::sqrt2 + 1e-12);
      }
      CHECK(out.all_finite());
    }
  }
}

TEST_CASE("generated samples: stored landmark map matches the re-derived one") {
  const MorphableModel m = test::small_valid_model(197);
  DataGenConfig cfg;
  cfg.seed = 199;
  cfg.n_annotated = 5;
  cfg.n_wild = 5;
  cfg.n_eval = 0;
  cfg.resolution = 120;
  const GeneratedSplits splits = generate_splits(m, cfg);

  for (const DatasetRecord& rec : splits.annotated.records) {
    const auto& s = std::get<Annotated3DSample>(rec);
    const RasterizeResult r =
        rasterize_flm(landmarks_2d(m, s.gt_coeff), cfg.resolution, cfg.resolution);
    CHECK(r.map == s.flm);  // bit-exact
  }
  for (const DatasetRecord& rec : splits.wild.records) {
    const auto& s = std::get<Wild2DSample>(rec);
    const RasterizeResult r = rasterize_flm(s.noisy_landmarks, cfg.resolution, cfg.resolution);
    CHECK(r.map == s.flm);
  }
}

TEST_CASE("generation is a pure function of seed and config") {
  const MorphableModel m = test::small_valid_model(211);
  DataGenConfig cfg;
  cfg.seed = 223;
  cfg.n_annotated = 4;
  cfg.n_wild = 4;
  cfg.n_eval = 2;
  cfg.resolution = 64;
  test::TempDir dir("regen");
  const GeneratedSplits a = generate_splits(m, cfg);
  const GeneratedSplits b = generate_splits(m, cfg);
  write_dataset(a.annotated, dir.file("a.mfds"));
  write_dataset(b.annotated, dir.file("b.mfds"));
  CHECK(read_file(dir.file("a.mfds")) == read_file(dir.file("b.mfds")));
  write_dataset(a.wild, dir.file("aw.mfds"));
  write_dataset(b.wild, dir.file("bw.mfds"));
  CHECK(read_file(dir.file("aw.mfds")) == read_file(dir.file("bw.mfds")));
}

TEST_CASE("dataset files: empty round-trip") {
  test::TempDir dir("ds_empty");
  Dataset d;
  d.rows = d.cols = 16;
  d.k_shape = 3;
  d.k_expr = 2;
  write_dataset(d, dir.file("empty.mfds"));
  const Dataset back = read_dataset(dir.file("empty.mfds"));
  CHECK(back.size() == 0);
  CHECK(back.rows == 16);
  CHECK(back.k_shape == 3);
}

TEST_CASE("dataset files: mixed records round-trip bit-exactly") {
  const MorphableModel m = test::small_valid_model(227, 100, 4, 2);
  DataGenConfig cfg;
  cfg.seed = 229;
  cfg.n_annotated = 0;
  cfg.n_wild = 0;
  cfg.resolution = 48;

  Dataset mixed;
  mixed.rows = mixed.cols = 48;
  mixed.k_shape = m.k_shape();
  mixed.k_expr = m.k_expr();
  for (int i = 0; i < 50; ++i) {
    if (i % 2 == 0)
      mixed.records.emplace_back(make_annotated_sample(m, cfg, 0xAA, i));
    else
      mixed.records.emplace_back(make_wild_sample(m, cfg, 0xBB, i));
  }

  test::TempDir dir("ds_mixed");
  write_dataset(mixed, dir.file("m.mfds"));
  const Dataset back = read_dataset(dir.file("m.mfds"));
  REQUIRE(back.size() == mixed.size());

  // Byte-comparison oracle: write the reloaded set and compare files.
  write_dataset(back, dir.file("m2.mfds"));
  CHECK(read_file(dir.file("m.mfds")) == read_file(dir.file("m2.mfds")));

  // Spot-check structural equality too.
  const auto& a0 = std::get<Annotated3DSample>(mixed.records[0]);
  const auto& b0 = std::get<Annotated3DSample>(back.records[0]);
  CHECK(a0.proxy == b0.proxy);
  CHECK(a0.flm == b0.flm);
  CHECK(a0.gt_coeff.raw() == b0.gt_coeff.raw());
  const auto& a1 = std::get<Wild2DSample>(mixed.records[1]);
  const auto& b1 = std::get<Wild2DSample>(back.records[1]);
  CHECK(a1.noisy_landmarks.points == b1.noisy_landmarks.points);
}

TEST_CASE("dataset files: a flipped byte names the corrupt record") {
  const MorphableModel m = test::small_valid_model(233, 100, 4, 2);
  DataGenConfig cfg;
  cfg.seed = 239;
  cfg.resolution = 32;
  Dataset d;
  d.rows = d.cols = 32;
  d.k_shape = m.k_shape();
  d.k_expr = m.k_expr();
  for (int i = 0; i < 5; ++i) d.records.emplace_back(make_annotated_sample(m, cfg, 0xCC, i));

  test::TempDir dir("ds_corrupt");
  write_dataset(d, dir.file("d.mfds"));
  auto bytes = read_file(dir.file("d.mfds"));

  // Header: 4 magic + 4 version + 8 count + 4*4 dims = 32 bytes. Record 0
  // payload: 1 kind + 8 length, then the payload itself.
  const std::size_t payload_bytes = 32u * 32u * 5u + 8u * (1 + 2 + 9 + 4 + 2);
  const std::size_t record0_payload_start = 32 + 1 + 8;
  // Flip a byte inside record 2's payload.
  const std::size_t record_size = 1 + 8 + payload_bytes + 4;
  const std::size_t target = 32 + 2 * record_size + 1 + 8 + 100;
  REQUIRE(target < bytes.size());
  bytes[target] ^= 0xFF;
  (void)record0_payload_start;
  write_file_atomic(dir.file("bad.mfds"), bytes);
  try {
    read_dataset(dir.file("bad.mfds"));
    FAIL("expected an integrity error");
  } catch (const IntegrityError& e) {
    CHECK(std::string(e.what()).find("record 2") != std::string::npos);
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }
}

TEST_CASE("dataset files: truncation and version mismatch are integrity errors") {
  const MorphableModel m = test::small_valid_model(241, 100, 4, 2);
  DataGenConfig cfg;
  cfg.resolution = 32;
  Dataset d;
  d.rows = d.cols = 32;
  d.k_shape = m.k_shape();
  d.k_expr = m.k_expr();
  d.records.emplace_back(make_annotated_sample(m, cfg, 0xDD, 0));
  test::TempDir dir("ds_trunc");
  write_dataset(d, dir.file("d.mfds"));
  auto bytes = read_file(dir.file("d.mfds"));

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  write_file_atomic(dir.file("t.mfds"), truncated);
  CHECK_THROWS_AS(read_dataset(dir.file("t.mfds")), IntegrityError);

  auto version_bumped = bytes;
  version_bumped[4] = 0x7F;
  write_file_atomic(dir.file("v.mfds"), version_bumped);
  CHECK_THROWS_AS(read_dataset(dir.file("v.mfds")), IntegrityError);
}
