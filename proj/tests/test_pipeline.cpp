#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "ifno/dataset.hpp"
#include "ifno/mls.hpp"
#include "ifno/spline.hpp"
#include "ifno/synthetic.hpp"
#include "ifno/tracking.hpp"

using namespace ifno;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ifno_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticConfig small_synthetic() {
  SyntheticConfig c;
  c.op.nx = c.op.ny = 9;
  c.cycles = 2;
  c.frames_per_cycle = 3;
  c.lipschitz_pairs = 16;
  c.seed = 5;
  return c;
}

// Dataset of tiny dummy samples carrying only protocol tags.
Dataset tagged_dataset(std::size_t n) {
  Dataset d;
  d.nx = d.ny = 3;
  for (std::size_t k = 0; k < n; ++k) {
    Sample s;
    s.field = GridField(3, 3, 2, d.extent, std::vector<double>(18, static_cast<double>(k)));
    s.boundary = extract_boundary(s.field);
    s.protocol_id = static_cast<int>(k % 7) + 1;
    s.frame_index = static_cast<int>(k);
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::vector<Point2> perturbed_grid(int n, double h, double jitter, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point2> pts;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) pts.push_back({c * h + jitter * h * rng.uniform(-1, 1), r * h + jitter * h * rng.uniform(-1, 1)});
  return pts;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic operator and generator

TEST(Synthetic, ZeroLoadingGivesZeroField) {
  const SyntheticOperator op(small_synthetic().op);
  const GridField f = op.apply(BoundaryLoading(9, 9, {5.5, 5.5}));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Synthetic, AffineFieldIsReproducedInHomogeneousLinearMedium) {
  OperatorConfig cfg = small_synthetic().op;
  cfg.bumps = 0;
  cfg.nonlinearity = 0.0;
  const SyntheticOperator op(cfg);
  const double h = 5.5 / 8;
  std::vector<double> v;
  for (auto [i, j] : boundary_nodes(9, 9)) {
    v.push_back(0.1 * i * h + 0.02 * j * h);
    v.push_back(0.05 * j * h - 0.03 * i * h);
  }
  const GridField f = op.apply(BoundaryLoading(9, 9, cfg.extent, v));
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      EXPECT_NEAR(f(i, j, 0), 0.1 * i * h + 0.02 * j * h, 1e-8);
      EXPECT_NEAR(f(i, j, 1), 0.05 * j * h - 0.03 * i * h, 1e-8);
    }
}

TEST(Synthetic, BoundaryIsPrescribedExactlyAndNonlinearityInverts) {
  const SyntheticOperator op(small_synthetic().op);
  const BoundaryLoading b = ramp_loading(op.config(), 1.4, 1.6, 1.0, {0.3, -0.2, 0.5, 0.1, 0.9, -0.7}, 0.02);
  EXPECT_EQ(extract_boundary(op.apply(b)), b);
  for (double u : {-3.0, -0.5, 0.0, 1e-9, 0.7, 4.2}) EXPECT_NEAR(op.nonlinear(op.inverse_nonlinear(u)), u, 1e-14);
  for (double mu : op.conductivity(0)) {
    EXPECT_GE(mu, 1.0);
    EXPECT_LE(mu, 3.0 + 1e-12);
  }
}

TEST(Synthetic, GeneratorIsSeedDeterministicAndTagged) {
  const SyntheticConfig cfg = small_synthetic();
  const Dataset a = generate_synthetic(cfg), b = generate_synthetic(cfg);
  ASSERT_EQ(a.size(), cfg.sample_count());
  EXPECT_EQ(a.size(), 7u * 2u * 3u);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.metadata, b.metadata);
  SyntheticConfig other = cfg;
  other.seed = 6;
  EXPECT_NE(generate_synthetic(other).samples, a.samples);

  std::set<int> protos;
  for (const Sample& s : a.samples) {
    protos.insert(s.protocol_id);
    EXPECT_EQ(s.provenance, Provenance::synthetic);
    ASSERT_TRUE(s.stress.has_value());
    const auto pk = pk_stress(s.stress->lambda1, s.stress->lambda2, cfg.stress_model);
    EXPECT_EQ(pk[0], s.stress->p11);
    EXPECT_EQ(pk[1], s.stress->p22);
    EXPECT_EQ(extract_boundary(s.field), s.boundary);
  }
  EXPECT_EQ(protos.size(), 7u);
}

TEST(Synthetic, RecordedLipschitzConstantBoundsSampledPairs) {
  const SyntheticConfig cfg = small_synthetic();
  const Dataset d = generate_synthetic(cfg);
  const double c = d.metadata.at("lipschitz_constant").get<double>();
  EXPECT_GT(c, 0.0);
  EXPECT_TRUE(std::isfinite(c));
  const SyntheticOperator op(cfg.op);
  for (std::size_t a = 0; a + 1 < d.size(); a += 5) {
    const std::size_t b = a + 1;
    const double db = boundary_norm(boundary_difference(d.samples[a].boundary, d.samples[b].boundary));
    const double du = std::sqrt(squared_l2_distance(d.samples[a].field, d.samples[b].field));
    EXPECT_LE(du, 1.5 * c * db) << "pair " << a;
  }
}

TEST(Synthetic, RampFractionPeaksMidCycle) {
  EXPECT_DOUBLE_EQ(ramp_fraction(4, 7), 1.0);
  EXPECT_DOUBLE_EQ(ramp_fraction(1, 7), 0.25);
  EXPECT_DOUBLE_EQ(ramp_fraction(7, 7), 0.25);
  EXPECT_DOUBLE_EQ(ramp_fraction(1, 1), 1.0);
}

TEST(Synthetic, RejectsBadConfig) {
  SyntheticConfig c = small_synthetic();
  c.protocols = {8};
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = small_synthetic();
  c.op.mu_min = 0.0;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

// ---------------------------------------------------------------------------
// Study splits

TEST(Splits, StudyOneTakesEightyThreePercent) {
  const Dataset d = tagged_dataset(1000);
  const StudySplit s = split_study(d, 1, 11);
  EXPECT_EQ(s.train.size(), 830u);
  EXPECT_EQ(s.test.size(), 170u);
  const StudySplit again = split_study(d, 1, 11);
  EXPECT_EQ(s.train, again.train);
  EXPECT_NE(split_study(d, 1, 12).train, s.train);
}

TEST(Splits, ProtocolStudiesUseFixedSets) {
  const Dataset d = tagged_dataset(700);
  const StudySplit s4 = split_study(d, 4, 0);
  for (std::size_t k : s4.test) EXPECT_EQ(d.samples[k].protocol_id, 1);
  EXPECT_EQ(s4.test.size(), 100u);
  const StudySplit s2 = split_study(d, 2, 0);
  for (std::size_t k : s2.train) EXPECT_TRUE(std::set<int>({1, 2, 4}).contains(d.samples[k].protocol_id));
  for (std::size_t k : s2.test) EXPECT_TRUE(std::set<int>({3, 5, 6, 7}).contains(d.samples[k].protocol_id));
  const StudySplit s3 = split_study(d, 3, 0);
  for (std::size_t k : s3.train) EXPECT_TRUE(std::set<int>({1, 6, 7}).contains(d.samples[k].protocol_id));
}

TEST(Splits, EveryStudyPartitionsTheDataset) {
  const Dataset d = tagged_dataset(301);
  for (int study = 1; study <= 4; ++study) {
    const StudySplit s = split_study(d, study, 3);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), d.size()) << "study " << study;
    for (std::size_t k = 0; k < all.size(); ++k) EXPECT_EQ(all[k], k);
  }
  EXPECT_THROW(split_study(d, 5, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// Dataset files

TEST(DatasetIo, LittleEndianEncoding) {
  std::ostringstream out;
  write_f64_le(out, 1.0);
  const std::string bytes = out.str();
  ASSERT_EQ(bytes.size(), 8u);
  const unsigned char want[8] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  EXPECT_EQ(std::memcmp(bytes.data(), want, 8), 0);
  std::istringstream in(bytes);
  EXPECT_EQ(read_f64_le(in), 1.0);
}

TEST(DatasetIo, SaveLoadRoundTripIsBitExact) {
  const Dataset d = generate_synthetic(small_synthetic());
  const fs::path dir = scratch_dir("dataset_roundtrip");
  save_dataset(d, dir);
  const Dataset e = load_dataset(dir);
  EXPECT_EQ(e.nx, d.nx);
  EXPECT_EQ(e.extent, d.extent);
  EXPECT_EQ(e.seed, d.seed);
  EXPECT_EQ(e.samples, d.samples);
  EXPECT_EQ(e.metadata, d.metadata);
  EXPECT_EQ(fs::file_size(dir / "samples.bin"), d.size() * (32u + 81u) * 2u * 8u);
  fs::remove_all(dir);
}

TEST(DatasetIo, CorruptFilesAreDataErrors) {
  const Dataset d = generate_synthetic(small_synthetic());
  const fs::path dir = scratch_dir("dataset_corrupt");
  save_dataset(d, dir);
  fs::resize_file(dir / "samples.bin", fs::file_size(dir / "samples.bin") - 8);
  EXPECT_THROW(load_dataset(dir), DataError);
  std::ofstream(dir / "manifest.json") << "{\"format\": \"something-else\"}";
  EXPECT_THROW(load_dataset(dir), DataError);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(load_dataset(dir), DataError);
  EXPECT_THROW(load_dataset(dir / "missing"), std::ios_base::failure);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Tracked-node CSV

TEST(Tracking, ParsesTwoFrameExample) {
  std::istringstream in(
      "frame_id,node_id,x,y\n"
      "0,0,0,0\n0,1,1,0\n0,2,0,1\n0,3,1,1\n"
      "1,0,0.5,0.2\n1,1,1.5,0.2\n1,2,0.5,1.2\n1,3,1.5,1.2\n");
  const TrackedFrames f = parse_tracked_csv(in);
  EXPECT_EQ(f.frame_count(), 2u);
  EXPECT_EQ(f.node_count(), 4u);
  EXPECT_EQ(f.rows, 2);
  const auto s = frames_to_samples(f);
  ASSERT_EQ(s.size(), 2u);
  for (const Point2& u : s[0].displacement) EXPECT_EQ(u, (Point2{0.0, 0.0}));
  for (const Point2& u : s[1].displacement) {
    EXPECT_NEAR(u[0], 0.5, 1e-15);
    EXPECT_NEAR(u[1], 0.2, 1e-15);
  }
}

TEST(Tracking, MetadataScalesCoordinates) {
  std::istringstream in(
      "# scale_mm_per_px=0.01 frame_rate_hz=5 protocol=3 grid=1x2\n"
      "frame_id,node_id,x,y\n0,0,100,200\n0,1,300,200\n");
  const TrackedFrames f = parse_tracked_csv(in);
  EXPECT_EQ(f.protocol_id, 3);
  EXPECT_EQ(f.cols, 2);
  EXPECT_NEAR(f.coords[0][1][0], 3.0, 1e-14);
  EXPECT_NEAR(f.coords[0][0][1], 2.0, 1e-14);
}

TEST(Tracking, MalformedFilesAreDataErrors) {
  const auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_tracked_csv(in);
  };
  EXPECT_THROW(parse(""), DataError);
  EXPECT_THROW(parse("a,b,c\n0,0,0,0\n"), DataError);
  EXPECT_THROW(parse("frame_id,node_id,x,y\n0,0,0,0\n0,1,1,0\n1,0,0,0\n"), DataError);       // missing node
  EXPECT_THROW(parse("frame_id,node_id,x,y\n1,0,0,0\n0,0,1,0\n"), DataError);                // frames go backwards
  EXPECT_THROW(parse("frame_id,node_id,x,y\n0,0,0,0\n0,0,1,0\n"), DataError);                // duplicate node
  EXPECT_THROW(parse("frame_id,node_id,x,y\n0,0,zero,0\n"), DataError);                      // unparsable
  EXPECT_THROW(parse("# grid=2x2\nframe_id,node_id,x,y\n0,0,0,0\n0,1,1,0\n0,2,2,0\n"), DataError);
}

TEST(Tracking, DisplacementsFollowRigidTranslation) {
  TrackedFrames f;
  f.rows = f.cols = 4;
  f.frame_ids = {0, 1, 2};
  f.coords.resize(3);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const Point2 x{1.0 * c, 1.0 * r};
      f.coords[0].push_back(x);
      f.coords[1].push_back({1.1 * x[0], 1.05 * x[1]});
      f.coords[2].push_back({x[0] + 0.3, x[1] - 0.4});
    }
  const auto s = frames_to_samples(f);
  for (std::size_t n = 0; n < 16; ++n) {
    EXPECT_NEAR(s[1].displacement[n][0], 0.1 * f.coords[0][n][0], 1e-14);
    EXPECT_NEAR(s[1].displacement[n][1], 0.05 * f.coords[0][n][1], 1e-14);
    EXPECT_NEAR(s[2].displacement[n][0], 0.3, 1e-14);
    EXPECT_NEAR(s[2].displacement[n][1], -0.4, 1e-14);
  }
  // translating every frame, reference included, leaves displacements unchanged
  TrackedFrames g = f;
  for (auto& frame : g.coords)
    for (auto& p : frame) p = {p[0] + 7.0, p[1] - 2.0};
  const auto t = frames_to_samples(g);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t n = 0; n < 16; ++n) {
      EXPECT_NEAR(t[k].displacement[n][0], s[k].displacement[n][0], 1e-13);
      EXPECT_NEAR(t[k].displacement[n][1], s[k].displacement[n][1], 1e-13);
    }
}

TEST(Tracking, CsvWriteReadRoundTrip) {
  TrackedFrames f;
  f.rows = 2;
  f.cols = 3;
  f.protocol_id = 4;
  f.mm_per_pixel = 0.02;
  f.frame_ids = {0, 5};
  f.coords = {{{0, 0}, {1, 0}, {2, 0}, {0, 1}, {1, 1}, {2, 1}}, {{0.1, 0}, {1.2, 0}, {2.3, 0.1}, {0, 1.1}, {1, 1.2}, {2.1, 1.3}}};
  const fs::path dir = scratch_dir("tracking");
  write_tracked_csv((dir / "t.csv").string(), f);
  const TrackedFrames g = ingest_tracked_csv((dir / "t.csv").string());
  EXPECT_EQ(g.frame_ids, f.frame_ids);
  EXPECT_EQ(g.protocol_id, 4);
  EXPECT_EQ(g.rows, 2);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t n = 0; n < 6; ++n)
      for (int c = 0; c < 2; ++c) EXPECT_NEAR(g.coords[k][n][c], f.coords[k][n][c], 1e-14);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Moving least squares

TEST(Mls, ShapeFunctionsFormPartitionOfUnityAndReproduceLinears) {
  const auto pts = perturbed_grid(12, 0.5, 0.2, 7);
  const double rho = 2.5 * 0.5;
  Rng rng(8);
  for (int q = 0; q < 50; ++q) {
    const Point2 x{rng.uniform(0.5, 5.0), rng.uniform(0.5, 5.0)};
    const MlsShape s = mls_shape_functions(x, pts, rho, 1e-10);
    ASSERT_FALSE(s.singular);
    double sum = 0, sx = 0, sy = 0;
    for (std::size_t k = 0; k < s.neighbours.size(); ++k) {
      sum += s.values[k];
      sx += s.values[k] * pts[s.neighbours[k]][0];
      sy += s.values[k] * pts[s.neighbours[k]][1];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_NEAR(sx, x[0], 1e-10);
    EXPECT_NEAR(sy, x[1], 1e-10);
  }
}

TEST(Mls, LinearAndConstantFieldsPassThrough) {
  const auto pts = perturbed_grid(10, 0.6, 0.15, 2);
  std::vector<Point2> lin, cst;
  for (const auto& p : pts) {
    lin.push_back({2.0 * p[0] + 1.0, -p[1]});
    cst.push_back({0.7, -0.3});
  }
  const MlsResult a = mls_smooth_values(pts, lin, {});
  const MlsResult b = mls_smooth_values(pts, cst, {});
  EXPECT_TRUE(a.singular_nodes.empty());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    EXPECT_NEAR(a.values[k][0], lin[k][0], 1e-10);
    EXPECT_NEAR(a.values[k][1], lin[k][1], 1e-10);
    EXPECT_NEAR(b.values[k][0], 0.7, 1e-12);
    EXPECT_NEAR(b.values[k][1], -0.3, 1e-12);
  }
}

TEST(Mls, ReducesNoiseOnSmoothField) {
  const int n = 20;
  const auto pts = perturbed_grid(n, 0.25, 0.0, 0);
  Rng rng(4);
  std::vector<Point2> clean, noisy;
  for (const auto& p : pts) {
    const Point2 u{0.2 * std::sin(p[0]), 0.1 * std::cos(p[1])};
    clean.push_back(u);
    noisy.push_back({u[0] + 0.01 * rng.normal(), u[1] + 0.01 * rng.normal()});
  }
  const MlsResult r = mls_smooth_values(pts, noisy, {});
  double before = 0, after = 0;
  for (std::size_t k = 0; k < pts.size(); ++k)
    for (int c = 0; c < 2; ++c) {
      before += std::pow(noisy[k][c] - clean[k][c], 2);
      after += std::pow(r.values[k][c] - clean[k][c], 2);
    }
  EXPECT_LE(after, before / 2.0);
}

TEST(Mls, CollinearPointsAreReportedSingular) {
  ScatteredSample s;
  for (int k = 0; k < 8; ++k) {
    s.points.push_back({0.5 * k, 0.0});
    s.displacement.push_back({0.0, 0.0});
  }
  s.frame_index = 3;
  try {
    mls_smooth({s}, {});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 3"), std::string::npos);
  }
}

TEST(Mls, SmoothedSamplesAreTagged) {
  ScatteredSample s;
  s.points = perturbed_grid(6, 1.0, 0.1, 1);
  s.displacement.assign(s.points.size(), Point2{0.1, 0.2});
  const auto out = mls_smooth({s}, {});
  EXPECT_EQ(out[0].provenance, Provenance::smoothed);
}

// ---------------------------------------------------------------------------
// Splines

TEST(Spline, CubicIsReproducedExactly) {
  const std::vector<double> knots{0.0, 0.4, 1.1, 1.5, 2.2, 3.0};
  const auto cubic = [](double t) { return 1.0 - 2.0 * t + 0.5 * t * t - 0.3 * t * t * t; };
  std::vector<double> y, q;
  for (double t : knots) y.push_back(cubic(t));
  for (int k = 0; k <= 30; ++k) q.push_back(3.0 * k / 30.0);
  const auto v = spline_interpolate(knots, y, q);
  for (std::size_t k = 0; k < q.size(); ++k) EXPECT_NEAR(v[k], cubic(q[k]), 1e-12);
  EXPECT_THROW(spline_interpolate({0, 1, 2}, {0, 1, 2}, q), DataError);
  EXPECT_THROW(spline_interpolate({0, 1, 1, 2}, {0, 1, 2, 3}, q), DataError);
}

TEST(Spline, BicubicResampleFromEightByEight) {
  std::vector<double> kx, ky;
  for (int k = 0; k < 8; ++k) {
    kx.push_back(0.7 * k + 0.05 * std::sin(k));
    ky.push_back(0.6 * k);
  }
  const auto poly = [](double x, double y) { return 0.3 + x * y - 0.1 * x * x * y + 0.02 * y * y * y - 0.04 * x * x * x * y; };
  Eigen::MatrixXd v(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) v(i, j) = poly(kx[i], ky[j]);
  std::vector<double> qx, qy;
  for (int k = 0; k < 21; ++k) {
    qx.push_back(kx.front() + (kx.back() - kx.front()) * k / 20.0);
    qy.push_back(ky.front() + (ky.back() - ky.front()) * k / 20.0);
  }
  const Eigen::MatrixXd g = spline_resample_2d(kx, ky, v, qx, qy);
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 21; ++j) EXPECT_NEAR(g(i, j), poly(qx[i], qy[j]), 1e-9);
  const Eigen::MatrixXd same = spline_resample_2d(kx, ky, v, kx, ky);
  EXPECT_LT((same - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Spline, ResampleTrackedGridOntoModelGrid) {
  ScatteredSample s;
  s.rows = s.cols = 8;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      const Point2 p{5.5 * c / 7.0, 5.5 * r / 7.0};
      s.points.push_back(p);
      s.displacement.push_back({0.1 * p[0] + 0.02 * p[1], 0.05 * p[1]});
    }
  const Sample out = spline_resample(s);
  EXPECT_EQ(out.field.nx(), 21);
  EXPECT_NEAR(out.field.extent().x, 5.5, 1e-14);
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 21; ++j) {
      const double x = 5.5 * i / 20.0, y = 5.5 * j / 20.0;
      EXPECT_NEAR(out.field(i, j, 0), 0.1 * x + 0.02 * y, 1e-10);
      EXPECT_NEAR(out.field(i, j, 1), 0.05 * y, 1e-10);
    }
  EXPECT_EQ(out.boundary, extract_boundary(out.field));
  s.rows = s.cols = 3;
  EXPECT_THROW(spline_resample(s), DataError);
}
