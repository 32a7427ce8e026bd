#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "hyperst/data.hpp"
#include "scratch_dir.hpp"

using namespace hyperst;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.objects = 6;
  c.steps = 96;
  c.spatial_dim = 4;
  c.seed = 3;
  return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

std::string load_error(const std::filesystem::path& manifest) {
  try {
    load_dataset(manifest);
  } catch (const std::runtime_error& e) {
    return e.what();
  }
  return "";
}

/// Fraction of the total variance of per-object daily profiles that a per-hour
/// least-squares regression on s explains.
double explained_fraction(const Dataset& ds, std::size_t period) {
  const std::size_t n = ds.objects(), m = ds.steps(), p = ds.spatial_dim() + 1;
  std::vector<std::vector<double>> prof(n, std::vector<double>(period, 0.0));
  std::vector<std::size_t> cnt(period, 0);
  for (std::size_t t = 0; t < m; ++t) ++cnt[t % period];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < m; ++t) prof[i][t % period] += ds.labels.at(i, t, 0) / double(cnt[t % period]);

  double grand = 0.0;
  for (const auto& r : prof) grand += std::accumulate(r.begin(), r.end(), 0.0);
  grand /= double(n * period);
  double total = 0.0, explained = 0.0;
  for (const auto& r : prof)
    for (double v : r) total += (v - grand) * (v - grand);

  // Normal equations (XᵀX) β = Xᵀy with X = [1, s], solved by Gaussian elimination.
  std::vector<std::vector<double>> xtx(p, std::vector<double>(p, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x{1.0};
    for (std::size_t d = 0; d < ds.spatial_dim(); ++d) x.push_back(ds.spatial.at(i, d));
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b) xtx[a][b] += x[a] * x[b];
  }
  for (std::size_t tau = 0; tau < period; ++tau) {
    std::vector<std::vector<double>> aug = xtx;
    for (std::size_t a = 0; a < p; ++a) {
      double rhs = 0.0;
      for (std::size_t i = 0; i < n; ++i) rhs += (a == 0 ? 1.0 : ds.spatial.at(i, a - 1)) * prof[i][tau];
      aug[a].push_back(rhs);
    }
    for (std::size_t c = 0; c < p; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < p; ++r)
        if (std::abs(aug[r][c]) > std::abs(aug[piv][c])) piv = r;
      std::swap(aug[c], aug[piv]);
      for (std::size_t r = 0; r < p; ++r) {
        if (r == c) continue;
        const double f = aug[r][c] / aug[c][c];
        for (std::size_t k = c; k <= p; ++k) aug[r][k] -= f * aug[c][k];
      }
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += prof[i][tau] / double(n);
    for (std::size_t i = 0; i < n; ++i) {
      double fit = aug[0][p] / aug[0][0];
      for (std::size_t d = 0; d < ds.spatial_dim(); ++d) fit += aug[d + 1][p] / aug[d + 1][d + 1] * ds.spatial.at(i, d);
      explained += (fit - mean) * (fit - mean);
    }
  }
  return total > 0.0 ? explained / total : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Generator, Deterministic) {
  const Dataset a = generate_synthetic(small_config()), b = generate_synthetic(small_config());
  EXPECT_EQ(a.spatial, b.spatial);
  EXPECT_EQ(a.temporal, b.temporal);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.metadata, b.metadata);
  GeneratorConfig c = small_config();
  c.seed = 4;
  EXPECT_NE(generate_synthetic(c).labels, a.labels);
}

TEST(Generator, ShapesAndMetadata) {
  const Dataset ds = generate_synthetic(small_config());
  EXPECT_EQ(ds.spatial.shape(), (Shape{6, 4}));
  EXPECT_EQ(ds.temporal.shape(), (Shape{6, 96, 3}));
  EXPECT_EQ(ds.labels.shape(), (Shape{6, 96, 1}));
  EXPECT_EQ(ds.metadata.at("alpha").get<double>(), 1.0);
  EXPECT_EQ(ds.metadata.at("latent_pi").size(), 6u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t t = 0; t < 96; ++t) EXPECT_EQ(ds.temporal.at(i, t, 0), ds.labels.at(i, t, 0));
}

TEST(Generator, AlphaZeroSeriesIgnoreAttributes) {
  GeneratorConfig c = small_config();
  c.alpha = 0.0;
  c.sigma = 0.0;
  const Dataset ds = generate_synthetic(c);
  for (std::size_t i = 1; i < ds.objects(); ++i)
    for (std::size_t t = 0; t < ds.steps(); ++t) EXPECT_EQ(ds.labels.at(i, t, 0), ds.labels.at(0, t, 0));
  // With noise the mean series still does not depend on which object (and so which s) it belongs to.
  c.sigma = 0.1;
  c.objects = 40;
  c.steps = 480;
  const Dataset noisy = generate_synthetic(c);
  std::vector<double> mean(c.objects, 0.0);
  for (std::size_t i = 0; i < c.objects; ++i)
    for (std::size_t t = 0; t < c.steps; ++t) mean[i] += noisy.labels.at(i, t, 0) / double(c.steps);
  for (std::size_t i = 1; i < c.objects; ++i) EXPECT_NEAR(mean[i], mean[0], 0.05);
}

TEST(Generator, EqualMixturesGiveIdenticalSeriesWithoutNoise) {
  GeneratorConfig c = small_config();
  c.sigma = 0.0;
  const Dataset ds = generate_synthetic(c);
  const auto& pi = ds.metadata.at("latent_pi");
  // Series are a fixed function of pi; reconstruct and compare exactly against the profile model.
  for (std::size_t i = 0; i < ds.objects(); ++i)
    for (std::size_t t = 0; t < ds.steps(); ++t) {
      double want = 0.0;
      for (std::size_t k = 0; k < 2; ++k)
        want += pi[i][k].get<double>() * archetype_profile(k, double(t % 24), 24, c.sharpness);
      EXPECT_NEAR(ds.labels.at(i, t, 0), want, 1e-12);
    }
}

TEST(Generator, ArchetypePeaksFallInMorningAndEvening) {
  EXPECT_EQ(archetype_peak(0, 24), 8.0);
  EXPECT_EQ(archetype_peak(1, 24), 19.0);
  for (std::size_t k = 0; k < 2; ++k) {
    std::size_t best = 0;
    for (std::size_t h = 1; h < 24; ++h)
      if (archetype_profile(k, double(h), 24, 3.0) > archetype_profile(k, double(best), 24, 3.0)) best = h;
    if (k == 0) {
      EXPECT_GE(best, 6u);
      EXPECT_LE(best, 10u);
    } else {
      EXPECT_GE(best, 17u);
      EXPECT_LE(best, 21u);
    }
  }
}

TEST(Generator, ExplainedVarianceRisesWithCausalStrength) {
  GeneratorConfig c = small_config();
  c.objects = 32;
  c.steps = 240;
  c.sigma = 0.0;
  double prev = -1.0;
  for (double alpha : {0.0, 0.5, 1.0}) {
    c.alpha = alpha;
    const double r2 = explained_fraction(generate_synthetic(c), 24);
    EXPECT_GT(r2, prev) << "alpha=" << alpha;
    prev = r2;
  }
  c.alpha = 0.0;
  EXPECT_LT(explained_fraction(generate_synthetic(c), 24), 1e-12);
}

TEST(Generator, ConfigValidation) {
  GeneratorConfig c = small_config();
  c.alpha = 1.5;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small_config();
  c.archetypes = 1;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small_config();
  c.grid = 3;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c.objects = 9;
  EXPECT_NO_THROW(generate_synthetic(c));
  EXPECT_EQ(generator_config_from_json(to_json(small_config())).seed, 3u);
}

// ---------------------------------------------------------------------------

TEST(DatasetFiles, RoundTripIsIdentity) {
  ScratchDir dir("data");
  GeneratorConfig c = small_config();
  c.objects = 9;
  c.grid = 3;
  const Dataset ds = generate_synthetic(c);
  save_dataset(ds, dir.path());
  const Dataset back = load_dataset(dir / "manifest.json");
  EXPECT_EQ(back.spatial, ds.spatial);
  EXPECT_EQ(back.temporal, ds.temporal);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.timestamps, ds.timestamps);
  EXPECT_EQ(back.grid, ds.grid);
  EXPECT_EQ(back.metadata, ds.metadata);
}

TEST(DatasetFiles, SpatialRowCountMismatchNamesTheFile) {
  ScratchDir dir("data");
  GeneratorConfig c = small_config();
  c.objects = 3;
  save_dataset(generate_synthetic(c), dir.path());
  auto lines = read_lines(dir / "spatial.csv");
  lines.pop_back();
  write_lines(dir / "spatial.csv", lines);
  const std::string msg = load_error(dir / "manifest.json");
  EXPECT_NE(msg.find("spatial.csv"), std::string::npos) << msg;
  EXPECT_NE(msg.find("N=3"), std::string::npos) << msg;
}

TEST(DatasetFiles, NonFiniteValueIsRejected) {
  ScratchDir dir("data");
  save_dataset(generate_synthetic(small_config()), dir.path());
  auto lines = read_lines(dir / "temporal.csv");
  lines[5] = lines[5].substr(0, lines[5].rfind(',')) + ",nan";
  write_lines(dir / "temporal.csv", lines);
  const std::string msg = load_error(dir / "manifest.json");
  EXPECT_NE(msg.find("temporal.csv:6"), std::string::npos) << msg;
}

TEST(DatasetFiles, NonMonotonicTimeIsRejected) {
  ScratchDir dir("data");
  save_dataset(generate_synthetic(small_config()), dir.path());
  auto lines = read_lines(dir / "labels.csv");
  std::swap(lines[3], lines[4]);
  write_lines(dir / "labels.csv", lines);
  const std::string msg = load_error(dir / "manifest.json");
  EXPECT_NE(msg.find("labels.csv"), std::string::npos) << msg;
  EXPECT_NE(msg.find("strictly increasing"), std::string::npos) << msg;
}

TEST(DatasetFiles, MissingFilesAndBadManifest) {
  ScratchDir dir("data");
  save_dataset(generate_synthetic(small_config()), dir.path());
  std::filesystem::remove(dir / "labels.csv");
  EXPECT_NE(load_error(dir / "manifest.json").find("labels.csv"), std::string::npos);
  write_lines(dir / "manifest.json", {"{ not json"});
  EXPECT_NE(load_error(dir / "manifest.json").find("manifest.json"), std::string::npos);
  EXPECT_FALSE(load_error(dir / "absent.json").empty());
}

// ---------------------------------------------------------------------------

TEST(Split, LengthsFollowRatios) {
  using Lengths = std::array<std::size_t, 3>;
  auto lengths = [](std::vector<double> r, std::size_t m) { return SplitSpec{std::move(r)}.lengths(m); };
  EXPECT_EQ(lengths({8, 1, 1}, 100), (Lengths{80, 10, 10}));
  EXPECT_EQ(lengths({7, 1, 2}, 100), (Lengths{70, 10, 20}));
  EXPECT_EQ(lengths({7, 1, 2}, 2000), (Lengths{1400, 200, 400}));
  EXPECT_THROW(SplitSpec({1, 1}).validate(), std::invalid_argument);
  EXPECT_THROW(SplitSpec({1, 0, 1}).validate(), std::invalid_argument);
}

TEST(Split, WindowCountsPerObject) {
  GeneratorConfig c = small_config();
  c.objects = 3;
  c.steps = 100;
  const Dataset ds = generate_synthetic(c);
  const WindowSplits a = split_windows(ds, SplitSpec({8, 1, 1}), 6, 1);
  EXPECT_EQ(a.train.size(), 3u * 74);
  EXPECT_EQ(a.val.size(), 3u * 4);
  EXPECT_EQ(a.test.size(), 3u * 4);
  const WindowSplits b = split_windows(ds, SplitSpec({7, 1, 2}), 6, 1);
  EXPECT_EQ(b.train.size(), 3u * 64);
  EXPECT_EQ(b.val.size(), 3u * 4);
  EXPECT_EQ(b.test.size(), 3u * 14);
}

TEST(Split, WindowsNeverCrossPartitionBoundaries) {
  GeneratorConfig c = small_config();
  c.objects = 2;
  c.steps = 100;
  const Dataset ds = generate_synthetic(c);
  const std::size_t w = 6, h = 2;
  const WindowSplits s = split_windows(ds, SplitSpec({8, 1, 1}), w, h);
  for (const auto& win : s.train) EXPECT_LE(win.start + w + h, 80u);
  for (const auto& win : s.val) {
    EXPECT_GE(win.start, 80u);
    EXPECT_LE(win.start + w + h, 90u);
  }
  for (const auto& win : s.test) EXPECT_GE(win.start, 90u);
  const SampleWindow& last = s.train.back();
  EXPECT_EQ(last.start, 80u - w - h);
  for (std::size_t k = 0; k < h; ++k) EXPECT_EQ(last.label.at(k, 0), ds.labels.at(last.object, last.start + w + k, 0));
  for (std::size_t t = 0; t < w; ++t) EXPECT_EQ(last.input.at(t, 1), ds.temporal.at(last.object, last.start + t, 1));
  for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(last.spatial[d], ds.spatial.at(last.object, d));
}

TEST(Split, TooShortPartitionIsAnError) {
  GeneratorConfig c = small_config();
  c.steps = 40;
  const Dataset ds = generate_synthetic(c);
  EXPECT_THROW(split_windows(ds, SplitSpec({8, 1, 1}), 6, 1), std::invalid_argument);
}

TEST(Split, GridWindowsCarryTheWholeGrid) {
  GeneratorConfig c = small_config();
  c.objects = 4;
  c.grid = 2;
  c.steps = 100;
  const Dataset ds = generate_synthetic(c);
  const WindowSplits s = split_windows(ds, SplitSpec({8, 1, 1}), 3, 2, WindowLayout::grid);
  EXPECT_EQ(s.train.size(), 80u - 5 + 1);
  EXPECT_EQ(s.train[0].spatial.shape(), (Shape{4, 4}));
  EXPECT_EQ(s.train[0].input.shape(), (Shape{3, 4, 3}));
  EXPECT_EQ(s.train[0].label.shape(), (Shape{2, 4, 1}));
  EXPECT_EQ(s.train[7].input.at(1, 2, 0), ds.temporal.at(2, 8, 0));
}

// ---------------------------------------------------------------------------

TEST(Normalize, TrainChannelsAreStandardized) {
  GeneratorConfig c = small_config();
  c.steps = 200;
  const Dataset ds = generate_synthetic(c);
  const std::size_t train = 160;
  const Normalizer n = Normalizer::fit(ds, train);
  const Dataset z = n.apply(ds);
  for (std::size_t ch = 0; ch < ds.temporal_dim(); ++ch) {
    double sum = 0.0, sq = 0.0;
    const double count = double(ds.objects() * train);
    for (std::size_t i = 0; i < ds.objects(); ++i)
      for (std::size_t t = 0; t < train; ++t) sum += z.temporal.at(i, t, ch);
    const double mean = sum / count;
    for (std::size_t i = 0; i < ds.objects(); ++i)
      for (std::size_t t = 0; t < train; ++t) sq += (z.temporal.at(i, t, ch) - mean) * (z.temporal.at(i, t, ch) - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(sq / count), 1.0, 1e-9);
  }
  // Held-out steps use train statistics, so their mean is not forced to zero.
  double held = 0.0;
  for (std::size_t i = 0; i < ds.objects(); ++i)
    for (std::size_t t = train; t < ds.steps(); ++t) held += z.labels.at(i, t, 0);
  EXPECT_GT(std::abs(held / double(ds.objects() * (ds.steps() - train))), 1e-6);
}

TEST(Normalize, StatisticsIgnoreHeldOutSteps) {
  GeneratorConfig c = small_config();
  c.steps = 200;
  Dataset ds = generate_synthetic(c);
  const Normalizer before = Normalizer::fit(ds, 160);
  for (std::size_t i = 0; i < ds.objects(); ++i)
    for (std::size_t t = 160; t < 200; ++t) ds.labels.at(i, t, 0) = 1e6;
  const Normalizer after = Normalizer::fit(ds, 160);
  EXPECT_EQ(before.labels.mean, after.labels.mean);
  EXPECT_EQ(before.labels.stddev, after.labels.stddev);
}

TEST(Normalize, InverseRestoresLabels) {
  const Dataset ds = generate_synthetic(small_config());
  const Normalizer n = Normalizer::fit(ds, 80);
  const Tensor back = n.denormalize_labels(n.normalize_labels(ds.labels));
  EXPECT_LE(max_abs_diff(back, ds.labels), 1e-12);
}

TEST(Normalize, ZeroVarianceChannelGetsUnitScaleAndWarning) {
  Dataset ds = generate_synthetic(small_config());
  for (std::size_t i = 0; i < ds.objects(); ++i) ds.spatial.at(i, 2) = 4.0;
  const Normalizer n = Normalizer::fit(ds, 80);
  EXPECT_EQ(n.spatial.stddev[2], 1.0);
  ASSERT_EQ(n.warnings.size(), 1u);
  EXPECT_NE(n.warnings[0].find("spatial channel 2"), std::string::npos) << n.warnings[0];
  EXPECT_EQ(n.apply(ds).spatial.at(0, 2), 0.0);
}

TEST(Normalize, JsonRoundTrip) {
  const Normalizer n = Normalizer::fit(generate_synthetic(small_config()), 80);
  const Normalizer back = normalizer_from_json(to_json(n));
  EXPECT_EQ(back.temporal.mean, n.temporal.mean);
  EXPECT_EQ(back.labels.stddev, n.labels.stddev);
  EXPECT_EQ(back.spatial.mean, n.spatial.mean);
}
