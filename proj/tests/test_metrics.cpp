#include <gtest/gtest.h>

#include <sstream>

#include "vdm/metrics.hpp"

using namespace vdm;

TEST(Sdr, PerfectEstimateHitsCap) {
  const Signal x{1, -2, 3};
  EXPECT_EQ(sdr(x, x), kSdrCap);
}

TEST(Sdr, HalfAmplitudeIsSixDb) {
  const Signal ref{1, -2, 3, 0.5};
  Signal est = ref;
  for (auto& v : est) v *= 0.5;
  EXPECT_NEAR(sdr(est, ref), 20 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(sdr(est, ref), 6.02, 0.01);
}

TEST(Sdr, ScaleInvarianceOfJointScaling) {
  const Signal ref{1, 2, -1}, est{0.9, 2.1, -1.2};
  Signal r2 = ref, e2 = est;
  for (auto& v : r2) v *= 7;
  for (auto& v : e2) v *= 7;
  EXPECT_NEAR(sdr(est, ref), sdr(e2, r2), 1e-12);
  EXPECT_THROW(sdr(est, Signal(3, 0.0)), std::invalid_argument);
  EXPECT_THROW(sdr(est, Signal(2, 1.0)), std::invalid_argument);
  EXPECT_NEAR(sdr(Signal(3, 0.0), ref), 0.0, 1e-12);
}

TEST(Cvdr, RatiosAndInfinity) {
  ComplexSpectrogram a(2, 2, 2, 1, 2), b(2, 2, 2, 1, 2);
  for (auto& v : a.data) v = {1, 1};
  for (auto& v : b.data) v = {1, 0};
  const auto c = cvdr(a, b);
  EXPECT_NEAR(c.ratio, 2.0, 1e-15);
  EXPECT_NEAR(c.db, 3.0103, 1e-4);
  const auto inf = cvdr(a, ComplexSpectrogram::zeros_like(a));
  EXPECT_TRUE(inf.infinite);
  EXPECT_TRUE(std::isinf(inf.db));
}

TEST(LevelDiff, IdenticalChannelsAreZeroAndRowCount) {
  Signal x(10000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.01 * i);
  const auto c = segmental_level_diff(x, x, 4000, 2000);
  EXPECT_EQ(c.db.size(), (10000 - 4000) / 2000 + 1);
  for (double v : c.db) EXPECT_EQ(v, 0.0);
}

TEST(LevelDiff, SignConventionLeftLouderIsPositive) {
  Signal l(1000, 1.0), r(1000, 0.5);
  const auto c = segmental_level_diff(l, r, 100, 100);
  for (double v : c.db) EXPECT_NEAR(v, 6.0206, 1e-3);
  Signal silent(1000, 0.0);
  for (double v : segmental_level_diff(silent, silent, 100, 100).db) EXPECT_EQ(v, 0.0);
}

TEST(Scatter, WritesOneRowPerSample) {
  std::vector<ScatterSample> s{{"a", 0.2, {2.0, 3.0, false}, 10.0}, {"b", 0.6, {0.5, -3.0, false}, 4.0}};
  std::ostringstream os;
  scatter_report(s, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "id,cvdr_db,sdr_db,rt60");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 2);
  EXPECT_THROW(scatter_report({}, os), std::invalid_argument);
}

TEST(Report, MeanAndMedian) {
  MetricReport r;
  for (double v : {1.0, 5.0, 3.0, 10.0}) r.rows.push_back({"x", 0.4, "sdr", v, 0.0});
  r.rows.push_back({"x", 0.4, "other", 100.0, 0.0});
  EXPECT_DOUBLE_EQ(r.mean("sdr"), 4.75);
  EXPECT_DOUBLE_EQ(r.median("sdr"), 4.0);
  EXPECT_THROW(r.mean("missing"), std::invalid_argument);
}
