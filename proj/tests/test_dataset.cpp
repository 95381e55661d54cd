#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vdm/dataset.hpp"

using namespace vdm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("vdm_test_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SceneRanges short_ranges() {
  SceneRanges r;
  r.duration = 0.5;
  return r;
}

}  // namespace

TEST(Config, ParsesCommentsAndWhitespace) {
  std::istringstream in("# header\n  a = 1.5  \n\nb=x # trailing\n");
  const auto kv = parse_key_values(in);
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("a"), "1.5");
  EXPECT_EQ(kv.at("b"), "x");
}

TEST(Config, RejectsMalformedDuplicateAndUnknown) {
  std::istringstream missing("novalue\n");
  EXPECT_THROW(parse_key_values(missing), ConfigError);
  std::istringstream dup("a=1\na=2\n");
  EXPECT_THROW(parse_key_values(dup), ConfigError);
  SceneRanges r;
  auto schema = r.schema();
  EXPECT_THROW(schema.apply({{"rt60_max", "0.9"}, {"bogus", "1"}}), ConfigError);
  EXPECT_DOUBLE_EQ(r.rt60_max, 0.5);  // nothing applied
  EXPECT_THROW(schema.apply({{"rt60_max", "abc"}}), ConfigError);
}

TEST(Config, OverridesEveryRangeAndEchoes) {
  SceneRanges r;
  auto schema = r.schema();
  schema.apply(parse_overrides({"rt60_max=0.7", "test_rt60=0.3,0.5", "sources_max=2", "pattern_order=6"}));
  EXPECT_DOUBLE_EQ(r.rt60_max, 0.7);
  EXPECT_EQ(r.test_rt60, (std::vector<double>{0.3, 0.5}));
  EXPECT_EQ(r.sources_max, 2u);
  EXPECT_NEAR(r.di_db(), 11.139, 1e-3);
  const auto eff = schema.effective();
  EXPECT_EQ(eff.at("test_rt60"), "0.3,0.5");
  EXPECT_EQ(eff.at("rt60_max"), "0.7");
}

TEST(Grids, SpacingAndDisjoint) {
  const auto tr = angle_grid(Split::train), va = angle_grid(Split::valid), te = angle_grid(Split::test);
  EXPECT_EQ(tr.size(), 72u);
  EXPECT_EQ(va.size(), 72u);
  EXPECT_EQ(te.size(), 144u);
  EXPECT_DOUBLE_EQ(va.back(), 357.5);
  EXPECT_DOUBLE_EQ(te.front(), 1.25);
  EXPECT_DOUBLE_EQ(te.back(), 358.75);
  const std::set<double> a(tr.begin(), tr.end()), b(va.begin(), va.end()), c(te.begin(), te.end());
  for (double x : b) EXPECT_FALSE(a.contains(x));
  for (double x : c) EXPECT_FALSE(a.contains(x) || b.contains(x));
}

TEST(SampleScene, RangeCompliance) {
  const SceneRanges r;
  const auto grid = angle_grid(Split::train);
  const std::set<double> on_grid(grid.begin(), grid.end());
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto s = sample_scene(rng, Split::train, r);
    EXPECT_TRUE(s.room.length >= 6 && s.room.length <= 10);
    EXPECT_TRUE(s.room.width >= 4 && s.room.width <= 8);
    EXPECT_TRUE(s.room.height >= 3 && s.room.height <= 5);
    EXPECT_TRUE(s.room.rt60 >= 0.2 && s.room.rt60 <= 0.5);
    EXPECT_TRUE(s.room.contains(s.array_center, 1.2 - 1e-12));
    ASSERT_TRUE(s.sources.size() >= 1 && s.sources.size() <= 3);
    for (const auto& p : s.sources) {
      EXPECT_TRUE(on_grid.contains(p.azimuth_deg));
      EXPECT_TRUE(p.distance >= 0.5 && p.distance <= 2.5);
      EXPECT_TRUE(s.room.contains(p.position, 0.1));
      EXPECT_NEAR((p.position - s.array_center).norm(), p.distance, 1e-9);
    }
  }
}

TEST(SampleScene, TestSplitUsesPresetsAndTwoSources) {
  const SceneRanges r;
  std::mt19937_64 rng(2);
  std::set<double> seen;
  for (int i = 0; i < 200; ++i) {
    const auto s = sample_scene(rng, Split::test, r);
    EXPECT_EQ(s.sources.size(), 2u);
    seen.insert(s.room.rt60);
  }
  EXPECT_EQ(seen, (std::set<double>{0.2, 0.4, 0.6}));
}

TEST(SampleScene, Deterministic) {
  const SceneRanges r;
  std::mt19937_64 a(9), b(9);
  const auto s1 = sample_scene(a, Split::valid, r), s2 = sample_scene(b, Split::valid, r);
  EXPECT_EQ(s1.array_center, s2.array_center);
  ASSERT_EQ(s1.sources.size(), s2.sources.size());
  for (std::size_t k = 0; k < s1.sources.size(); ++k) EXPECT_EQ(s1.sources[k].position, s2.sources[k].position);
}

TEST(SampleScene, AzimuthHistogramUniform) {
  const SceneRanges r;
  std::mt19937_64 rng(3);
  std::map<double, int> hist;
  std::size_t draws = 0;
  while (draws < 50000) {
    for (const auto& p : sample_scene(rng, Split::train, r).sources) {
      ++hist[p.azimuth_deg];
      ++draws;
    }
  }
  ASSERT_EQ(hist.size(), 72u);
  int lo = INT_MAX, hi = 0;
  for (const auto& [a, n] : hist) lo = std::min(lo, n), hi = std::max(hi, n);
  EXPECT_LT(static_cast<double>(hi) / lo, 1.5);
}

TEST(SampleScene, EmptyAdmissibleRegionThrows) {
  SceneRanges r;
  r.height_min = r.height_max = 2.0;
  std::mt19937_64 rng(0);
  EXPECT_THROW(sample_scene(rng, Split::train, r), std::invalid_argument);
  r = {};
  r.rt60_min = 0.6;
  EXPECT_THROW(sample_scene(rng, Split::train, r), std::invalid_argument);
}

TEST(Ingest, LoudnessRateAndChannels) {
  const auto dir = fresh_dir("ingest");
  Waveform silent(16000.0, 1, 1600);
  write_wav((dir / "a_silent.wav").string(), silent);
  Waveform sine(16000.0, 1, 16000);
  for (std::size_t i = 0; i < 16000; ++i) sine.channels[0][i] = std::sin(2.0 * std::numbers::pi * 500.0 * i / 16000.0);
  write_wav((dir / "b_sine.wav").string(), sine);
  Waveform hi_rate = sine;
  hi_rate.sample_rate = 48000.0;
  write_wav((dir / "c_48k.wav").string(), hi_rate);
  Waveform stereo(16000.0, 2, 100);
  stereo.channels[0][0] = 0.5;
  write_wav((dir / "d_stereo.wav").string(), stereo);

  const auto cat = ingest_speech(dir.string());
  ASSERT_EQ(cat.entries.size(), 1u);
  EXPECT_NE(cat.entries[0].path.find("b_sine"), std::string::npos);
  EXPECT_NEAR(cat.entries[0].rms_dbfs, -3.0103, 1e-3);
  ASSERT_EQ(cat.rejected.size(), 3u);
  EXPECT_EQ(cat.rejected[0].second, "below loudness threshold");
  EXPECT_NE(cat.rejected[1].second.find("unsupported rate"), std::string::npos);
  EXPECT_EQ(cat.rejected[2].second, "not mono");
}

TEST(Ingest, NoQualifyingFilesThrows) {
  const auto dir = fresh_dir("ingest_empty");
  write_wav((dir / "quiet.wav").string(), Waveform(16000.0, 1, 100));
  EXPECT_THROW(ingest_speech(dir.string()), std::runtime_error);
  EXPECT_THROW(ingest_speech((dir / "missing").string()), std::runtime_error);
}

TEST(BuildSample, DeterministicSevenChannelsAndSnr) {
  const auto r = short_ranges();
  auto make = [&] {
    std::mt19937_64 rng(11);
    auto s = sample_scene(rng, Split::train, r);
    s.seed = 11;
    return build_sample(s, r, nullptr, "x");
  };
  const auto a = make(), b = make();
  const auto wa = encode_wav(sample_waveform(a.bundle)), wb = encode_wav(sample_waveform(b.bundle));
  EXPECT_EQ(wa, wb);
  EXPECT_EQ(sample_waveform(a.bundle).num_channels(), 7u);
  EXPECT_EQ(a.bundle.length(), 8000u);
  EXPECT_EQ(a.record, b.record);

  Signal clean = a.bundle.y_mics.channels[0];
  for (std::size_t i = 0; i < clean.size(); ++i) clean[i] -= a.bundle.noise.channels[0][i];
  const double snr = 10.0 * std::log10(energy(clean) / energy(a.bundle.noise.channels[0]));
  EXPECT_NEAR(snr, 30.0, 0.1);
  EXPECT_NEAR(a.record["beta"].get<double>(), 0.57735, 1e-4);
}

TEST(BuildSample, CatalogTooSmallThrows) {
  const auto dir = fresh_dir("small_cat");
  Waveform tone(16000.0, 1, 4000);
  for (std::size_t i = 0; i < 4000; ++i) tone.channels[0][i] = 0.1 * std::sin(0.3 * i);
  write_wav((dir / "t.wav").string(), tone);
  const auto cat = ingest_speech(dir.string());
  auto r = short_ranges();
  std::mt19937_64 rng(0);
  auto s = sample_scene(rng, Split::test, r);
  EXPECT_THROW(build_sample(s, r, &cat, "x"), std::runtime_error);
  r.test_sources = 1;
  s = sample_scene(rng, Split::test, r);
  const auto out = build_sample(s, r, &cat, "x");
  EXPECT_EQ(out.bundle.length(), 8000u);  // zero padded past the 4000-sample clip
  EXPECT_EQ(out.record["sources"][0]["speech"]["offset"].get<std::size_t>(), 0u);
}

TEST(GenDataset, FilesManifestAndRerunIdentity) {
  const auto dir = fresh_dir("gen");
  DatasetOptions opt;
  opt.n = 3;
  opt.split = Split::test;
  opt.seed = 7;
  opt.out_dir = (dir / "a").string();
  opt.jobs = 3;
  opt.ranges = short_ranges();
  const auto res = gen_dataset(opt);
  ASSERT_TRUE(res.complete) << res.error;
  const auto records = read_manifest((dir / "a" / "manifest.jsonl").string());
  ASSERT_EQ(records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(records[i]["index"].get<std::size_t>(), i);
    EXPECT_TRUE(fs::exists(dir / "a" / records[i]["wav"].get<std::string>()));
    EXPECT_EQ(read_wav((dir / "a" / records[i]["wav"].get<std::string>()).string()).num_channels(), 7u);
  }

  opt.out_dir = (dir / "b").string();
  opt.jobs = 1;
  ASSERT_TRUE(gen_dataset(opt).complete);
  EXPECT_EQ(slurp(dir / "a" / "manifest.jsonl"), slurp(dir / "b" / "manifest.jsonl"));
  for (const auto& rec : records) {
    const auto wav = rec["wav"].get<std::string>();
    EXPECT_EQ(slurp(dir / "a" / wav), slurp(dir / "b" / wav));
  }
}

TEST(GenDataset, TrainValidAzimuthsDisjoint) {
  const auto dir = fresh_dir("disjoint");
  std::set<double> seen[2];
  for (int k = 0; k < 2; ++k) {
    DatasetOptions opt;
    opt.n = 4;
    opt.split = k == 0 ? Split::train : Split::valid;
    opt.seed = 5;
    opt.out_dir = (dir / to_string(opt.split)).string();
    opt.jobs = 4;
    opt.ranges = short_ranges();
    opt.ranges.duration = 0.25;
    ASSERT_TRUE(gen_dataset(opt).complete);
    for (const auto& rec : read_manifest((dir / to_string(opt.split) / "manifest.jsonl").string()))
      for (const auto& s : rec["sources"]) seen[k].insert(s["azimuth_deg"].get<double>());
  }
  for (double a : seen[1]) EXPECT_FALSE(seen[0].contains(a));
}

TEST(GenDataset, FailureWritesPartialFooter) {
  const auto dir = fresh_dir("partial");
  SpeechCatalog cat;
  cat.entries.push_back({(dir / "does_not_exist.wav").string(), 100, -10.0});
  DatasetOptions opt;
  opt.n = 2;
  opt.split = Split::test;
  opt.out_dir = dir.string();
  opt.ranges = short_ranges();
  opt.ranges.test_sources = 1;
  opt.catalog = &cat;
  const auto res = gen_dataset(opt);
  EXPECT_FALSE(res.complete);
  const auto text = slurp(dir / "manifest.jsonl");
  EXPECT_NE(text.find("\"partial\":true"), std::string::npos);
  EXPECT_THROW(read_manifest((dir / "manifest.jsonl").string()), std::runtime_error);
}

TEST(Seeds, PerSampleSeedsDistinct) {
  std::set<std::uint64_t> s;
  for (std::size_t i = 0; i < 1000; ++i) s.insert(sample_seed(1, Split::train, i));
  for (std::size_t i = 0; i < 1000; ++i) s.insert(sample_seed(1, Split::valid, i));
  EXPECT_EQ(s.size(), 2000u);
}
