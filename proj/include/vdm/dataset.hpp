#pragma once

// Randomized scene sampling, speech ingestion, sample rendering and the JSONL
// manifest.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "vdm/config.hpp"
#include "vdm/room.hpp"
#include "vdm/speech.hpp"
#include "vdm/targets.hpp"
#include "vdm/wav.hpp"

namespace vdm {

using json = nlohmann::json;

enum class Split { train, valid, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + s);
}

/// Candidate source azimuths in degrees, relative to the look direction.
inline std::vector<double> angle_grid(Split s) {
  double start = 0.0, step = 5.0;
  if (s == Split::valid) start = 2.5;
  if (s == Split::test) start = 1.25, step = 2.5;
  std::vector<double> g;
  for (double a = start; a < 360.0; a += step) g.push_back(a);
  return g;
}

/// Sampling ranges; every field can be overridden from a key=value file.
struct SceneRanges {
  double length_min = 6.0, length_max = 10.0;
  double width_min = 4.0, width_max = 8.0;
  double height_min = 3.0, height_max = 5.0;
  double rt60_min = 0.2, rt60_max = 0.5;
  double distance_min = 0.5, distance_max = 2.5;
  double wall_clearance = 1.2;  // array centre to every surface
  double source_margin = 0.1;   // source to every surface
  std::size_t sources_min = 1, sources_max = 3;
  std::size_t test_sources = 2;
  std::vector<double> test_rt60 = {0.2, 0.4, 0.6};
  double duration = 4.0;
  double sample_rate = 16000.0;
  int pattern_order = 1;
  double look_azimuth = 30.0;  // global azimuth of the look direction (UCA element)
  double snr_db = 30.0;
  double min_loudness_dbfs = -42.0;

  ConfigSchema schema() {
    ConfigSchema s;
    s.bind("length_min", length_min).bind("length_max", length_max);
    s.bind("width_min", width_min).bind("width_max", width_max);
    s.bind("height_min", height_min).bind("height_max", height_max);
    s.bind("rt60_min", rt60_min).bind("rt60_max", rt60_max);
    s.bind("distance_min", distance_min).bind("distance_max", distance_max);
    s.bind("wall_clearance", wall_clearance).bind("source_margin", source_margin);
    s.bind("sources_min", sources_min).bind("sources_max", sources_max).bind("test_sources", test_sources);
    s.bind("test_rt60", test_rt60);
    s.bind("duration", duration).bind("sample_rate", sample_rate);
    s.bind("pattern_order", pattern_order).bind("look_azimuth", look_azimuth);
    s.bind("snr_db", snr_db).bind("min_loudness_dbfs", min_loudness_dbfs);
    return s;
  }

  void validate() const {
    auto range = [](double lo, double hi, const char* what) {
      if (!(lo > 0.0 && lo <= hi)) throw std::invalid_argument(std::string("invalid range: ") + what);
    };
    range(length_min, length_max, "length");
    range(width_min, width_max, "width");
    range(height_min, height_max, "height");
    range(rt60_min, rt60_max, "rt60");
    range(distance_min, distance_max, "distance");
    if (sources_min == 0 || sources_min > sources_max) throw std::invalid_argument("invalid range: sources");
    if (test_sources == 0) throw std::invalid_argument("test_sources must be >= 1");
    if (test_rt60.empty()) throw std::invalid_argument("test_rt60 presets empty");
    if (pattern_order < 1) throw std::invalid_argument("pattern_order must be >= 1");
    if (!(duration > 0.0) || !(sample_rate > 0.0)) throw std::invalid_argument("duration and sample_rate must be positive");
  }

  std::size_t samples() const { return static_cast<std::size_t>(std::llround(duration * sample_rate)); }

  /// Analytic directivity index of an unfloored J-th order cardioid,
  /// 10 log10(2J + 1).
  double di_db() const { return 10.0 * std::log10(2.0 * pattern_order + 1.0); }
  DirectivityPattern pattern() const { return DirectivityPattern{pattern_order, deg2rad(look_azimuth)}; }
};

struct SourcePlacement {
  double azimuth_deg = 0.0;  // relative to the look direction, on the split grid
  double distance = 0.0;
  Vec3 position;
};

struct SceneSpec {
  Split split = Split::train;
  std::uint64_t seed = 0;
  RoomSpec room;
  Vec3 array_center;
  std::vector<SourcePlacement> sources;
};

/// Draws a scene: room and RT60 uniform in range (test: RT60 from the
/// presets), array centre uniform in the admissible region, per-source grid
/// azimuth and distance; distances falling outside the room are redrawn.
template <class Rng>
SceneSpec sample_scene(Rng& rng, Split split, const SceneRanges& r) {
  r.validate();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  SceneSpec s;
  s.split = split;
  s.room.length = uniform(r.length_min, r.length_max);
  s.room.width = uniform(r.width_min, r.width_max);
  s.room.height = uniform(r.height_min, r.height_max);
  if (split == Split::test) {
    std::uniform_int_distribution<std::size_t> pick(0, r.test_rt60.size() - 1);
    s.room.rt60 = r.test_rt60[pick(rng)];
  } else {
    s.room.rt60 = uniform(r.rt60_min, r.rt60_max);
  }
  const double c = r.wall_clearance;
  if (s.room.length < 2 * c || s.room.width < 2 * c || s.room.height < 2 * c)
    throw std::invalid_argument("sample_scene: no admissible array position (room smaller than twice the clearance)");
  s.array_center = {uniform(c, s.room.length - c), uniform(c, s.room.width - c), uniform(c, s.room.height - c)};

  std::size_t count = r.test_sources;
  if (split != Split::test) {
    std::uniform_int_distribution<std::size_t> n(r.sources_min, r.sources_max);
    count = n(rng);
  }
  const auto grid = angle_grid(split);
  std::uniform_int_distribution<std::size_t> pick_angle(0, grid.size() - 1);
  for (std::size_t k = 0; k < count; ++k) {
    SourcePlacement p;
    p.azimuth_deg = grid[pick_angle(rng)];
    const double global = deg2rad(r.look_azimuth + p.azimuth_deg);
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      p.distance = uniform(r.distance_min, r.distance_max);
      p.position = s.array_center + Vec3{std::cos(global), std::sin(global), 0.0} * p.distance;
      placed = s.room.contains(p.position, r.source_margin);
    }
    if (!placed) throw std::runtime_error("sample_scene: could not place a source inside the room");
    s.sources.push_back(p);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Speech catalog

struct SpeechEntry {
  std::string path;
  std::size_t samples = 0;
  double rms_dbfs = 0.0;
};

struct SpeechCatalog {
  std::vector<SpeechEntry> entries;
  std::vector<std::pair<std::string, std::string>> rejected;  // path, reason
};

inline double rms_dbfs(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(energy(x) / static_cast<double>(x.size()));
}

/// Mono 16 kHz WAV files at or above the loudness threshold (RMS dBFS over
/// the whole clip), in path order.
inline SpeechCatalog ingest_speech(const std::string& directory, double min_loudness_dbfs = -42.0,
                                   double sample_rate = 16000.0) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) throw std::runtime_error("ingest_speech: not a directory: " + directory);
  std::vector<std::string> paths;
  for (const auto& e : fs::recursive_directory_iterator(directory)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (e.is_regular_file() && ext == ".wav") paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  SpeechCatalog cat;
  for (const auto& p : paths) {
    Waveform w;
    try {
      w = read_wav(p);
    } catch (const WavError& e) {
      cat.rejected.emplace_back(p, e.what());
      continue;
    }
    if (w.sample_rate != sample_rate) {
      cat.rejected.emplace_back(p, "unsupported rate (" + std::to_string(static_cast<long>(w.sample_rate)) + " Hz)");
      continue;
    }
    if (w.num_channels() != 1) {
      cat.rejected.emplace_back(p, "not mono");
      continue;
    }
    const double level = rms_dbfs(w.channels.front());
    if (!(level >= min_loudness_dbfs)) {
      cat.rejected.emplace_back(p, "below loudness threshold");
      continue;
    }
    cat.entries.push_back({p, w.length(), level});
  }
  if (cat.entries.empty()) throw std::runtime_error("ingest_speech: no qualifying files in " + directory);
  return cat;
}

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t sample_seed(std::uint64_t seed, Split split, std::size_t index) {
  return splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(split) << 48) + index));
}

// ---------------------------------------------------------------------------
// Samples

struct SampleOutput {
  TargetBundle bundle;
  json record;
};

inline json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

/// Renders one scene. Clips are drawn from `catalog` (random offset, zero
/// padded) or, without a catalog, from the synthetic speech generator.
inline SampleOutput build_sample(const SceneSpec& scene, const SceneRanges& ranges, const SpeechCatalog* catalog,
                                 const std::string& id) {
  const std::size_t n = ranges.samples();
  std::mt19937_64 rng(splitmix64(scene.seed ^ 0x5eedULL));
  std::vector<Signal> clips;
  json speech = json::array();
  for (std::size_t k = 0; k < scene.sources.size(); ++k) {
    if (catalog) {
      if (catalog->entries.size() < scene.sources.size())
        throw std::runtime_error("build_sample: catalog smaller than the source count");
      std::uniform_int_distribution<std::size_t> pick(0, catalog->entries.size() - 1);
      const auto& e = catalog->entries[pick(rng)];
      const auto w = read_wav(e.path);
      const auto& x = w.channels.front();
      std::size_t offset = 0;
      if (x.size() > n) offset = std::uniform_int_distribution<std::size_t>(0, x.size() - n)(rng);
      Signal clip(n, 0.0);
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(offset), std::min(n, x.size() - offset), clip.begin());
      if (energy(clip) <= 0.0) throw std::runtime_error("build_sample: silent excerpt from " + e.path);
      speech.push_back({{"file", e.path}, {"offset", offset}});
      clips.push_back(std::move(clip));
    } else {
      const std::uint64_t s = rng();
      speech.push_back({{"synthetic_seed", s}});
      clips.push_back(synthetic_speech(n, s, ranges.sample_rate));
    }
  }

  const auto geometry = ArrayGeometry::compact_uca();
  const auto pattern = ranges.pattern();
  RirOptions opt;
  opt.fs = ranges.sample_rate;
  std::vector<SourceRirs> rirs;
  for (const auto& src : scene.sources)
    rirs.push_back(source_rirs(scene.room, scene.array_center, geometry, src.position, pattern, opt));
  const double beta = beta_from_di(ranges.di_db()).value;
  SampleOutput out;
  out.bundle = render_targets(rirs, clips, beta, {ranges.snr_db, splitmix64(scene.seed ^ 0x4015eULL)});

  json sources = json::array();
  for (std::size_t k = 0; k < scene.sources.size(); ++k) {
    const auto& s = scene.sources[k];
    sources.push_back({{"azimuth_deg", s.azimuth_deg},
                       {"distance", s.distance},
                       {"position", vec_json(s.position)},
                       {"speech", speech[k]}});
  }
  out.record = {{"id", id},
                {"split", to_string(scene.split)},
                {"seed", scene.seed},
                {"room", {{"length", scene.room.length}, {"width", scene.room.width}, {"height", scene.room.height}}},
                {"rt60", scene.room.rt60},
                {"array_center", vec_json(scene.array_center)},
                {"sources", sources},
                {"pattern_order", ranges.pattern_order},
                {"look_azimuth_deg", ranges.look_azimuth},
                {"di_db", ranges.di_db()},
                {"beta", beta},
                {"snr_db", ranges.snr_db},
                {"sample_rate", ranges.sample_rate},
                {"samples", n}};
  return out;
}

/// Seven channels: the four mics, then z_coh, z_diff, z_vdm.
inline Waveform sample_waveform(const TargetBundle& b) {
  Waveform w = b.y_mics;
  w.channels.push_back(b.z_coh);
  w.channels.push_back(b.z_diff);
  w.channels.push_back(b.z_vdm);
  return w;
}

struct StoredSample {
  Waveform mics;
  Signal z_coh, z_diff, z_vdm;
};

inline StoredSample split_sample_waveform(Waveform w) {
  if (w.num_channels() < 4) throw std::runtime_error("sample file: expected mics + 3 target channels");
  StoredSample s;
  s.z_vdm = std::move(w.channels.back());
  w.channels.pop_back();
  s.z_diff = std::move(w.channels.back());
  w.channels.pop_back();
  s.z_coh = std::move(w.channels.back());
  w.channels.pop_back();
  s.mics = std::move(w);
  return s;
}

/// Reads a sample listed in the manifest of `dir`.
inline StoredSample load_sample(const std::string& dir, const json& record) {
  return split_sample_waveform(read_wav((std::filesystem::path(dir) / record.at("wav").get<std::string>()).string()));
}

// ---------------------------------------------------------------------------
// Dataset generation

struct DatasetOptions {
  std::size_t n = 0;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t jobs = 1;
  SceneRanges ranges;
  const SpeechCatalog* catalog = nullptr;
};

struct DatasetResult {
  std::vector<json> records;
  bool complete = true;
  std::string error;
};

inline std::string sample_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06zu", to_string(split).c_str(), index);
  return buf;
}

/// Renders one sample; the manifest record gains the WAV path (relative to
/// the output directory).
inline json generate_one(const DatasetOptions& opt, std::size_t index) {
  const std::uint64_t seed = sample_seed(opt.seed, opt.split, index);
  std::mt19937_64 rng(seed);
  auto scene = sample_scene(rng, opt.split, opt.ranges);
  scene.seed = seed;
  const auto id = sample_id(opt.split, index);
  auto s = build_sample(scene, opt.ranges, opt.catalog, id);
  const std::string wav = id + ".wav";
  const auto dir = std::filesystem::path(opt.out_dir);
  write_wav((dir / wav).string(), sample_waveform(s.bundle), SampleFormat::float32);
  s.record["wav"] = wav;
  s.record["index"] = index;
  std::ofstream side(dir / (id + ".json"));
  side << s.record.dump(2) << '\n';
  if (!side) throw std::runtime_error("cannot write sidecar for " + id);
  return s.record;
}

/// Generates `n` samples with per-sample derived seeds; the manifest is
/// written in index order. On failure the manifest ends with a footer line
/// marking the run partial.
inline DatasetResult gen_dataset(const DatasetOptions& opt) {
  namespace fs = std::filesystem;
  opt.ranges.validate();
  fs::create_directories(opt.out_dir);
  const auto manifest_path = fs::path(opt.out_dir) / "manifest.jsonl";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path.string());

  std::vector<std::optional<json>> slots(opt.n);
  std::vector<std::string> errors(opt.n);
  std::vector<char> done(opt.n, 0);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, std::max<std::size_t>(opt.n, 1)));
  std::size_t alive = jobs;
  auto worker = [&] {
    for (std::size_t i; !failed && (i = next++) < opt.n;) {
      std::optional<json> rec;
      std::string err;
      try {
        rec = generate_one(opt, i);
      } catch (const std::exception& e) {
        err = e.what();
        failed = true;
      }
      std::lock_guard lock(mu);
      slots[i] = std::move(rec);
      errors[i] = std::move(err);
      done[i] = 1;
      cv.notify_all();
    }
    std::lock_guard lock(mu);
    --alive;
    cv.notify_all();
  };
  std::vector<std::thread> threads;
  for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);

  DatasetResult res;
  for (std::size_t i = 0; i < opt.n; ++i) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return done[i] || alive == 0; });
    if (!slots[i]) {
      res.complete = false;
      res.error = sample_id(opt.split, i) + ": " + (done[i] ? errors[i] : std::string("not generated"));
      failed = true;
      break;
    }
    manifest << slots[i]->dump() << '\n';
    manifest.flush();
    if (!manifest) {
      res.complete = false;
      res.error = "manifest write failed";
      failed = true;
      break;
    }
    res.records.push_back(std::move(*slots[i]));
  }
  for (auto& t : threads) t.join();
  if (!res.complete) {
    manifest.clear();
    manifest << json{{"partial", true}, {"completed", res.records.size()}, {"requested", opt.n}, {"error", res.error}}.dump()
             << '\n';
  }
  return res;
}

/// Records of a manifest; a partial-run footer raises.
inline std::vector<json> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    if (j.contains("partial")) throw std::runtime_error("manifest " + path + " marks a partial run: " + j.value("error", ""));
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace vdm
