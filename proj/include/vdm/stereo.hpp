#pragma once

// Moving-source rendering, steering by channel swap, coincident-pair stereo
// from two virtual directional microphones, and the segmental level report.

#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdm/config.hpp"
#include "vdm/mask.hpp"
#include "vdm/metrics.hpp"
#include "vdm/ndf.hpp"
#include "vdm/room.hpp"
#include "vdm/targets.hpp"

namespace vdm {

/// Constant-distance arc in the horizontal plane through the array centre;
/// the azimuth moves linearly from start to end over the duration.
struct Trajectory {
  double start_deg = 180.0;
  double end_deg = 0.0;
  double duration = 12.0;
  double distance = 1.5;
  double hop = 0.05;   // seconds the source stays frozen
  double fade = 0.01;  // raised-cosine crossfade between hops

  double azimuth_deg_at(double t) const {
    const double u = duration > 0.0 ? std::clamp(t / duration, 0.0, 1.0) : 0.0;
    return start_deg + (end_deg - start_deg) * u;
  }
};

struct StereoScene {
  RoomSpec room{6.0, 4.0, 3.5, 0.5};
  Vec3 center{3.0, 2.0, 1.5};
  Trajectory trajectory;
  double fs = kDefaultFs;
  int pattern_order = 1;
  double left_look = 150.0;
  double right_look = 30.0;
  std::optional<double> snr_db;  // sensor noise on the mics; none by default

  ConfigSchema schema() {
    ConfigSchema s;
    s.bind("room_length", room.length).bind("room_width", room.width).bind("room_height", room.height);
    s.bind("rt60", room.rt60);
    s.bind("center_x", center.x).bind("center_y", center.y).bind("center_z", center.z);
    s.bind("start_deg", trajectory.start_deg).bind("end_deg", trajectory.end_deg);
    s.bind("duration", trajectory.duration).bind("distance", trajectory.distance);
    s.bind("hop", trajectory.hop).bind("fade", trajectory.fade);
    s.bind("pattern_order", pattern_order);
    return s;
  }

  std::size_t samples() const { return static_cast<std::size_t>(std::llround(trajectory.duration * fs)); }
  std::size_t hop_samples() const { return static_cast<std::size_t>(std::llround(trajectory.hop * fs)); }
  std::size_t fade_samples() const { return static_cast<std::size_t>(std::llround(trajectory.fade * fs)); }
  DirectivityPattern look_pattern(double look_deg) const { return DirectivityPattern{pattern_order, deg2rad(look_deg)}; }
};

/// Per-look targets at the reference position.
struct LookTargets {
  double look_deg = 0.0;
  Signal z_coh, z_diff, z_vdm;
};

struct MovingScene {
  Waveform mics;  // all array channels, or only the reference when rendered without the array
  LookTargets left, right;
  std::vector<double> hop_azimuth_deg;
  std::vector<Vec3> hop_position;
};

/// Crossfade weights of hop `h`: 1 inside the hop, raised-cosine ramps of
/// `fade` samples centred on its boundaries. Weights of all hops sum to one.
inline double hop_weight(std::size_t h, std::size_t hops, std::size_t hop, std::size_t fade, std::size_t t) {
  const double x = static_cast<double>(t) + 0.5;
  const double half = 0.5 * static_cast<double>(fade);
  auto rise = [&](double boundary) {
    if (fade == 0) return x >= boundary ? 1.0 : 0.0;
    const double u = (x - (boundary - half)) / static_cast<double>(fade);
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    return 0.5 - 0.5 * std::cos(std::numbers::pi * u);
  };
  const double start = static_cast<double>(h * hop), end = static_cast<double>((h + 1) * hop);
  const double up = h == 0 ? 1.0 : rise(start);
  const double down = h + 1 == hops ? 1.0 : 1.0 - rise(end);
  return up * down;
}

/// Piecewise-static rendering: within each hop the source is frozen at the
/// trajectory position of the hop centre; crossfaded source segments are
/// convolved with that hop's RIRs and overlap-added.
inline MovingScene render_moving_scene(const StereoScene& sc, std::span<const double> speech, bool full_array = true,
                                       std::uint64_t noise_seed = 0) {
  const std::size_t n = sc.samples();
  const std::size_t hop = sc.hop_samples(), fade = sc.fade_samples();
  if (n == 0 || hop == 0) throw std::invalid_argument("render_moving_scene: duration and hop must be positive");
  if (fade > hop) throw std::invalid_argument("render_moving_scene: fade longer than a hop");
  if (speech.size() < n) throw std::invalid_argument("render_moving_scene: speech shorter than the trajectory");
  if (!sc.room.contains(sc.center)) throw std::invalid_argument("render_moving_scene: array centre outside room");
  const std::size_t hops = (n + hop - 1) / hop;

  const auto geometry = ArrayGeometry::compact_uca();
  const auto positions = geometry.placed_at(sc.center);
  const std::size_t q_count = full_array ? geometry.size() : 1;
  MovingScene out;
  out.mics = Waveform(sc.fs, q_count, n);
  out.left = {sc.left_look, Signal(n, 0.0), Signal(n, 0.0), Signal(n, 0.0)};
  out.right = {sc.right_look, Signal(n, 0.0), Signal(n, 0.0), Signal(n, 0.0)};

  const std::size_t length = default_rir_length(sc.room, sc.fs);
  double radius = 0.0;
  for (const auto& m : geometry.mics) radius = std::max(radius, m.norm());
  const double reach = kSpeedOfSound * static_cast<double>(length) / sc.fs + radius;
  const double reflection = calibrated_reflection(sc.room, sc.fs);
  const std::array<std::optional<DirectivityPattern>, 3> ref_patterns{
      std::nullopt, sc.look_pattern(sc.left_look), sc.look_pattern(sc.right_look)};
  const std::array<std::optional<DirectivityPattern>, 1> omni{};

  for (std::size_t h = 0; h < hops; ++h) {
    const double t_mid = (static_cast<double>(h * hop) + 0.5 * static_cast<double>(std::min(hop, n - h * hop))) / sc.fs;
    const double az = sc.trajectory.azimuth_deg_at(t_mid);
    const Vec3 src = sc.center + Vec3{std::cos(deg2rad(az)), std::sin(deg2rad(az)), 0.0} * sc.trajectory.distance;
    if (!sc.room.contains(src)) throw std::invalid_argument("render_moving_scene: trajectory leaves the room");
    out.hop_azimuth_deg.push_back(az);
    out.hop_position.push_back(src);

    const auto images = enumerate_images(sc.room, src, positions[geometry.reference], max_order_for_distance(sc.room, reach),
                                         reach, reflection);
    const auto ref = synth_rirs(images, ref_patterns, sc.fs, length);
    std::vector<const ImpulseResponse*> mic_rirs(q_count, &ref[0]);
    std::vector<ImpulseResponse> others;
    others.reserve(q_count);
    for (std::size_t q = 0; q < q_count; ++q)
      if (q != geometry.reference) {
        others.push_back(std::move(synth_rirs(retarget_images(images, positions[q]), omni, sc.fs, length).front()));
        mic_rirs[q] = &others.back();
      }
    const auto split_l = split_rirs(ref[1], ref[0]);
    const auto split_r = split_rirs(ref[2], ref[0]);

    const std::size_t seg_begin = h == 0 ? 0 : h * hop - fade / 2;
    const std::size_t seg_end = std::min(n, (h + 1) * hop + (fade - fade / 2));
    Signal seg(seg_end - seg_begin);
    for (std::size_t i = 0; i < seg.size(); ++i)
      seg[i] = speech[seg_begin + i] * hop_weight(h, hops, hop, fade, seg_begin + i);
    const Convolver conv(seg, length);
    const std::size_t span_len = std::min(n - seg_begin, seg.size() + length - 1);
    auto add = [&](Signal& acc, const ImpulseResponse& rir) {
      const auto y = conv.apply(rir.taps, span_len);
      for (std::size_t i = 0; i < span_len; ++i) acc[seg_begin + i] += y[i];
    };
    for (std::size_t q = 0; q < q_count; ++q) add(out.mics.channels[q], *mic_rirs[q]);
    add(out.left.z_vdm, ref[1]);
    add(out.right.z_vdm, ref[2]);
    add(out.left.z_coh, split_l.coh);
    add(out.right.z_coh, split_r.coh);
    add(out.left.z_diff, split_l.diff);
    add(out.right.z_diff, split_r.diff);
  }

  if (sc.snr_db) {
    const double target = energy(out.mics.channels.front()) / std::pow(10.0, *sc.snr_db / 10.0);
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& ch : out.mics.channels) {
      Signal v(n);
      for (double& x : v) x = gauss(rng);
      const double scale = std::sqrt(target / energy(v));
      for (std::size_t i = 0; i < n; ++i) ch[i] += scale * v[i];
    }
  }
  return out;
}

/// Presents a look direction to a processor trained for the 30-degree
/// element by mirroring the array about the 90-degree axis: channel order
/// (ref, uca@30, uca@150, uca@270); look 150 exchanges the middle two.
inline Waveform steer_by_swap(const Waveform& mics, double look_deg) {
  if (mics.num_channels() != 4) throw std::invalid_argument("steer_by_swap: expected 4 channels");
  if (look_deg == 30.0) return mics;
  if (look_deg == 150.0) {
    Waveform out = mics;
    std::swap(out.channels[1], out.channels[2]);
    return out;
  }
  throw std::invalid_argument("steer_by_swap: unsupported look direction " + std::to_string(look_deg));
}

enum class StereoMode { oracle, ideal_vdm, model };

inline StereoMode parse_stereo_mode(const std::string& s) {
  if (s == "oracle") return StereoMode::oracle;
  if (s == "ideal-vdm") return StereoMode::ideal_vdm;
  if (s == "model") return StereoMode::model;
  throw std::invalid_argument("unknown stereo mode: " + s);
}

/// Coherent and diffuse estimates of one look; the output is coh + beta diff.
struct LookEstimate {
  Signal coh, diff;

  Signal mix(double beta) const {
    Signal y(coh.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = coh[i] + beta * diff[i];
    return y;
  }
};

struct StereoEstimates {
  LookEstimate left, right;
};

inline LookEstimate oracle_look(const Signal& y_ref, const LookTargets& t, const StftConfig& cfg) {
  const auto y = stft(y_ref, cfg);
  const auto masks = oracle_masks(y, stft(t.z_coh, cfg), stft(t.z_diff, cfg));
  const auto est = apply_and_combine(masks, y, 0.0);
  const std::size_t n = y_ref.size();
  auto cut = [n](Signal s) {
    s.resize(n);
    return s;
  };
  return {cut(istft(est.coh, cfg)), cut(istft(est.diff, cfg))};
}

/// Per-look estimates. Oracle: ideal masks from the rendered targets.
/// Ideal-VDM: the analytic cardioid signal (no diffuse part, beta inert).
/// Model: the network on the steered channels; requires `params`.
inline StereoEstimates stereo_estimates(StereoMode mode, const MovingScene& scene, const StftConfig& cfg = StftConfig(),
                                        const NetworkParams* params = nullptr) {
  const std::size_t n = scene.mics.length();
  StereoEstimates e;
  switch (mode) {
    case StereoMode::oracle:
      e.left = oracle_look(scene.mics.channels.front(), scene.left, cfg);
      e.right = oracle_look(scene.mics.channels.front(), scene.right, cfg);
      break;
    case StereoMode::ideal_vdm:
      e.left = {scene.left.z_vdm, Signal(n, 0.0)};
      e.right = {scene.right.z_vdm, Signal(n, 0.0)};
      break;
    case StereoMode::model: {
      if (!params) throw std::invalid_argument("stereo: model mode needs a checkpoint");
      auto run = [&](double look) {
        const auto r = infer(*params, steer_by_swap(scene.mics, look), 0.0, cfg);
        LookEstimate le{r.coh, r.diff};
        le.coh.resize(n);
        le.diff.resize(n);
        return le;
      };
      e.left = run(scene.left.look_deg);
      e.right = run(scene.right.look_deg);
      break;
    }
  }
  return e;
}

struct StereoPair {
  Signal left, right;

  Waveform waveform(double fs) const { return Waveform(fs, {left, right}); }
};

inline StereoPair stereo_render(const StereoEstimates& e, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("stereo: beta must lie in [0, 1]");
  return {e.left.mix(beta), e.right.mix(beta)};
}

inline constexpr double kIldSegment = 0.25;
inline constexpr double kIldHop = 0.125;

inline LevelCurve ild_report(std::span<const double> left, std::span<const double> right, double fs = kDefaultFs,
                             double segment = kIldSegment, double hop = kIldHop) {
  return segmental_level_diff(left, right, static_cast<std::size_t>(std::llround(segment * fs)),
                              static_cast<std::size_t>(std::llround(hop * fs)), fs);
}

inline void write_ild_csv(std::ostream& os, const LevelCurve& c) {
  os << "time_s,ild_db_left_minus_right\n";
  os.precision(10);
  for (std::size_t i = 0; i < c.db.size(); ++i) os << c.start_seconds[i] << ',' << c.db[i] << '\n';
}

/// Mean |a - b| over segments.
inline double mean_abs_difference(const LevelCurve& a, const LevelCurve& b) {
  if (a.db.size() != b.db.size() || a.db.empty()) throw std::invalid_argument("mean_abs_difference: curve mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.db.size(); ++i) s += std::abs(a.db[i] - b.db[i]);
  return s / static_cast<double>(a.db.size());
}

inline double mean_abs(const LevelCurve& c) {
  if (c.db.empty()) throw std::invalid_argument("mean_abs: empty curve");
  double s = 0.0;
  for (double v : c.db) s += std::abs(v);
  return s / static_cast<double>(c.db.size());
}

/// Time (segment centre, seconds) where a least-squares line through the
/// curve crosses zero.
inline double zero_crossing_time(const LevelCurve& c, double segment = kIldSegment) {
  const std::size_t m = c.db.size();
  if (m < 2) throw std::invalid_argument("zero_crossing_time: need at least two segments");
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = c.start_seconds[i] + 0.5 * segment;
    st += t, sy += c.db[i], stt += t * t, sty += t * c.db[i];
  }
  const double slope = (m * sty - st * sy) / (m * stt - st * st);
  const double icpt = (sy - slope * st) / m;
  if (slope == 0.0) throw std::runtime_error("zero_crossing_time: flat curve");
  return -icpt / slope;
}

}  // namespace vdm
