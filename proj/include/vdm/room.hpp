#pragma once

// Shoebox image-source simulation, cardioid directivity, and far-field
// directivity-pattern probing.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdm/signal.hpp"

namespace vdm {

inline constexpr double kSpeedOfSound = 343.0;
inline constexpr double kDefaultFs = 16000.0;

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  bool operator==(const Vec3&) const = default;
};

struct RoomSpec {
  double length = 8.0;  // x
  double width = 6.0;   // y
  double height = 4.0;  // z
  double rt60 = 0.4;

  double volume() const { return length * width * height; }
  double surface() const { return 2.0 * (length * width + width * height + length * height); }
  bool contains(const Vec3& p, double margin = 0.0) const {
    return p.x > margin && p.x < length - margin && p.y > margin && p.y < width - margin && p.z > margin &&
           p.z < height - margin;
  }
};

/// Uniform-wall reflection coefficient from the Sabine relation.
inline double rt60_to_reflection(const RoomSpec& room) {
  if (!(room.rt60 > 0.0)) throw std::invalid_argument("rt60 must be positive");
  if (std::isinf(room.rt60)) return 1.0;
  const double alpha = 0.161 * room.volume() / (room.surface() * room.rt60);
  if (alpha >= 1.0) throw std::invalid_argument("unachievable RT60 (absorption >= 1)");
  return std::sqrt(1.0 - alpha);
}

/// Center reference microphone plus a three-element UCA in the x-y plane.
struct ArrayGeometry {
  std::vector<Vec3> mics;  // relative to array center; index 0 is the reference
  std::size_t reference = 0;

  static ArrayGeometry compact_uca(double radius = 0.015, std::array<double, 3> azimuths_deg = {30.0, 150.0, 270.0}) {
    ArrayGeometry g;
    g.mics.push_back({0, 0, 0});
    for (double a : azimuths_deg) g.mics.push_back({radius * std::cos(deg2rad(a)), radius * std::sin(deg2rad(a)), 0.0});
    return g;
  }
  std::size_t size() const { return mics.size(); }
  std::vector<Vec3> placed_at(const Vec3& center) const {
    std::vector<Vec3> out;
    for (const auto& m : mics) out.push_back(center + m);
    return out;
  }
};

/// J-th order cardioid with a -30 dB floor. Order 0 is omnidirectional.
struct DirectivityPattern {
  int order = 1;
  double azimuth = deg2rad(30.0);
  double polar = std::numbers::pi / 2.0;
  double floor = 0.03162277660168379;  // 10^(-30/20)

  static DirectivityPattern omni() { return DirectivityPattern{0, 0.0, std::numbers::pi / 2.0, 0.0}; }
};

inline double cardioid_gain(const DirectivityPattern& p, double azimuth, double polar) {
  if (p.order == 0) return 1.0;
  if (p.order < 0) throw std::invalid_argument("cardioid order must be >= 0");
  const double c = std::sin(polar) * std::sin(p.polar) * std::cos(azimuth - p.azimuth) +
                   std::cos(polar) * std::cos(p.polar);
  const double base = 0.5 + 0.5 * c;
  double raw = 1.0;
  for (int j = 0; j < p.order; ++j) raw *= base;
  return std::max(raw, p.floor);
}

struct ImageSource {
  Vec3 position;
  int reflections = 0;
  double attenuation = 1.0;
  double distance = 0.0;
  double azimuth = 0.0;  // incidence direction at the receiver
  double polar = 0.0;
};

using ImageSourceList = std::vector<ImageSource>;

/// Smallest order guaranteeing every image within `max_distance` is listed.
inline int max_order_for_distance(const RoomSpec& room, double max_distance) {
  return static_cast<int>(std::floor(max_distance / room.length) + std::floor(max_distance / room.width) +
                          std::floor(max_distance / room.height)) +
         3;
}

/// Default propagation span of a simulated RIR: 1.5 RT60.
inline double default_rir_seconds(const RoomSpec& room) { return 1.5 * room.rt60; }

/// Lists images up to `max_order` reflections and (optionally) within
/// `max_distance` of the receiver. Entry 0 is the direct path.
/// `reflection` defaults to the Sabine coefficient of `room`.
inline ImageSourceList enumerate_images(const RoomSpec& room, const Vec3& source, const Vec3& receiver, int max_order,
                                        double max_distance = std::numeric_limits<double>::infinity(),
                                        std::optional<double> reflection = std::nullopt) {
  if (!room.contains(source)) throw std::invalid_argument("source outside room");
  if (!room.contains(receiver)) throw std::invalid_argument("receiver outside room");
  if (max_order < 0) throw std::invalid_argument("max_order must be >= 0");
  const double r = reflection ? *reflection : rt60_to_reflection(room);
  if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("reflection coefficient must lie in (0, 1]");
  const std::array<double, 3> dims{room.length, room.width, room.height};
  const std::array<double, 3> s{source.x, source.y, source.z};

  std::array<int, 3> nmax{};
  for (int a = 0; a < 3; ++a) {
    int bound = (max_order + 1) / 2;
    if (std::isfinite(max_distance)) bound = std::min(bound, static_cast<int>(std::ceil(max_distance / (2.0 * dims[a]))) + 1);
    nmax[a] = bound;
  }

  ImageSourceList out;
  auto add = [&](const std::array<int, 3>& n, const std::array<int, 3>& q) {
    int order = 0;
    std::array<double, 3> p{};
    for (int a = 0; a < 3; ++a) {
      order += std::abs(2 * n[a] - q[a]);
      p[a] = (1 - 2 * q[a]) * s[a] + 2.0 * n[a] * dims[a];
    }
    if (order > max_order) return;
    const Vec3 pos{p[0], p[1], p[2]};
    const Vec3 v = pos - receiver;
    const double d = v.norm();
    if (d > max_distance && order > 0) return;
    ImageSource im;
    im.position = pos;
    im.reflections = order;
    im.attenuation = std::pow(r, order);
    im.distance = d;
    im.azimuth = std::atan2(v.y, v.x);
    im.polar = d > 0 ? std::acos(std::clamp(v.z / d, -1.0, 1.0)) : std::numbers::pi / 2.0;
    out.push_back(im);
  };
  add({0, 0, 0}, {0, 0, 0});
  for (int nx = -nmax[0]; nx <= nmax[0]; ++nx)
    for (int ny = -nmax[1]; ny <= nmax[1]; ++ny)
      for (int nz = -nmax[2]; nz <= nmax[2]; ++nz)
        for (int qx = 0; qx <= 1; ++qx)
          for (int qy = 0; qy <= 1; ++qy)
            for (int qz = 0; qz <= 1; ++qz) {
              if (nx == 0 && ny == 0 && nz == 0 && qx == 0 && qy == 0 && qz == 0) continue;
              add({nx, ny, nz}, {qx, qy, qz});
            }
  return out;
}

/// The same images seen from another receiver: distances and incidence
/// angles are recomputed, attenuations kept.
inline ImageSourceList retarget_images(ImageSourceList images, const Vec3& receiver) {
  for (auto& im : images) {
    const Vec3 v = im.position - receiver;
    im.distance = v.norm();
    im.azimuth = std::atan2(v.y, v.x);
    im.polar = im.distance > 0 ? std::acos(std::clamp(v.z / im.distance, -1.0, 1.0)) : std::numbers::pi / 2.0;
  }
  return images;
}

struct ImpulseResponse {
  Signal taps;
  double sample_rate = kDefaultFs;
  std::size_t direct_index = 0;
};

inline constexpr int kFracDelayTaps = 81;
inline constexpr double kMinDistance = 0.1;

namespace detail {

/// Adds `amp` times a Hann-windowed sinc centred at `delay` into each target
/// with its own gain. Integer delays collapse to a single tap.
class FracDelayWriter {
 public:
  FracDelayWriter() {
    for (int k = 0; k < kFracDelayTaps; ++k) {
      const double a = 2.0 * std::numbers::pi * (k - kHalf) / kFracDelayTaps;
      cos_[k] = std::cos(a);
      sin_[k] = std::sin(a);
      sign_[k] = ((k - kHalf) & 1) ? -1.0 : 1.0;
    }
  }

  void write(double delay, std::span<Signal* const> targets, std::span<const double> amps) const {
    const double n0 = std::round(delay);
    const double frac = n0 - delay;  // tap n0 + k sits at x = k + frac from the centre
    const auto len = static_cast<long>(targets.front()->size());
    if (std::abs(frac) < 1e-12) {
      const auto i = static_cast<long>(n0);
      if (i >= 0 && i < len)
        for (std::size_t t = 0; t < targets.size(); ++t) (*targets[t])[static_cast<std::size_t>(i)] += amps[t];
      return;
    }
    const double s = std::sin(std::numbers::pi * frac);
    const double cb = std::cos(2.0 * std::numbers::pi * frac / kFracDelayTaps);
    const double sb = std::sin(2.0 * std::numbers::pi * frac / kFracDelayTaps);
    const long base = static_cast<long>(n0) - kHalf;
    const int k0 = static_cast<int>(std::max(0L, -base));
    const int k1 = static_cast<int>(std::min<long>(kFracDelayTaps, len - base));
    if (k0 >= k1) return;
    std::array<double, kFracDelayTaps> h;
    for (int k = 0; k < kFracDelayTaps; ++k) {
      const double x = (k - kHalf) + frac;
      const double win = 0.5 * (1.0 + cos_[k] * cb - sin_[k] * sb);
      h[k] = sign_[k] * s * win / (std::numbers::pi * x);
    }
    for (std::size_t t = 0; t < targets.size(); ++t) {
      double* out = targets[t]->data() + (base + k0);
      const double a = amps[t];
      for (int k = k0; k < k1; ++k) out[k - k0] += a * h[k];
    }
  }

 private:
  static constexpr int kHalf = kFracDelayTaps / 2;
  std::array<double, kFracDelayTaps> cos_{};
  std::array<double, kFracDelayTaps> sin_{};
  std::array<double, kFracDelayTaps> sign_{};
};

inline const FracDelayWriter& frac_delay_writer() {
  static const FracDelayWriter w;
  return w;
}

}  // namespace detail

/// Renders one RIR per entry of `patterns` from a shared image list
/// (std::nullopt = omnidirectional).
inline std::vector<ImpulseResponse> synth_rirs(const ImageSourceList& images,
                                               std::span<const std::optional<DirectivityPattern>> patterns,
                                               double fs, std::size_t length, double c = kSpeedOfSound) {
  if (images.empty()) throw std::invalid_argument("synth_rir: empty image list");
  if (patterns.empty()) return {};
  std::vector<ImpulseResponse> out(patterns.size());
  std::vector<Signal*> targets;
  for (auto& r : out) {
    r.taps.assign(length, 0.0);
    r.sample_rate = fs;
    r.direct_index = static_cast<std::size_t>(std::lround(fs * images.front().distance / c));
    targets.push_back(&r.taps);
  }
  const auto& writer = detail::frac_delay_writer();
  std::vector<double> amps(patterns.size());
  for (const auto& im : images) {
    const double delay = fs * im.distance / c;
    if (delay - kFracDelayTaps / 2 >= static_cast<double>(length)) continue;
    const double base = im.attenuation / std::max(im.distance, kMinDistance);
    for (std::size_t p = 0; p < patterns.size(); ++p)
      amps[p] = patterns[p] ? base * cardioid_gain(*patterns[p], im.azimuth, im.polar) : base;
    writer.write(delay, targets, amps);
  }
  return out;
}

inline ImpulseResponse synth_rir(const ImageSourceList& images, const std::optional<DirectivityPattern>& pattern,
                                 double fs, std::size_t length, double c = kSpeedOfSound) {
  const std::array<std::optional<DirectivityPattern>, 1> p{pattern};
  return std::move(synth_rirs(images, p, fs, length, c).front());
}

/// RIR length in taps covering `default_rir_seconds` plus the kernel tail.
inline std::size_t default_rir_length(const RoomSpec& room, double fs) {
  return static_cast<std::size_t>(std::ceil(default_rir_seconds(room) * fs)) + kFracDelayTaps;
}

inline ImageSourceList images_for_length(const RoomSpec& room, const Vec3& source, const Vec3& receiver,
                                         std::size_t length, double fs, double c, std::optional<double> reflection) {
  const double reach = c * static_cast<double>(length) / fs;
  return enumerate_images(room, source, receiver, max_order_for_distance(room, reach), reach, reflection);
}

/// Schroeder backward integration in dB, normalized to 0 dB at t = 0.
inline std::vector<double> schroeder_curve(std::span<const double> taps) {
  std::vector<double> edc(taps.size());
  double acc = 0.0;
  for (std::size_t i = taps.size(); i-- > 0;) {
    acc += taps[i] * taps[i];
    edc[i] = acc;
  }
  const double total = edc.empty() ? 0.0 : edc.front();
  for (double& v : edc) v = total > 0 ? 10.0 * std::log10(std::max(v / total, 1e-300)) : -300.0;
  return edc;
}

/// RT60 from a least-squares line through the Schroeder curve between
/// `upper_db` and `lower_db` (T20 by default), extrapolated to -60 dB.
inline double schroeder_rt60(std::span<const double> taps, double fs, double upper_db = -5.0, double lower_db = -25.0) {
  const auto edc = schroeder_curve(taps);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < edc.size(); ++i) {
    if (edc[i] > upper_db || edc[i] < lower_db) continue;
    const double t = static_cast<double>(i) / fs;
    sx += t;
    sy += edc[i];
    sxx += t * t;
    sxy += t * edc[i];
    ++n;
  }
  if (n < 2) throw std::runtime_error("schroeder_rt60: decay range not covered");
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  if (!(slope < 0)) throw std::runtime_error("schroeder_rt60: non-decaying response");
  return -60.0 / slope;
}

/// How wall reflection coefficients are derived from RoomSpec::rt60.
enum class ReflectionModel {
  sabine,      // rt60_to_reflection directly
  calibrated,  // refined so a rendered RIR's Schroeder T20 matches rt60
};

/// Reflection coefficient whose rendered RIR decays with the requested RT60.
///
/// Shoebox image-source responses decay more slowly than the Sabine relation
/// predicts once reflections pile up along the room axes, so the Sabine value
/// is refined with the fixed-point update -ln r <- -ln r * T20 / rt60 on an
/// omnidirectional RIR between a canonical source/receiver pair. The result
/// depends on the room only and is cached.
inline double calibrated_reflection(const RoomSpec& room, double fs = kDefaultFs, double c = kSpeedOfSound) {
  struct Key {
    double l, w, h, rt, fs, c;
    auto operator<=>(const Key&) const = default;
  };
  static std::mutex mu;
  static std::map<Key, double> cache;
  const Key key{room.length, room.width, room.height, room.rt60, fs, c};
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  double r = rt60_to_reflection(room);
  const Vec3 receiver{0.45 * room.length, 0.47 * room.width, 0.42 * room.height};
  const double hop = std::min(1.5, 0.25 * std::min({room.length, room.width, room.height}));
  const Vec3 dir = Vec3{0.8, 0.55, 0.24} * (1.0 / Vec3{0.8, 0.55, 0.24}.norm());
  const Vec3 source = receiver + dir * hop;
  const std::size_t length = default_rir_length(room, fs);
  const auto images = images_for_length(room, source, receiver, length, fs, c, 1.0);
  for (int it = 0; it < 8; ++it) {
    ImageSourceList scaled = images;
    for (auto& im : scaled) im.attenuation = std::pow(r, im.reflections);
    const auto rir = synth_rir(scaled, std::nullopt, fs, length, c);
    double t20 = 0.0;
    try {
      t20 = schroeder_rt60(rir.taps, fs);
    } catch (const std::runtime_error&) {
      break;
    }
    if (std::abs(t20 / room.rt60 - 1.0) < 0.01) break;
    r = std::min(std::exp(std::log(r) * t20 / room.rt60), 1.0 - 1e-9);
  }
  std::lock_guard lock(mu);
  cache.emplace(key, r);
  return r;
}

struct RirOptions {
  double fs = kDefaultFs;
  double c = kSpeedOfSound;
  std::size_t length = 0;  // 0: default_rir_length
  ReflectionModel reflection = ReflectionModel::calibrated;
};

inline double reflection_for(const RoomSpec& room, const RirOptions& opt) {
  return opt.reflection == ReflectionModel::sabine ? rt60_to_reflection(room) : calibrated_reflection(room, opt.fs, opt.c);
}

/// Image enumeration sized to the RIR length, then one RIR per pattern.
inline std::vector<ImpulseResponse> simulate_rirs(const RoomSpec& room, const Vec3& source, const Vec3& receiver,
                                                  std::span<const std::optional<DirectivityPattern>> patterns,
                                                  const RirOptions& opt = {}) {
  const std::size_t length = opt.length ? opt.length : default_rir_length(room, opt.fs);
  const auto images = images_for_length(room, source, receiver, length, opt.fs, opt.c, reflection_for(room, opt));
  return synth_rirs(images, patterns, opt.fs, length, opt.c);
}

/// Far-field arrival time offset of a plane wave from azimuth `theta` (x-y
/// plane) at position `p`, relative to the array origin.
inline double plane_wave_delay(const Vec3& p, double theta, double c = kSpeedOfSound) {
  const Vec3 u{std::cos(theta), std::sin(theta), 0.0};
  return -p.dot(u) / c;
}

// ---------------------------------------------------------------------------
// Directivity probing

struct PatternTable {
  std::vector<double> azimuths_deg;
  std::vector<double> freqs_hz;
  std::vector<std::vector<double>> gain_db;  // [azimuth][freq]
};

/// Multichannel-in, single-channel-out processor. The probe azimuth is passed
/// for analytic reference processors; array processors ignore it.
using ArrayProcessor = std::function<Signal(const Waveform& mics, double probe_azimuth)>;

struct ProbeOptions {
  double seconds = 10.0;
  double fs = kDefaultFs;
  std::uint64_t seed = 1;
  double c = kSpeedOfSound;
};

/// Plane-wave white-noise probe of `geometry` from `theta`, delays applied
/// exactly in the frequency domain (circular, the probe is periodic).
inline Waveform plane_wave_probe(const ArrayGeometry& geometry, double theta, std::span<const double> noise, double fs,
                                 double c = kSpeedOfSound) {
  const std::size_t n = noise.size();
  const auto& fft = fft_for(n);
  std::vector<cplx> spec(fft.bins());
  fft.forward(noise.data(), spec.data());
  Waveform out(fs, geometry.size(), n);
  std::vector<cplx> shifted(spec.size());
  for (std::size_t q = 0; q < geometry.size(); ++q) {
    const double tau = plane_wave_delay(geometry.mics[q], theta, c);
    for (std::size_t k = 0; k < spec.size(); ++k) {
      const double f = fs * static_cast<double>(k) / static_cast<double>(n);
      shifted[k] = spec[k] * std::polar(1.0, -2.0 * std::numbers::pi * f * tau);
    }
    if (n % 2 == 0) shifted.back() = 0.0;
    fft.inverse(shifted.data(), out.channels[q].data());
    for (double& v : out.channels[q]) v /= static_cast<double>(n);
  }
  return out;
}

inline std::vector<double> welch_psd(std::span<const double> x, const StftConfig& cfg) {
  const auto s = stft(x, cfg);
  std::vector<double> psd(s.bins, 0.0);
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t f = 0; f < s.bins; ++f) psd[f] += std::norm(s(t, f));
  for (double& v : psd) v /= static_cast<double>(s.frames);
  return psd;
}

inline PatternTable measure_pattern(const ArrayProcessor& processor, const ArrayGeometry& geometry,
                                    std::span<const double> azimuths_deg, std::span<const double> freqs_hz,
                                    const ProbeOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(std::llround(opt.seconds * opt.fs));
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  Signal noise(n);
  for (double& v : noise) v = gauss(rng);

  const StftConfig cfg;
  PatternTable table;
  table.azimuths_deg.assign(azimuths_deg.begin(), azimuths_deg.end());
  table.freqs_hz.assign(freqs_hz.begin(), freqs_hz.end());
  for (double az : azimuths_deg) {
    const auto mics = plane_wave_probe(geometry, deg2rad(az), noise, opt.fs, opt.c);
    const auto out = processor(mics, deg2rad(az));
    if (out.size() != n) throw std::runtime_error("measure_pattern: processor changed signal length");
    const auto ref_psd = welch_psd(mics.channels[geometry.reference], cfg);
    const auto out_psd = welch_psd(out, cfg);
    std::vector<double> row;
    for (double f : freqs_hz) {
      const auto k = static_cast<std::size_t>(std::lround(f / opt.fs * static_cast<double>(cfg.fft_size())));
      const auto kk = std::min(k, cfg.bins() - 1);
      row.push_back(10.0 * std::log10(std::max(out_psd[kk], 1e-300) / std::max(ref_psd[kk], 1e-300)));
    }
    table.gain_db.push_back(std::move(row));
  }
  return table;
}

inline std::vector<double> azimuth_grid(double step_deg) {
  std::vector<double> g;
  for (double a = 0.0; a < 360.0 - 1e-9; a += step_deg) g.push_back(a);
  return g;
}

}  // namespace vdm
