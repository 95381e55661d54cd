#pragma once

// Coherent/diffuse target construction by RIR windowing, mixture rendering
// with sensor noise, and oracle masks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vdm/mask.hpp"
#include "vdm/room.hpp"
#include "vdm/signal.hpp"

namespace vdm {

inline constexpr std::size_t kDefaultFade = 960;  // 60 ms at 16 kHz

struct WindowSpec {
  std::size_t direct_index = 0;  // Delta
  std::size_t fade = kDefaultFade;  // L
  std::size_t length = 0;           // K
};

/// 1 before the direct path, the falling half of a length-2L periodic Hann
/// over the next L taps, 0 afterwards.
inline std::vector<double> coh_window(const WindowSpec& spec) {
  if (spec.direct_index + spec.fade > spec.length) throw std::invalid_argument("coh_window: direct index + fade exceeds RIR length");
  std::vector<double> w(spec.length, 0.0);
  std::fill(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(spec.direct_index), 1.0);
  const double fade = static_cast<double>(spec.fade);
  for (std::size_t k = 0; k < spec.fade; ++k)
    w[spec.direct_index + k] = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(k) / fade));
  return w;
}

inline std::vector<double> inv_window(std::span<const double> w) {
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = 1.0 - w[i];
  return out;
}

struct SplitRirs {
  ImpulseResponse coh;
  ImpulseResponse diff;
};

/// Head of the directional RIR and tail of the omnidirectional reference RIR,
/// both cut at the directional RIR's direct-path index.
inline SplitRirs split_rirs(const ImpulseResponse& rir_vdm, const ImpulseResponse& rir_omni_ref,
                            std::size_t fade = kDefaultFade) {
  if (rir_vdm.taps.size() != rir_omni_ref.taps.size()) throw std::invalid_argument("split_rirs: length mismatch");
  if (rir_vdm.sample_rate != rir_omni_ref.sample_rate) throw std::invalid_argument("split_rirs: sample rate mismatch");
  const auto w = coh_window({rir_vdm.direct_index, fade, rir_vdm.taps.size()});
  SplitRirs s{rir_vdm, rir_omni_ref};
  for (std::size_t k = 0; k < w.size(); ++k) {
    s.coh.taps[k] = rir_vdm.taps[k] * w[k];
    s.diff.taps[k] = rir_omni_ref.taps[k] * (1.0 - w[k]);
  }
  return s;
}

struct Beta {
  double di_db = 0.0;
  double value = 1.0;
};

inline Beta beta_from_di(double di_db) { return {di_db, std::pow(10.0, -di_db / 20.0)}; }

/// Analytic directivity index of the floored cardioid in a 3-D diffuse field
/// (on-axis power over the sphere-averaged power), by midpoint quadrature.
inline double directivity_index_db(const DirectivityPattern& p, int grid = 720) {
  double acc = 0.0, weight = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double polar = std::numbers::pi * (i + 0.5) / grid;
    for (int j = 0; j < 2 * grid; ++j) {
      const double az = std::numbers::pi * (j + 0.5) / grid;
      const double g = cardioid_gain(p, az, polar);
      acc += g * g * std::sin(polar);
      weight += std::sin(polar);
    }
  }
  return -10.0 * std::log10(acc / weight);
}

/// Per-source RIRs: omnidirectional to each microphone, and the
/// directivity-weighted response at the reference position.
struct SourceRirs {
  std::vector<ImpulseResponse> mics;
  ImpulseResponse vdm;
};

/// RIRs from `source` to every mic of `geometry` placed at `center`, plus the
/// directional response at the reference mic (shares its image list).
inline SourceRirs source_rirs(const RoomSpec& room, const Vec3& center, const ArrayGeometry& geometry,
                              const Vec3& source, const DirectivityPattern& pattern, const RirOptions& opt = {}) {
  const auto positions = geometry.placed_at(center);
  SourceRirs out;
  out.mics.resize(positions.size());
  for (std::size_t q = 0; q < positions.size(); ++q) {
    if (q == geometry.reference) {
      const std::array<std::optional<DirectivityPattern>, 2> pats{
          std::nullopt, pattern.order == 0 ? std::nullopt : std::optional<DirectivityPattern>(pattern)};
      auto both = simulate_rirs(room, source, positions[q], pats, opt);
      out.mics[q] = std::move(both[0]);
      out.vdm = std::move(both[1]);
    } else {
      const std::array<std::optional<DirectivityPattern>, 1> omni{};
      out.mics[q] = std::move(simulate_rirs(room, source, positions[q], omni, opt).front());
    }
  }
  return out;
}

struct NoiseOptions {
  std::optional<double> snr_db = 30.0;  // nullopt: no sensor noise
  std::uint64_t seed = 0;
};

struct TargetBundle {
  Waveform y_mics;  // Q channels, reference first
  Signal z_coh;
  Signal z_diff;
  Signal z_vdm;
  double beta = 1.0;
  Waveform noise;            // sensor noise as added to y_mics
  std::vector<Signal> src_coh;   // per-source coherent parts
  std::vector<Signal> src_diff;  // per-source diffuse parts

  std::size_t num_mics() const { return y_mics.num_channels(); }
  std::size_t length() const { return z_vdm.size(); }
};

/// Convolves every source with its RIRs; mixtures get spatially white
/// Gaussian noise at `noise.snr_db` relative to the clean reference-mic
/// mixture. The realized noise is rescaled per channel so the SNR is exact.
inline TargetBundle render_targets(std::span<const SourceRirs> rirs, std::span<const Signal> sources, double beta,
                                   const NoiseOptions& noise = {}, std::size_t fade = kDefaultFade) {
  if (rirs.empty() || rirs.size() != sources.size()) throw std::invalid_argument("render_targets: source/RIR count mismatch");
  const std::size_t q_count = rirs.front().mics.size();
  const std::size_t n = sources.front().size();
  const double fs = rirs.front().vdm.sample_rate;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (sources[s].size() != n) throw std::invalid_argument("render_targets: sources differ in length");
    if (energy(sources[s]) <= 0.0) throw std::invalid_argument("render_targets: zero-energy source");
    if (rirs[s].mics.size() != q_count || q_count == 0) throw std::invalid_argument("render_targets: inconsistent mic count");
  }

  TargetBundle b;
  b.beta = beta;
  b.y_mics = Waveform(fs, q_count, n);
  b.z_coh.assign(n, 0.0);
  b.z_diff.assign(n, 0.0);
  b.z_vdm.assign(n, 0.0);
  auto add = [](Signal& acc, const Signal& x) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
  };
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& r = rirs[s];
    const auto split = split_rirs(r.vdm, r.mics.front(), fade);
    std::size_t kmax = std::max({r.vdm.taps.size(), split.coh.taps.size(), split.diff.taps.size()});
    for (const auto& m : r.mics) kmax = std::max(kmax, m.taps.size());
    const Convolver conv(sources[s], kmax);
    for (std::size_t q = 0; q < q_count; ++q) add(b.y_mics.channels[q], conv.apply(r.mics[q].taps, n));
    add(b.z_vdm, conv.apply(r.vdm.taps, n));
    b.src_coh.push_back(conv.apply(split.coh.taps, n));
    b.src_diff.push_back(conv.apply(split.diff.taps, n));
    add(b.z_coh, b.src_coh.back());
    add(b.z_diff, b.src_diff.back());
  }

  b.noise = Waveform(fs, q_count, n);
  if (noise.snr_db) {
    const double ref_energy = energy(b.y_mics.channels.front());
    const double target = ref_energy / std::pow(10.0, *noise.snr_db / 10.0);
    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t q = 0; q < q_count; ++q) {
      auto& v = b.noise.channels[q];
      for (double& x : v) x = gauss(rng);
      const double scale = std::sqrt(target / energy(v));
      for (double& x : v) x *= scale;
      add(b.y_mics.channels[q], v);
    }
  }
  return b;
}

inline constexpr double kMaskBound = 1.0;

/// Ideal complex masks Z / Y1 with a phase-aligned regularizer
/// eps = eps_rel * median|Y1|; each component is clipped to +-`bound`.
inline MaskPair oracle_masks(const ComplexSpectrogram& y_ref, const ComplexSpectrogram& z_coh,
                             const ComplexSpectrogram& z_diff, double eps_rel = 1e-8, double bound = kMaskBound) {
  if (!y_ref.same_shape(z_coh) || !y_ref.same_shape(z_diff)) throw std::invalid_argument("oracle_masks: shape mismatch");
  std::vector<double> mags(y_ref.data.size());
  for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::abs(y_ref.data[i]);
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2), mags.end());
  const double eps = eps_rel * mags[mags.size() / 2];

  auto clip = [bound](cplx m) {
    return cplx(std::clamp(m.real(), -bound, bound), std::clamp(m.imag(), -bound, bound));
  };
  MaskPair m{ComplexSpectrogram::zeros_like(y_ref), ComplexSpectrogram::zeros_like(y_ref)};
  for (std::size_t i = 0; i < y_ref.data.size(); ++i) {
    const cplx y = y_ref.data[i];
    const double mag = std::abs(y);
    const cplx phase = mag > 0.0 ? y / mag : cplx(1.0, 0.0);
    const cplx denom = y + eps * phase;
    if (std::abs(denom) == 0.0) continue;
    m.coh.data[i] = clip(z_coh.data[i] / denom);
    m.diff.data[i] = clip(z_diff.data[i] / denom);
  }
  return m;
}

}  // namespace vdm
