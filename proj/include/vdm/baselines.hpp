#pragma once

// Far-field steering vectors, a two-element null-constrained differential
// beamformer, and the analytic (ideal) virtual directional microphone.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "vdm/room.hpp"
#include "vdm/signal.hpp"

namespace vdm {

struct SteeringVector {
  double azimuth = 0.0;
  double freq = 0.0;
  std::vector<cplx> entries;
};

/// entry_q = exp(-j 2 pi f tau_q), tau_q the plane-wave delay at mic q.
inline SteeringVector steering(const ArrayGeometry& g, double azimuth, double freq, double c = kSpeedOfSound) {
  if (freq < 0.0) throw std::invalid_argument("steering: negative frequency");
  SteeringVector d{azimuth, freq, {}};
  for (const auto& p : g.mics)
    d.entries.push_back(std::polar(1.0, -2.0 * std::numbers::pi * freq * plane_wave_delay(p, azimuth, c)));
  return d;
}

struct BeamWeights {
  double target = 0.0;
  double null = 0.0;
  std::vector<double> freqs;
  std::vector<std::vector<cplx>> w;  // [freq][mic], zeros on unused mics

  cplx response(const ArrayGeometry& g, std::size_t fi, double azimuth, double c = kSpeedOfSound) const {
    const auto d = steering(g, azimuth, freqs[fi], c);
    cplx r = 0.0;
    for (std::size_t q = 0; q < d.entries.size(); ++q) r += std::conj(w[fi][q]) * d.entries[q];
    return r;
  }
  /// 1 / |w|^2 for a distortionless design.
  double white_noise_gain(std::size_t fi) const {
    double n = 0.0;
    for (const auto& v : w[fi]) n += std::norm(v);
    return 1.0 / n;
  }

  void write_csv(std::ostream& os) const {
    os << "freq_hz";
    const std::size_t q_count = w.empty() ? 0 : w.front().size();
    for (std::size_t q = 0; q < q_count; ++q) os << ",re_" << q + 1 << ",im_" << q + 1;
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < freqs.size(); ++i) {
      os << freqs[i];
      for (const auto& v : w[i]) os << ',' << v.real() << ',' << v.imag();
      os << '\n';
    }
  }
};

/// Per frequency, solves [d_t^H; d_n^H] w = [1; 0] on the chosen mic pair as
/// the minimum-norm solution A^H (A A^H)^{-1} b. A Tikhonov ridge of `ridge`
/// times trace(A A^H) is added only where det / trace^2 falls below `ridge`.
/// At DC the two constraints coincide and the first mic of the pair is passed
/// through.
inline BeamWeights dma_design(const ArrayGeometry& g, std::array<std::size_t, 2> pair, double target, double null,
                              std::span<const double> freqs, double ridge = 1e-6, double c = kSpeedOfSound) {
  if (pair[0] == pair[1] || pair[0] >= g.size() || pair[1] >= g.size()) throw std::invalid_argument("dma_design: invalid mic pair");
  const double dt = plane_wave_delay(g.mics[pair[0]], target, c) - plane_wave_delay(g.mics[pair[1]], target, c);
  const double dn = plane_wave_delay(g.mics[pair[0]], null, c) - plane_wave_delay(g.mics[pair[1]], null, c);
  if (std::abs(dt - dn) < 1e-12) throw std::invalid_argument("dma_design: target and null are indistinguishable for this pair");

  BeamWeights bw{target, null, {freqs.begin(), freqs.end()}, {}};
  for (double f : freqs) {
    std::vector<cplx> w(g.size(), 0.0);
    if (f == 0.0) {
      w[pair[0]] = 1.0;
      bw.w.push_back(std::move(w));
      continue;
    }
    const auto st = steering(g, target, f, c);
    const auto sn = steering(g, null, f, c);
    // A = rows conj(d) over the pair.
    const cplx a00 = std::conj(st.entries[pair[0]]), a01 = std::conj(st.entries[pair[1]]);
    const cplx a10 = std::conj(sn.entries[pair[0]]), a11 = std::conj(sn.entries[pair[1]]);
    // G = A A^H (Hermitian 2x2) + delta I.
    const cplx g00 = a00 * std::conj(a00) + a01 * std::conj(a01);
    const cplx g01 = a00 * std::conj(a10) + a01 * std::conj(a11);
    const cplx g11 = a10 * std::conj(a10) + a11 * std::conj(a11);
    const double trace = g00.real() + g11.real();
    const double det0 = (g00 * g11 - g01 * std::conj(g01)).real();
    const double delta = det0 < ridge * trace * trace ? ridge * trace : 0.0;
    const cplx h00 = g00 + delta, h11 = g11 + delta, h01 = g01, h10 = std::conj(g01);
    const cplx det = h00 * h11 - h01 * h10;
    if (std::abs(det) == 0.0) throw std::runtime_error("dma_design: singular system");
    // y = G^{-1} [1, 0]
    const cplx y0 = h11 / det, y1 = -h10 / det;
    // w_pair = A^H y
    w[pair[0]] = std::conj(a00) * y0 + std::conj(a10) * y1;
    w[pair[1]] = std::conj(a01) * y0 + std::conj(a11) * y1;
    bw.w.push_back(std::move(w));
  }
  return bw;
}

/// Frequencies of the one-sided STFT bins.
inline std::vector<double> bin_frequencies(const StftConfig& cfg, double fs) {
  std::vector<double> f(cfg.bins());
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = fs * static_cast<double>(k) / static_cast<double>(cfg.fft_size());
  return f;
}

/// out(t, f) = w(f)^H y(t, f)
inline ComplexSpectrogram apply_beamformer(const BeamWeights& bw, std::span<const ComplexSpectrogram> channels) {
  if (channels.empty()) throw std::invalid_argument("apply_beamformer: no channels");
  const auto& first = channels.front();
  if (bw.w.size() != first.bins) throw std::invalid_argument("apply_beamformer: weights/bins mismatch");
  for (const auto& ch : channels)
    if (!ch.same_shape(first)) throw std::invalid_argument("apply_beamformer: channel shape mismatch");
  if (bw.w.front().size() != channels.size()) throw std::invalid_argument("apply_beamformer: channel count mismatch");
  auto out = ComplexSpectrogram::zeros_like(first);
  for (std::size_t t = 0; t < first.frames; ++t)
    for (std::size_t f = 0; f < first.bins; ++f) {
      cplx acc = 0.0;
      for (std::size_t q = 0; q < channels.size(); ++q) acc += std::conj(bw.w[f][q]) * channels[q](t, f);
      out(t, f) = acc;
    }
  return out;
}

inline Signal beamform(const BeamWeights& bw, const Waveform& mics, const StftConfig& cfg) {
  std::vector<ComplexSpectrogram> specs;
  for (const auto& ch : mics.channels) specs.push_back(stft(ch, cfg));
  return istft(apply_beamformer(bw, specs), cfg);
}

/// First-order DMA pointed at `target` with its null opposite, on the
/// reference mic and the UCA element closest to the target.
inline BeamWeights default_dma(const ArrayGeometry& g, double target, const StftConfig& cfg, double fs = kDefaultFs) {
  std::size_t best = 1;
  double best_cos = -2.0;
  for (std::size_t q = 0; q < g.size(); ++q) {
    if (q == g.reference) continue;
    const double cs = std::cos(std::atan2(g.mics[q].y, g.mics[q].x) - target);
    if (cs > best_cos) {
      best_cos = cs;
      best = q;
    }
  }
  const auto freqs = bin_frequencies(cfg, fs);
  return dma_design(g, {g.reference, best}, target, target + std::numbers::pi, freqs);
}

/// Reference channel scaled by the pattern gain of the probe direction.
inline ArrayProcessor analytic_processor(const DirectivityPattern& pattern, std::size_t reference = 0) {
  return [pattern, reference](const Waveform& mics, double azimuth) {
    Signal y = mics.channels.at(reference);
    const double g = cardioid_gain(pattern, azimuth, std::numbers::pi / 2.0);
    for (double& v : y) v *= g;
    return y;
  };
}

inline ArrayProcessor beamformer_processor(const BeamWeights& bw, const StftConfig& cfg = StftConfig()) {
  return [bw, cfg](const Waveform& mics, double) {
    auto y = beamform(bw, mics, cfg);
    y.resize(mics.length());
    return y;
  };
}

/// One row per azimuth: azimuth_deg, the floored cardioid reference in dB,
/// then the measured gain at each frequency.
inline void write_pattern_csv(std::ostream& os, const PatternTable& t, const DirectivityPattern& reference) {
  os << "azimuth_deg,expected_db";
  for (double f : t.freqs_hz) os << ",gain_db_" << f << "hz";
  os << '\n';
  os.precision(10);
  for (std::size_t i = 0; i < t.azimuths_deg.size(); ++i) {
    os << t.azimuths_deg[i] << ','
       << 20.0 * std::log10(cardioid_gain(reference, deg2rad(t.azimuths_deg[i]), std::numbers::pi / 2.0));
    for (double g : t.gain_db[i]) os << ',' << g;
    os << '\n';
  }
}

/// Sum over sources of source * directional RIR at the array centre. Order-0
/// patterns give the omnidirectional reference.
inline Signal analytic_vdm(const RoomSpec& room, const Vec3& center, std::span<const Vec3> sources,
                           std::span<const Signal> signals, const DirectivityPattern& pattern, const RirOptions& opt = {}) {
  if (sources.size() != signals.size() || sources.empty()) throw std::invalid_argument("analytic_vdm: source count mismatch");
  const std::size_t n = signals.front().size();
  Signal out(n, 0.0);
  const std::array<std::optional<DirectivityPattern>, 1> pats{
      pattern.order == 0 ? std::nullopt : std::optional<DirectivityPattern>(pattern)};
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto rir = simulate_rirs(room, sources[s], center, pats, opt).front();
    const auto y = convolve(signals[s], rir.taps, n);
    for (std::size_t i = 0; i < n; ++i) out[i] += y[i];
  }
  return out;
}

}  // namespace vdm
