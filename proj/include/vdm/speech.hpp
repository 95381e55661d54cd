#pragma once

// Speech-like test material: voiced syllables (glottal pulse train through
// formant resonators) and unvoiced bursts, with pauses in between.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>

#include "vdm/signal.hpp"

namespace vdm {

namespace detail {

/// Two-pole resonator, unit peak gain.
class Resonator {
 public:
  Resonator(double freq, double bandwidth, double fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    a1_ = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / fs);
    a2_ = -r * r;
    gain_ = 1.0 - r;
  }
  double operator()(double x) {
    const double y = gain_ * x + a1_ * y1_ + a2_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a1_, a2_, gain_;
  double y1_ = 0.0, y2_ = 0.0;
};

}  // namespace detail

/// `length` samples of speech-like signal at `level_dbfs` RMS over the clip.
inline Signal synthetic_speech(std::size_t length, std::uint64_t seed, double fs = 16000.0, double level_dbfs = -20.0) {
  if (length == 0) throw std::invalid_argument("synthetic_speech: zero length");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Signal out(length, 0.0);

  std::size_t pos = static_cast<std::size_t>(u(rng) * 0.05 * fs);
  while (pos < length) {
    const auto dur = static_cast<std::size_t>((0.08 + 0.22 * u(rng)) * fs);
    const bool voiced = u(rng) < 0.8;
    const double f0 = 90.0 + 130.0 * u(rng);
    const double glide = (u(rng) - 0.5) * 0.4;
    detail::Resonator f1(300.0 + 600.0 * u(rng), 80.0, fs);
    detail::Resonator f2(900.0 + 1600.0 * u(rng), 120.0, fs);
    detail::Resonator f3(2200.0 + 1200.0 * u(rng), 200.0, fs);
    const double amp = 0.3 + 0.7 * u(rng);
    double phase = 0.0;
    for (std::size_t i = 0; i < dur && pos + i < length; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(dur);
      double excitation;
      if (voiced) {
        phase += f0 * (1.0 + glide * t) / fs;
        excitation = 0.0;
        if (phase >= 1.0) {
          phase -= 1.0;
          excitation = 1.0;
        }
        excitation += 0.05 * g(rng);
      } else {
        excitation = 0.3 * g(rng);
      }
      const double env = std::sin(std::numbers::pi * t);
      const double y = voiced ? f1(excitation) + 0.6 * f2(excitation) + 0.3 * f3(excitation) : f3(excitation) + 0.5 * f2(excitation);
      out[pos + i] += amp * env * y;
    }
    pos += dur + static_cast<std::size_t>((0.02 + 0.15 * u(rng)) * fs);
  }

  const double rms = std::sqrt(energy(out) / static_cast<double>(length));
  if (rms > 0.0) {
    const double scale = std::pow(10.0, level_dbfs / 20.0) / rms;
    for (double& v : out) v *= scale;
  }
  return out;
}

}  // namespace vdm
