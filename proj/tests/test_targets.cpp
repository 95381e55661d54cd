#include <gtest/gtest.h>

#include <random>

#include "vdm/speech.hpp"
#include "vdm/targets.hpp"

using namespace vdm;

namespace {

const double kPi = std::numbers::pi;

Signal noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  Signal x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

struct Scene {
  RoomSpec room{7, 5, 3, 0.3};
  Vec3 center{3.5, 2.5, 1.5};
  std::vector<Vec3> sources{{4.8, 3.1, 1.5}, {2.0, 1.6, 1.5}};
  ArrayGeometry geometry = ArrayGeometry::compact_uca();
  DirectivityPattern pattern;

  std::vector<SourceRirs> rirs() const {
    std::vector<SourceRirs> r;
    for (const auto& s : sources) r.push_back(source_rirs(room, center, geometry, s, pattern));
    return r;
  }
};

}  // namespace

TEST(Window, PiecewiseValues) {
  const WindowSpec spec{100, 960, 2000};
  const auto w = coh_window(spec);
  ASSERT_EQ(w.size(), 2000u);
  for (std::size_t k = 0; k < 100; ++k) EXPECT_EQ(w[k], 1.0);
  EXPECT_EQ(w[100], 1.0);
  EXPECT_NEAR(w[100 + 480], 0.5, 1e-15);
  for (std::size_t k = 1060; k < 2000; ++k) EXPECT_EQ(w[k], 0.0);
  const auto inv = inv_window(w);
  EXPECT_NEAR(inv[580], 0.5, 1e-15);
  EXPECT_EQ(inv[50], 0.0);
  for (std::size_t k = 0; k < w.size(); ++k) EXPECT_EQ(w[k] + inv[k], 1.0);
}

TEST(Window, FadeIsMonotoneAndRejectsOverflow) {
  const auto w = coh_window({0, 960, 960});
  for (std::size_t k = 1; k < w.size(); ++k) EXPECT_LT(w[k], w[k - 1]);
  EXPECT_THROW(coh_window({100, 960, 1000}), std::invalid_argument);
}

TEST(Beta, ReferenceDirectivityValues) {
  EXPECT_NEAR(beta_from_di(4.77).value, 0.577, 1e-3);
  EXPECT_NEAR(beta_from_di(11.14).value, 0.277, 1e-3);
  EXPECT_EQ(beta_from_di(0.0).value, 1.0);
}

TEST(Beta, FirstOrderCardioidIndex) {
  // Unfloored first-order cardioid: power average over the sphere is 1/3.
  EXPECT_NEAR(directivity_index_db(DirectivityPattern{1, 0.0, kPi / 2, 0.0}, 400), 10 * std::log10(3.0), 1e-3);
  EXPECT_NEAR(directivity_index_db(DirectivityPattern{}, 400), 4.77, 0.01);
}

TEST(Split, AnechoicHasNoDiffusePart) {
  ImageSourceList im{{{0, 0, 0}, 0, 1.0, 343.0 * 50 / 16000.0, 0.0, kPi / 2}};
  const auto omni = synth_rir(im, std::nullopt, 16000.0, 2000);
  const auto dir = synth_rir(im, DirectivityPattern{}, 16000.0, 2000);
  const auto s = split_rirs(dir, omni);
  for (double v : s.diff.taps) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(energy(s.coh.taps), energy(dir.taps), 1e-15);
}

TEST(Split, EnergyDecompositionAndTailZero) {
  Scene sc;
  const auto r = sc.rirs().front();
  const auto s = split_rirs(r.vdm, r.mics.front());
  const auto w = coh_window({r.vdm.direct_index, kDefaultFade, r.vdm.taps.size()});
  double e_inv = 0.0, cross = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double a = r.vdm.taps[k] * w[k], b = r.vdm.taps[k] * (1 - w[k]);
    e_inv += b * b;
    cross += a * b;
  }
  EXPECT_NEAR(energy(s.coh.taps) + e_inv + 2 * cross, energy(r.vdm.taps), 1e-12 * energy(r.vdm.taps));
  for (std::size_t k = r.vdm.direct_index + kDefaultFade; k < s.coh.taps.size(); ++k) ASSERT_EQ(s.coh.taps[k], 0.0);
}

TEST(Split, Errors) {
  ImpulseResponse a{Signal(100), 16000.0, 0}, b{Signal(99), 16000.0, 0};
  EXPECT_THROW(split_rirs(a, b, 10), std::invalid_argument);
  b.taps.resize(100);
  b.sample_rate = 8000.0;
  EXPECT_THROW(split_rirs(a, b, 10), std::invalid_argument);
}

TEST(Render, OnAxisAnechoicSourceIsDelayedCopy) {
  // Receiver 1 m away on the pattern axis, integer delay, no reflections.
  ImageSourceList im{{{0, 0, 0}, 0, 1.0, 343.0 * 40 / 16000.0, deg2rad(30.0), kPi / 2}};
  SourceRirs r;
  r.mics.push_back(synth_rir(im, std::nullopt, 16000.0, 1200));
  r.vdm = synth_rir(im, DirectivityPattern{}, 16000.0, 1200);
  const auto x = noise(3000, 1);
  const std::vector<SourceRirs> rs{r};
  const std::vector<Signal> xs{x};
  const auto b = render_targets(rs, xs, 0.577, {std::nullopt, 0});
  const double gain = 1.0 / (343.0 * 40 / 16000.0);
  for (std::size_t i = 40; i < x.size(); ++i) ASSERT_NEAR(b.z_vdm[i], gain * x[i - 40], 1e-12);
  for (double v : b.z_diff) ASSERT_EQ(v, 0.0);
}

TEST(Render, ReferenceMixtureEqualsWindowedParts) {
  Scene sc;
  const auto rirs = sc.rirs();
  const std::vector<Signal> xs{noise(8000, 2), noise(8000, 3)};
  const auto b = render_targets(rirs, xs, 0.577, {std::nullopt, 0});
  // y_ref = sum_n x_n * (h_omni w_coh + h_omni w_inv)
  Signal rebuilt(8000, 0.0);
  for (std::size_t s = 0; s < rirs.size(); ++s) {
    const auto& h = rirs[s].mics.front();
    const auto w = coh_window({rirs[s].vdm.direct_index, kDefaultFade, h.taps.size()});
    Signal a(h.taps.size()), c(h.taps.size());
    for (std::size_t k = 0; k < w.size(); ++k) {
      a[k] = h.taps[k] * w[k];
      c[k] = h.taps[k] * (1 - w[k]);
    }
    const auto ya = convolve(xs[s], a, 8000), yc = convolve(xs[s], c, 8000);
    for (std::size_t i = 0; i < 8000; ++i) rebuilt[i] += ya[i] + yc[i];
  }
  for (std::size_t i = 0; i < 8000; ++i) ASSERT_NEAR(b.y_mics.channels[0][i], rebuilt[i], 1e-10);
}

TEST(Render, LinearityAndScaling) {
  Scene sc;
  const auto rirs = sc.rirs();
  const std::vector<Signal> xs{noise(6000, 4), noise(6000, 5)};
  const auto both = render_targets(rirs, xs, 0.5, {std::nullopt, 0});
  const auto one = render_targets(std::span(rirs).first(1), std::span(xs).first(1), 0.5, {std::nullopt, 0});
  const auto two = render_targets(std::span(rirs).last(1), std::span(xs).last(1), 0.5, {std::nullopt, 0});
  for (std::size_t i = 0; i < 6000; ++i) {
    ASSERT_NEAR(both.z_vdm[i], one.z_vdm[i] + two.z_vdm[i], 1e-10);
    ASSERT_NEAR(both.z_coh[i], one.z_coh[i] + two.z_coh[i], 1e-10);
    ASSERT_NEAR(both.z_diff[i], one.z_diff[i] + two.z_diff[i], 1e-10);
  }
  std::vector<Signal> doubled = xs;
  for (auto& x : doubled)
    for (auto& v : x) v *= 2;
  const auto d = render_targets(rirs, doubled, 0.5, {std::nullopt, 0});
  for (std::size_t i = 0; i < 6000; ++i) {
    ASSERT_NEAR(d.z_coh[i], 2 * both.z_coh[i], 1e-12);
    ASSERT_NEAR(d.z_diff[i], 2 * both.z_diff[i], 1e-12);
    ASSERT_NEAR(d.z_vdm[i], 2 * both.z_vdm[i], 1e-12);
  }
}

TEST(Render, NoiseSnrIsExact) {
  Scene sc;
  const auto rirs = sc.rirs();
  const std::vector<Signal> xs{synthetic_speech(8000, 1), synthetic_speech(8000, 2)};
  const auto b = render_targets(rirs, xs, 0.577, {30.0, 9});
  const auto clean = render_targets(rirs, xs, 0.577, {std::nullopt, 0});
  for (std::size_t q = 0; q < b.num_mics(); ++q)
    EXPECT_NEAR(10 * std::log10(energy(clean.y_mics.channels[0]) / energy(b.noise.channels[q])), 30.0, 1e-9);
  for (std::size_t i = 0; i < 8000; ++i)
    ASSERT_NEAR(b.y_mics.channels[2][i], clean.y_mics.channels[2][i] + b.noise.channels[2][i], 1e-12);
}

TEST(Render, Errors) {
  Scene sc;
  const auto rirs = sc.rirs();
  const std::vector<Signal> xs{noise(6000, 4), Signal(6000, 0.0)};
  EXPECT_THROW(render_targets(rirs, xs, 0.5), std::invalid_argument);
  EXPECT_THROW(render_targets(rirs, std::span(xs).first(1), 0.5), std::invalid_argument);
}

TEST(Oracle, IdentityAndZeroMasks) {
  const StftConfig cfg;
  const auto y = stft(noise(4000, 6), cfg);
  const auto m = oracle_masks(y, y, ComplexSpectrogram::zeros_like(y));
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    EXPECT_NEAR(std::abs(m.coh.data[i] - cplx(1.0, 0.0)), 0.0, 1e-4);
    EXPECT_EQ(m.diff.data[i], cplx(0.0, 0.0));
  }
  EXPECT_THROW(oracle_masks(y, stft(noise(5000, 1), cfg), y), std::invalid_argument);
}

TEST(Oracle, ComponentsAreClipped) {
  const StftConfig cfg;
  const auto y = stft(noise(4000, 7), cfg);
  auto z = y;
  for (auto& v : z.data) v *= cplx(3.0, -2.0);
  const auto m = oracle_masks(y, z, z);
  for (const auto& v : m.coh.data) {
    EXPECT_LE(std::abs(v.real()), kMaskBound);
    EXPECT_LE(std::abs(v.imag()), kMaskBound);
  }
}

TEST(Combine, HandAlgebra) {
  const StftConfig cfg;
  const auto y = stft(noise(2000, 8), cfg);
  MaskPair m{ComplexSpectrogram::zeros_like(y), ComplexSpectrogram::zeros_like(y)};
  for (auto& v : m.coh.data) v = 1.0;
  auto e = apply_and_combine(m, y, 0.577);
  for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_EQ(e.vdm.data[i], y.data[i]);
  for (auto& v : m.coh.data) v = cplx(0.3, -0.2);
  m.diff = m.coh;
  e = apply_and_combine(m, y, 0.577);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    EXPECT_NEAR(std::abs(e.vdm.data[i] - 1.577 * cplx(0.3, -0.2) * y.data[i]), 0.0, 1e-12);
  e = apply_and_combine(m, y, 0.0);
  for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_EQ(e.vdm.data[i], e.coh.data[i]);
}

TEST(Speech, DeterministicAndLeveled) {
  const auto a = synthetic_speech(16000, 3), b = synthetic_speech(16000, 3), c = synthetic_speech(16000, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_NEAR(10 * std::log10(energy(a) / 16000.0), -20.0, 1e-9);
}
