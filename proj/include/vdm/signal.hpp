#pragma once

// Buffers, real FFT, STFT/iSTFT (with exact adjoints) and FFT convolution.
//
// DFT convention: forward transform is unnormalized,
//   X[k] = sum_n x[n] w[n] exp(-j 2 pi k n / N),
// inverse carries the 1/N. With this convention a frame's energy satisfies
//   sum_n |x[n] w[n]|^2 = (|X_0|^2 + 2 sum_{k=1}^{N/2-1} |X_k|^2 + |X_{N/2}|^2) / N.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdm {

using cplx = std::complex<double>;
using Signal = std::vector<double>;

/// Multichannel audio. All channels share one length.
struct Waveform {
  double sample_rate = 16000.0;
  std::vector<Signal> channels;

  Waveform() = default;
  Waveform(double fs, std::size_t num_channels, std::size_t length)
      : sample_rate(fs), channels(num_channels, Signal(length, 0.0)) {}
  Waveform(double fs, std::vector<Signal> ch) : sample_rate(fs), channels(std::move(ch)) { validate(); }

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }

  void validate() const {
    if (!(sample_rate > 0.0)) throw std::invalid_argument("waveform: sample rate must be positive");
    if (channels.empty()) throw std::invalid_argument("waveform: no channels");
    for (const auto& c : channels) {
      if (c.size() != channels.front().size())
        throw std::invalid_argument("waveform: channels differ in length");
      for (double v : c)
        if (!std::isfinite(v)) throw std::invalid_argument("waveform: non-finite sample");
    }
  }
};

inline double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// ---------------------------------------------------------------------------
// Real FFT backed by FFTW. Plans are created once per size under a lock and
// executed through the thread-safe new-array interface. FFTW_ESTIMATE keeps
// the chosen algorithm (and therefore every output bit) reproducible.

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    std::vector<double> r(n);
    std::vector<cplx> c(n / 2 + 1);
    auto* cr = reinterpret_cast<fftw_complex*>(c.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), r.data(), cr, flags);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), cr, r.data(), flags);
    if (!fwd_ || !inv_) throw std::runtime_error("fft: plan creation failed");
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  // in: n reals, out: n/2+1 bins.
  void forward(const double* in, cplx* out) const {
    fftw_execute_dft_r2c(fwd_, const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
  }
  // Unnormalized c2r (result is n times the true inverse). `in` is preserved.
  void inverse(const cplx* in, double* out) const {
    std::vector<cplx> scratch(in, in + bins());
    fftw_execute_dft_c2r(inv_, reinterpret_cast<fftw_complex*>(scratch.data()), out);
  }

 private:
  std::size_t n_;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

inline const RealFft& fft_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<RealFft>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// ---------------------------------------------------------------------------
// Linear convolution through the FFT. A Convolver holds one operand's
// spectrum so it can be applied against many kernels.

class Convolver {
 public:
  Convolver(std::span<const double> signal, std::size_t max_kernel_len)
      : signal_len_(signal.size()), nfft_(next_pow2(signal.size() + max_kernel_len)) {
    const auto& fft = fft_for(nfft_);
    std::vector<double> buf(nfft_, 0.0);
    std::copy(signal.begin(), signal.end(), buf.begin());
    spectrum_.resize(fft.bins());
    fft.forward(buf.data(), spectrum_.data());
  }

  /// Full linear convolution with `kernel`, truncated to `out_len` samples.
  Signal apply(std::span<const double> kernel, std::size_t out_len) const {
    if (signal_len_ + kernel.size() > nfft_) throw std::invalid_argument("convolver: kernel too long");
    const auto& fft = fft_for(nfft_);
    std::vector<double> buf(nfft_, 0.0);
    std::copy(kernel.begin(), kernel.end(), buf.begin());
    std::vector<cplx> k(fft.bins());
    fft.forward(buf.data(), k.data());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] *= spectrum_[i];
    fft.inverse(k.data(), buf.data());
    const std::size_t full = signal_len_ + kernel.size() - 1;
    Signal out(out_len, 0.0);
    const double scale = 1.0 / static_cast<double>(nfft_);
    for (std::size_t i = 0; i < std::min(out_len, full); ++i) out[i] = buf[i] * scale;
    return out;
  }

 private:
  std::size_t signal_len_;
  std::size_t nfft_;
  std::vector<cplx> spectrum_;
};

inline Signal convolve(std::span<const double> a, std::span<const double> b, std::size_t out_len) {
  if (a.empty() || b.empty()) return Signal(out_len, 0.0);
  return Convolver(a, b.size()).apply(b, out_len);
}

// ---------------------------------------------------------------------------
// STFT

/// Square-root periodic Hann, which overlap-adds to one at hop = N/2.
inline std::vector<double> sqrt_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = std::sqrt(0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n))));
  return w;
}

class StftConfig {
 public:
  explicit StftConfig(std::size_t fft_size = 512, std::size_t hop = 256)
      : StftConfig(fft_size, hop, sqrt_hann(fft_size)) {}

  StftConfig(std::size_t fft_size, std::size_t hop, std::vector<double> analysis)
      : fft_size_(fft_size), hop_(hop), analysis_(std::move(analysis)) {
    if (fft_size_ < 2 || fft_size_ % 2 != 0) throw std::invalid_argument("stft: fft size must be even and >= 2");
    if (hop_ == 0 || fft_size_ % hop_ != 0) throw std::invalid_argument("stft: hop must divide fft size");
    if (analysis_.size() != fft_size_) throw std::invalid_argument("stft: window length mismatch");
    // Synthesis window normalized so that sum_t wa * ws = 1 at every sample.
    std::vector<double> ola(hop_, 0.0);
    for (std::size_t i = 0; i < fft_size_; ++i) ola[i % hop_] += analysis_[i] * analysis_[i];
    const double norm = ola[0];
    for (double v : ola)
      if (std::abs(v - norm) > 1e-10 * std::max(1.0, norm))
        throw std::invalid_argument("stft: window pair violates the overlap-add condition");
    synthesis_.resize(fft_size_);
    for (std::size_t i = 0; i < fft_size_; ++i) synthesis_[i] = analysis_[i] / norm;
  }

  std::size_t fft_size() const { return fft_size_; }
  std::size_t hop() const { return hop_; }
  std::size_t bins() const { return fft_size_ / 2 + 1; }
  std::size_t pad() const { return fft_size_ - hop_; }
  const std::vector<double>& analysis() const { return analysis_; }
  const std::vector<double>& synthesis() const { return synthesis_; }

  /// Padded length: `pad()` zeros in front, at least `pad()` behind, rounded up
  /// so frames tile the buffer exactly.
  std::size_t padded_length(std::size_t n) const {
    std::size_t total = n + 2 * pad();
    const std::size_t rem = (total - fft_size_) % hop_;
    if (rem != 0) total += hop_ - rem;
    return total;
  }
  std::size_t frames(std::size_t n) const { return (padded_length(n) - fft_size_) / hop_ + 1; }

  bool operator==(const StftConfig& o) const {
    return fft_size_ == o.fft_size_ && hop_ == o.hop_ && analysis_ == o.analysis_;
  }

 private:
  std::size_t fft_size_;
  std::size_t hop_;
  std::vector<double> analysis_;
  std::vector<double> synthesis_;
};

/// T x F complex values, row-major by frame.
struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t fft_size = 0;
  std::size_t hop = 0;
  std::size_t signal_length = 0;
  std::vector<cplx> data;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t t, std::size_t f, std::size_t n_fft, std::size_t h, std::size_t len)
      : frames(t), bins(f), fft_size(n_fft), hop(h), signal_length(len), data(t * f) {}

  cplx& operator()(std::size_t t, std::size_t f) { return data[t * bins + f]; }
  const cplx& operator()(std::size_t t, std::size_t f) const { return data[t * bins + f]; }

  bool same_shape(const ComplexSpectrogram& o) const {
    return frames == o.frames && bins == o.bins && fft_size == o.fft_size && hop == o.hop &&
           signal_length == o.signal_length;
  }
  static ComplexSpectrogram zeros_like(const ComplexSpectrogram& o) {
    return ComplexSpectrogram(o.frames, o.bins, o.fft_size, o.hop, o.signal_length);
  }
};

/// Real inner product Re sum conj(a) b.
inline double inner(const ComplexSpectrogram& a, const ComplexSpectrogram& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("inner: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (std::conj(a.data[i]) * b.data[i]).real();
  return s;
}

namespace detail {
inline void check_compatible(const ComplexSpectrogram& s, const StftConfig& cfg) {
  if (s.fft_size != cfg.fft_size() || s.hop != cfg.hop() || s.bins != cfg.bins())
    throw std::invalid_argument("istft: spectrogram/config mismatch");
  if (s.frames != cfg.frames(s.signal_length) || s.data.size() != s.frames * s.bins)
    throw std::invalid_argument("istft: frame count inconsistent with signal length");
}
}  // namespace detail

inline ComplexSpectrogram stft(std::span<const double> x, const StftConfig& cfg) {
  const std::size_t n = cfg.fft_size();
  if (x.empty() || x.size() < n) throw std::invalid_argument("stft: signal too short");
  const std::size_t total = cfg.padded_length(x.size());
  std::vector<double> padded(total, 0.0);
  std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(cfg.pad()));

  ComplexSpectrogram s(cfg.frames(x.size()), cfg.bins(), n, cfg.hop(), x.size());
  const auto& fft = fft_for(n);
  const auto& w = cfg.analysis();
  std::vector<double> frame(n);
  for (std::size_t t = 0; t < s.frames; ++t) {
    const double* src = padded.data() + t * cfg.hop();
    for (std::size_t i = 0; i < n; ++i) frame[i] = src[i] * w[i];
    fft.forward(frame.data(), &s.data[t * s.bins]);
  }
  return s;
}

inline Signal istft(const ComplexSpectrogram& s, const StftConfig& cfg) {
  detail::check_compatible(s, cfg);
  const std::size_t n = cfg.fft_size();
  const auto& fft = fft_for(n);
  const auto& ws = cfg.synthesis();
  std::vector<double> out(cfg.padded_length(s.signal_length), 0.0);
  std::vector<double> frame(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < s.frames; ++t) {
    fft.inverse(&s.data[t * s.bins], frame.data());
    double* dst = out.data() + t * cfg.hop();
    for (std::size_t i = 0; i < n; ++i) dst[i] += frame[i] * inv_n * ws[i];
  }
  const auto first = out.begin() + static_cast<std::ptrdiff_t>(cfg.pad());
  return Signal(first, first + static_cast<std::ptrdiff_t>(s.signal_length));
}

/// Adjoint of `stft` under <X,S> = Re sum conj(X) S.
inline Signal stft_adjoint(const ComplexSpectrogram& s, const StftConfig& cfg) {
  detail::check_compatible(s, cfg);
  const std::size_t n = cfg.fft_size();
  const std::size_t nb = cfg.bins();
  const auto& fft = fft_for(n);
  const auto& w = cfg.analysis();
  std::vector<double> out(cfg.padded_length(s.signal_length), 0.0);
  std::vector<double> frame(n);
  std::vector<cplx> half(nb);
  for (std::size_t t = 0; t < s.frames; ++t) {
    // Re sum_k S_k e^{+j..} equals c2r of S with interior bins halved.
    for (std::size_t k = 0; k < nb; ++k) half[k] = s(t, k) * ((k == 0 || k == nb - 1) ? 1.0 : 0.5);
    fft.inverse(half.data(), frame.data());
    double* dst = out.data() + t * cfg.hop();
    for (std::size_t i = 0; i < n; ++i) dst[i] += frame[i] * w[i];
  }
  const auto first = out.begin() + static_cast<std::ptrdiff_t>(cfg.pad());
  return Signal(first, first + static_cast<std::ptrdiff_t>(s.signal_length));
}

/// Adjoint of `istft`: maps a time-domain gradient to the spectrogram
/// gradient (d/dRe + j d/dIm). DC and Nyquist imaginary parts are ignored by
/// `istft`, so their gradients are zero.
inline ComplexSpectrogram istft_adjoint(std::span<const double> g, const ComplexSpectrogram& like,
                                        const StftConfig& cfg) {
  detail::check_compatible(like, cfg);
  if (g.size() != like.signal_length) throw std::invalid_argument("istft_adjoint: length mismatch");
  const std::size_t n = cfg.fft_size();
  const std::size_t nb = cfg.bins();
  const auto& fft = fft_for(n);
  const auto& ws = cfg.synthesis();
  std::vector<double> padded(cfg.padded_length(g.size()), 0.0);
  std::copy(g.begin(), g.end(), padded.begin() + static_cast<std::ptrdiff_t>(cfg.pad()));
  ComplexSpectrogram out = ComplexSpectrogram::zeros_like(like);
  std::vector<double> frame(n);
  const double edge = 1.0 / static_cast<double>(n);
  const double mid = 2.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < out.frames; ++t) {
    const double* src = padded.data() + t * cfg.hop();
    for (std::size_t i = 0; i < n; ++i) frame[i] = src[i] * ws[i];
    cplx* dst = &out.data[t * nb];
    fft.forward(frame.data(), dst);
    dst[0] = cplx(dst[0].real() * edge, 0.0);
    dst[nb - 1] = cplx(dst[nb - 1].real() * edge, 0.0);
    for (std::size_t k = 1; k + 1 < nb; ++k) dst[k] *= mid;
  }
  return out;
}

}  // namespace vdm
