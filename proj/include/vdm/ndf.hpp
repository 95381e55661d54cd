#pragma once

// Dual-mask recurrent filter: a bidirectional LSTM across frequency, then two
// causal LSTM branches across time, each followed by a linear + tanh head that
// emits one complex mask. Reverse-mode gradients are written out by hand.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdm/mask.hpp"
#include "vdm/signal.hpp"

namespace vdm {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NetConfig {
  std::size_t mics = 4;           // Q; features are 2Q per bin
  std::size_t bins = 257;         // F; 0 accepts any
  std::size_t hidden_freq = 32;   // per direction
  std::size_t hidden_time = 32;   // per branch
  std::uint64_t seed = 0;

  std::size_t features() const { return 2 * mics; }
  void validate() const {
    if (mics == 0 || hidden_freq == 0 || hidden_time == 0) throw std::invalid_argument("net config: sizes must be >= 1");
  }
};

struct LstmWeights {
  Mat w_ih;  // 4H x in, gate order i, f, g, o
  Mat w_hh;  // 4H x H
  Mat bias;  // 1 x 4H

  Eigen::Index hidden() const { return w_hh.cols(); }
  Eigen::Index input() const { return w_ih.cols(); }
};

struct LinearWeights {
  Mat weight;  // 2 x H
  Mat bias;    // 1 x 2
};

struct NetworkParams {
  LstmWeights freq_fwd, freq_bwd, time_coh, time_diff;
  LinearWeights out_coh, out_diff;

  /// Calls fn(name, tensor, rank) for every tensor in a fixed order.
  template <class Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <class Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Mat& m, int) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    z.visit([](const std::string&, Mat& m, int) { m.setZero(); });
    return z;
  }

  /// Sizes recovered from tensor shapes (bins and seed are not stored).
  NetConfig config() const {
    NetConfig c;
    c.mics = static_cast<std::size_t>(freq_fwd.input() / 2);
    c.bins = 0;
    c.hidden_freq = static_cast<std::size_t>(freq_fwd.hidden());
    c.hidden_time = static_cast<std::size_t>(time_coh.hidden());
    return c;
  }

 private:
  template <class Self, class Fn>
  static void visit_impl(Self& self, Fn& fn) {
    auto lstm = [&](const std::string& prefix, auto& l) {
      fn(prefix + ".w_ih", l.w_ih, 2);
      fn(prefix + ".w_hh", l.w_hh, 2);
      fn(prefix + ".bias", l.bias, 1);
    };
    auto linear = [&](const std::string& prefix, auto& l) {
      fn(prefix + ".weight", l.weight, 2);
      fn(prefix + ".bias", l.bias, 1);
    };
    lstm("freq_fwd", self.freq_fwd);
    lstm("freq_bwd", self.freq_bwd);
    lstm("time_coh", self.time_coh);
    lstm("time_diff", self.time_diff);
    linear("out_coh", self.out_coh);
    linear("out_diff", self.out_diff);
  }
};

/// Rounds every parameter to the nearest float so checkpoints are lossless.
inline void quantize_to_float(NetworkParams& p) {
  p.visit([](const std::string&, Mat& m, int) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  });
}

/// Uniform in +-1/sqrt(fan_in) (LSTM fan-in = input + hidden); forget-gate
/// biases shifted by +1.
inline NetworkParams init_params(const NetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&](Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
  };
  auto lstm = [&](std::size_t in, std::size_t hidden) {
    const auto h = static_cast<Eigen::Index>(hidden);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in + hidden));
    LstmWeights l{uniform(4 * h, static_cast<Eigen::Index>(in), bound), uniform(4 * h, h, bound), uniform(1, 4 * h, bound)};
    l.bias.middleCols(h, h).array() += 1.0;
    return l;
  };
  auto linear = [&](std::size_t in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return LinearWeights{uniform(2, static_cast<Eigen::Index>(in), bound), uniform(1, 2, bound)};
  };
  NetworkParams p;
  p.freq_fwd = lstm(cfg.features(), cfg.hidden_freq);
  p.freq_bwd = lstm(cfg.features(), cfg.hidden_freq);
  p.time_coh = lstm(2 * cfg.hidden_freq, cfg.hidden_time);
  p.time_diff = lstm(2 * cfg.hidden_freq, cfg.hidden_time);
  p.out_coh = linear(cfg.hidden_time);
  p.out_diff = linear(cfg.hidden_time);
  quantize_to_float(p);
  return p;
}

// ---------------------------------------------------------------------------
// LSTM over a batch of equal-length sequences. Row s * batch + b of every
// matrix holds step s of sequence b.

namespace detail {

struct LstmTrace {
  Mat input;
  Mat gates;  // post-activation i, f, g, o
  Mat cell;
  Mat hidden;
  Eigen::Index steps = 0, batch = 0;
  bool reverse = false;
};

inline LstmTrace lstm_forward(const LstmWeights& w, Mat input, Eigen::Index steps, Eigen::Index batch, bool reverse) {
  const Eigen::Index h = w.hidden();
  LstmTrace tr;
  tr.steps = steps;
  tr.batch = batch;
  tr.reverse = reverse;
  tr.input = std::move(input);
  tr.gates.noalias() = tr.input * w.w_ih.transpose();
  tr.gates.rowwise() += w.bias.row(0);
  tr.cell.resize(steps * batch, h);
  tr.hidden.resize(steps * batch, h);
  for (Eigen::Index k = 0; k < steps; ++k) {
    const Eigen::Index s = reverse ? steps - 1 - k : k;
    const Eigen::Index prev = reverse ? s + 1 : s - 1;
    auto z = tr.gates.middleRows(s * batch, batch);
    if (k > 0) z.noalias() += tr.hidden.middleRows(prev * batch, batch) * w.w_hh.transpose();
    z.leftCols(2 * h) = (1.0 + (-z.leftCols(2 * h).array()).exp()).inverse().matrix();
    z.middleCols(2 * h, h) = z.middleCols(2 * h, h).array().tanh().matrix();
    z.rightCols(h) = (1.0 + (-z.rightCols(h).array()).exp()).inverse().matrix();
    auto c = tr.cell.middleRows(s * batch, batch);
    c = (z.leftCols(h).array() * z.middleCols(2 * h, h).array()).matrix();
    if (k > 0) c.array() += z.middleCols(h, h).array() * tr.cell.middleRows(prev * batch, batch).array();
    tr.hidden.middleRows(s * batch, batch) = (z.rightCols(h).array() * c.array().tanh()).matrix();
  }
  return tr;
}

/// Accumulates weight gradients into `grad`; returns d/d input when asked.
inline Mat lstm_backward(const LstmWeights& w, const LstmTrace& tr, const Mat& d_hidden, LstmWeights& grad,
                         bool want_input_grad) {
  const Eigen::Index h = w.hidden(), batch = tr.batch, steps = tr.steps;
  Mat dz(steps * batch, 4 * h);
  Mat dh_next = Mat::Zero(batch, h), dc_next = Mat::Zero(batch, h);
  for (Eigen::Index k = steps; k-- > 0;) {
    const Eigen::Index s = tr.reverse ? steps - 1 - k : k;
    const Eigen::Index prev = tr.reverse ? s + 1 : s - 1;
    const auto a = tr.gates.middleRows(s * batch, batch).array();
    const auto i = a.leftCols(h), f = a.middleCols(h, h), g = a.middleCols(2 * h, h), o = a.rightCols(h);
    const RowArray ct = tr.cell.middleRows(s * batch, batch).array().tanh();
    const RowArray dh = d_hidden.middleRows(s * batch, batch).array() + dh_next.array();
    const RowArray dc = dc_next.array() + dh * o * (1.0 - ct.square());
    auto d = dz.middleRows(s * batch, batch);
    d.leftCols(h) = (dc * g * i * (1.0 - i)).matrix();
    if (k > 0)
      d.middleCols(h, h) = (dc * tr.cell.middleRows(prev * batch, batch).array() * f * (1.0 - f)).matrix();
    else
      d.middleCols(h, h).setZero();
    d.middleCols(2 * h, h) = (dc * i * (1.0 - g.square())).matrix();
    d.rightCols(h) = (dh * ct * o * (1.0 - o)).matrix();
    dc_next = (dc * f).matrix();
    dh_next.noalias() = d * w.w_hh;
    if (k > 0) grad.w_hh.noalias() += d.transpose() * tr.hidden.middleRows(prev * batch, batch);
  }
  grad.w_ih.noalias() += dz.transpose() * tr.input;
  grad.bias += dz.colwise().sum();
  if (!want_input_grad) return {};
  return dz * w.w_ih;
}

/// Reorders rows a * nb + b -> b * na + a.
inline Mat swap_major(const Mat& m, Eigen::Index na, Eigen::Index nb) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index a = 0; a < na; ++a)
    for (Eigen::Index b = 0; b < nb; ++b) out.row(b * na + a) = m.row(a * nb + b);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Features and forward pass

/// Per-item network input: rows t * F + f, columns Re(Y_1..Y_Q), Im(Y_1..Y_Q).
struct Features {
  Mat values;
  std::size_t frames = 0;
  std::size_t bins = 0;
};

/// Stacks the channel spectrograms, divided by the RMS magnitude of the
/// reference (first) channel.
inline Features make_features(std::span<const ComplexSpectrogram> specs) {
  if (specs.empty()) throw std::invalid_argument("make_features: no channels");
  const auto& ref = specs.front();
  for (const auto& s : specs)
    if (!s.same_shape(ref)) throw std::invalid_argument("make_features: channel shape mismatch");
  double power = 0.0;
  for (const auto& v : ref.data) power += std::norm(v);
  const double rms = std::sqrt(power / static_cast<double>(ref.data.size()));
  const double scale = rms > 0.0 ? 1.0 / rms : 1.0;
  const auto q_count = static_cast<Eigen::Index>(specs.size());
  Features x{Mat(static_cast<Eigen::Index>(ref.data.size()), 2 * q_count), ref.frames, ref.bins};
  for (Eigen::Index q = 0; q < q_count; ++q)
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      x.values(r, q) = specs[q].data[i].real() * scale;
      x.values(r, q_count + q) = specs[q].data[i].imag() * scale;
    }
  return x;
}

struct ForwardTrace {
  std::size_t frames = 0, bins = 0;
  detail::LstmTrace freq_fwd, freq_bwd, time_coh, time_diff;
  Mat mask_coh, mask_diff;  // (T*F) x 2, post-tanh (Re, Im)
};

inline void check_input(const NetworkParams& p, const Features& x, const NetConfig* cfg = nullptr) {
  if (x.frames == 0 || x.bins == 0) throw std::invalid_argument("forward: empty input");
  if (static_cast<std::size_t>(x.values.rows()) != x.frames * x.bins || x.values.cols() != p.freq_fwd.input())
    throw std::invalid_argument("forward: input shape does not match the network");
  if (cfg && cfg->bins != 0 && cfg->bins != x.bins) throw std::invalid_argument("forward: bin count mismatch");
  if (!x.values.allFinite()) throw std::invalid_argument("forward: non-finite input");
}

inline ForwardTrace forward_trace(const NetworkParams& p, const Features& x) {
  check_input(p, x);
  const auto t_count = static_cast<Eigen::Index>(x.frames), f_count = static_cast<Eigen::Index>(x.bins);
  ForwardTrace tr;
  tr.frames = x.frames;
  tr.bins = x.bins;
  // Frequency recurrence: F steps, batch of T frames.
  Mat by_freq = detail::swap_major(x.values, t_count, f_count);
  tr.freq_fwd = detail::lstm_forward(p.freq_fwd, by_freq, f_count, t_count, false);
  tr.freq_bwd = detail::lstm_forward(p.freq_bwd, std::move(by_freq), f_count, t_count, true);
  const Eigen::Index hf = p.freq_fwd.hidden();
  Mat joined(f_count * t_count, 2 * hf);
  joined.leftCols(hf) = tr.freq_fwd.hidden;
  joined.rightCols(hf) = tr.freq_bwd.hidden;
  // Time recurrence: T steps, batch of F bins.
  Mat by_time = detail::swap_major(joined, f_count, t_count);
  tr.time_coh = detail::lstm_forward(p.time_coh, by_time, t_count, f_count, false);
  tr.time_diff = detail::lstm_forward(p.time_diff, std::move(by_time), t_count, f_count, false);
  auto head = [](const LinearWeights& l, const Mat& h) {
    Mat u = h * l.weight.transpose();
    u.rowwise() += l.bias.row(0);
    return Mat(u.array().tanh().matrix());
  };
  tr.mask_coh = head(p.out_coh, tr.time_coh.hidden);
  tr.mask_diff = head(p.out_diff, tr.time_diff.hidden);
  return tr;
}

namespace detail {
inline ComplexSpectrogram to_mask(const Mat& m, const ComplexSpectrogram& like) {
  auto out = ComplexSpectrogram::zeros_like(like);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.data[i] = cplx(m(r, 0), m(r, 1));
  }
  return out;
}
}  // namespace detail

/// Masks for one item, shaped like `like` (T x F).
inline MaskPair forward(const NetworkParams& p, const Features& x, const ComplexSpectrogram& like) {
  if (like.frames != x.frames || like.bins != x.bins) throw std::invalid_argument("forward: reference shape mismatch");
  const auto tr = forward_trace(p, x);
  return {detail::to_mask(tr.mask_coh, like), detail::to_mask(tr.mask_diff, like)};
}

/// Backward from mask gradients (d/dRe, d/dIm per bin) into `grad`.
inline void backward_from_masks(const NetworkParams& p, const ForwardTrace& tr, const Mat& d_mask_coh,
                                const Mat& d_mask_diff, NetworkParams& grad) {
  auto head = [](const LinearWeights& l, const Mat& mask, const Mat& d_mask, const Mat& h, LinearWeights& g) {
    const Mat du = (d_mask.array() * (1.0 - mask.array().square())).matrix();
    g.weight.noalias() += du.transpose() * h;
    g.bias += du.colwise().sum();
    return Mat(du * l.weight);
  };
  const Mat dh_coh = head(p.out_coh, tr.mask_coh, d_mask_coh, tr.time_coh.hidden, grad.out_coh);
  const Mat dh_diff = head(p.out_diff, tr.mask_diff, d_mask_diff, tr.time_diff.hidden, grad.out_diff);
  Mat d_joined = detail::lstm_backward(p.time_coh, tr.time_coh, dh_coh, grad.time_coh, true);
  d_joined += detail::lstm_backward(p.time_diff, tr.time_diff, dh_diff, grad.time_diff, true);
  const auto t_count = static_cast<Eigen::Index>(tr.frames), f_count = static_cast<Eigen::Index>(tr.bins);
  const Mat d_by_freq = detail::swap_major(d_joined, t_count, f_count);
  const Eigen::Index hf = p.freq_fwd.hidden();
  detail::lstm_backward(p.freq_fwd, tr.freq_fwd, d_by_freq.leftCols(hf), grad.freq_fwd, false);
  detail::lstm_backward(p.freq_bwd, tr.freq_bwd, d_by_freq.rightCols(hf), grad.freq_bwd, false);
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kLossEps = 1e-7;

/// sum_b |z_b - est_b|_1 / (sum_b |z_b|_1 + eps)
inline double norm_l1_loss(std::span<const Signal> estimates, std::span<const Signal> targets) {
  if (estimates.size() != targets.size()) throw std::invalid_argument("norm_l1_loss: batch size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    if (estimates[b].size() != targets[b].size()) throw std::invalid_argument("norm_l1_loss: length mismatch");
    for (std::size_t i = 0; i < targets[b].size(); ++i) {
      num += std::abs(targets[b][i] - estimates[b][i]);
      den += std::abs(targets[b][i]);
    }
  }
  return num / (den + kLossEps);
}

inline double total_loss(double l_coh, double l_diff, double l_vdm, int lambda_vdm) {
  if (lambda_vdm != 0 && lambda_vdm != 1) throw std::invalid_argument("total_loss: lambda_vdm must be 0 or 1");
  if (l_coh < 0.0 || l_diff < 0.0 || l_vdm < 0.0) throw std::invalid_argument("total_loss: negative component");
  return l_coh + l_diff + lambda_vdm * l_vdm;
}

enum class LossDomain { time, spectral };

struct LossOptions {
  int lambda_vdm = 1;
  LossDomain domain = LossDomain::time;
};

struct LossTerms {
  double coh = 0.0, diff = 0.0, vdm = 0.0, total = 0.0;
};

/// One training example: network input, reference spectrogram and the
/// time-domain targets.
struct TrainItem {
  std::string id;
  Features features;
  ComplexSpectrogram y_ref;
  Signal z_coh, z_diff, z_vdm;
  double beta = 1.0;
};

/// Builds an item from Q mic channels (reference first) and the targets.
inline TrainItem make_item(const Waveform& mics, Signal z_coh, Signal z_diff, Signal z_vdm, double beta,
                           const StftConfig& cfg, std::string id = {}) {
  mics.validate();
  if (z_coh.size() != mics.length() || z_diff.size() != mics.length() || z_vdm.size() != mics.length())
    throw std::invalid_argument("make_item: target length mismatch");
  std::vector<ComplexSpectrogram> specs;
  for (const auto& ch : mics.channels) specs.push_back(stft(ch, cfg));
  TrainItem item{std::move(id), make_features(specs), specs.front(), std::move(z_coh), std::move(z_diff),
                 std::move(z_vdm), beta};
  return item;
}

namespace detail {

inline double sgn(double v) { return (v > 0.0) - (v < 0.0); }

struct Denominators {
  double coh = kLossEps, diff = kLossEps, vdm = kLossEps;
};

inline double l1(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += std::abs(v);
  return s;
}
inline double l1(const ComplexSpectrogram& s) {
  double acc = 0.0;
  for (const auto& v : s.data) acc += std::abs(v.real()) + std::abs(v.imag());
  return acc;
}

}  // namespace detail

struct BatchResult {
  LossTerms loss;
  std::vector<MaskPair> masks;
};

/// Losses of a batch and, when `grad` is given, their exact gradient
/// accumulated into it. Items are processed one at a time; the batch
/// denominators depend on targets only and are computed first.
inline BatchResult evaluate_batch(const NetworkParams& p, std::span<const TrainItem* const> batch, const LossOptions& opt,
                                  NetworkParams* grad = nullptr, bool keep_masks = false) {
  if (batch.empty()) throw std::invalid_argument("evaluate_batch: empty batch");
  if (opt.lambda_vdm != 0 && opt.lambda_vdm != 1) throw std::invalid_argument("lambda_vdm must be 0 or 1");
  const bool spectral = opt.domain == LossDomain::spectral;
  std::vector<StftConfig> cfgs;
  detail::Denominators den;
  std::vector<std::array<ComplexSpectrogram, 3>> spec_targets;
  for (const TrainItem* item : batch) {
    const StftConfig cfg(item->y_ref.fft_size, item->y_ref.hop);
    if (spectral) {
      spec_targets.push_back({stft(item->z_coh, cfg), stft(item->z_diff, cfg), stft(item->z_vdm, cfg)});
      den.coh += detail::l1(spec_targets.back()[0]);
      den.diff += detail::l1(spec_targets.back()[1]);
      den.vdm += detail::l1(spec_targets.back()[2]);
    } else {
      den.coh += detail::l1(item->z_coh);
      den.diff += detail::l1(item->z_diff);
      den.vdm += detail::l1(item->z_vdm);
    }
    cfgs.push_back(cfg);
  }

  BatchResult res;
  double num_coh = 0.0, num_diff = 0.0, num_vdm = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TrainItem& item = *batch[b];
    const StftConfig& cfg = cfgs[b];
    const auto tr = forward_trace(p, item.features);
    if (item.y_ref.frames != tr.frames || item.y_ref.bins != tr.bins)
      throw std::invalid_argument("evaluate_batch: reference spectrogram shape mismatch");
    MaskPair m{detail::to_mask(tr.mask_coh, item.y_ref), detail::to_mask(tr.mask_diff, item.y_ref)};
    const auto est = apply_and_combine(m, item.y_ref, item.beta);

    // Per-bin gradient of the loss w.r.t. each estimate (d/dRe + j d/dIm).
    ComplexSpectrogram g_coh, g_diff, g_vdm;
    if (spectral) {
      const auto& tg = spec_targets[b];
      auto term = [&](const ComplexSpectrogram& e, const ComplexSpectrogram& t, double d, double& num) {
        auto g = ComplexSpectrogram::zeros_like(e);
        for (std::size_t i = 0; i < e.data.size(); ++i) {
          const cplx r = t.data[i] - e.data[i];
          num += std::abs(r.real()) + std::abs(r.imag());
          g.data[i] = -cplx(detail::sgn(r.real()), detail::sgn(r.imag())) / d;
        }
        return g;
      };
      g_coh = term(est.coh, tg[0], den.coh, num_coh);
      g_diff = term(est.diff, tg[1], den.diff, num_diff);
      g_vdm = term(est.vdm, tg[2], den.vdm, num_vdm);
    } else {
      auto term = [&](const ComplexSpectrogram& e, const Signal& t, double d, double& num) {
        const auto y = istft(e, cfg);
        Signal g(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double r = t[i] - y[i];
          num += std::abs(r);
          g[i] = -detail::sgn(r) / d;
        }
        return grad ? istft_adjoint(g, e, cfg) : ComplexSpectrogram{};
      };
      g_coh = term(est.coh, item.z_coh, den.coh, num_coh);
      g_diff = term(est.diff, item.z_diff, den.diff, num_diff);
      g_vdm = term(est.vdm, item.z_vdm, den.vdm, num_vdm);
    }

    if (grad) {
      const auto rows = static_cast<Eigen::Index>(item.y_ref.data.size());
      Mat dm_coh(rows, 2), dm_diff(rows, 2);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto i = static_cast<std::size_t>(r);
        cplx gc = g_coh.data[i], gd = g_diff.data[i];
        if (opt.lambda_vdm == 1) {
          gc += g_vdm.data[i];
          gd += item.beta * g_vdm.data[i];
        }
        // Z = M Y as a real 2x2 map: dL/dM = G conj(Y).
        const cplx dc = gc * std::conj(item.y_ref.data[i]);
        const cplx dd = gd * std::conj(item.y_ref.data[i]);
        dm_coh(r, 0) = dc.real();
        dm_coh(r, 1) = dc.imag();
        dm_diff(r, 0) = dd.real();
        dm_diff(r, 1) = dd.imag();
      }
      backward_from_masks(p, tr, dm_coh, dm_diff, *grad);
    }
    if (keep_masks) res.masks.push_back(std::move(m));
  }
  res.loss.coh = num_coh / den.coh;
  res.loss.diff = num_diff / den.diff;
  res.loss.vdm = num_vdm / den.vdm;
  res.loss.total = total_loss(res.loss.coh, res.loss.diff, res.loss.vdm, opt.lambda_vdm);
  return res;
}

/// Gradient of the batch loss, same named shapes as the parameters.
inline NetworkParams backward(const NetworkParams& p, std::span<const TrainItem* const> batch, const LossOptions& opt,
                              LossTerms* loss = nullptr) {
  NetworkParams g = p.zeros_like();
  const auto r = evaluate_batch(p, batch, opt, &g);
  if (loss) *loss = r.loss;
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::optional<double> clip_norm;
};

class Adam {
 public:
  Adam(const NetworkParams& like, AdamConfig cfg) : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(NetworkParams& p, NetworkParams g) {
    if (cfg_.clip_norm) {
      double sq = 0.0;
      g.visit([&](const std::string&, const Mat& t, int) { sq += t.squaredNorm(); });
      const double norm = std::sqrt(sq);
      if (norm > *cfg_.clip_norm) g.visit([&](const std::string&, Mat& t, int) { t *= *cfg_.clip_norm / norm; });
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<Mat*> ps, gs, ms, vs;
    p.visit([&](const std::string&, Mat& t, int) { ps.push_back(&t); });
    g.visit([&](const std::string&, Mat& t, int) { gs.push_back(&t); });
    m_.visit([&](const std::string&, Mat& t, int) { ms.push_back(&t); });
    v_.visit([&](const std::string&, Mat& t, int) { vs.push_back(&t); });
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& m = *ms[k];
      auto& v = *vs[k];
      const auto& gr = *gs[k];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gr;
      v = (cfg_.beta2 * v.array() + (1.0 - cfg_.beta2) * gr.array().square()).matrix();
      ps[k]->array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
    }
    quantize_to_float(p);
  }
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  NetworkParams m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  AdamConfig adam;
  LossOptions loss;
  std::size_t batch_size = 10;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: run all epochs
  std::uint64_t seed = 0;     // shuffling
};

struct TraceRow {
  std::size_t step = 0;
  LossTerms loss;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_trace_header(std::ostream& os) { os << "step,L_coh,L_diff,L_vdm,L_final\n"; }
inline void write_trace_row(std::ostream& os, const TraceRow& r) {
  os << r.step << ',' << r.loss.coh << ',' << r.loss.diff << ',' << r.loss.vdm << ',' << r.loss.total << '\n';
}

/// Mini-batch Adam over shuffled epochs. Each trace row holds the batch
/// loss before that step's update.
inline std::vector<TraceRow> train(NetworkParams& p, std::span<const TrainItem> data, const TrainConfig& cfg,
                                   std::ostream* trace_csv = nullptr,
                                   const std::function<void(const TraceRow&)>& on_step = {}) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  Adam opt(p, cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<TraceRow> trace;
  if (trace_csv) {
    trace_csv->precision(10);
    write_trace_header(*trace_csv);
  }
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) return trace;
      std::vector<const TrainItem*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(&data[order[i]]);
      LossTerms loss;
      auto g = backward(p, batch, cfg.loss, &loss);
      if (!std::isfinite(loss.total))
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (L_coh=" + std::to_string(loss.coh) +
                            ", L_diff=" + std::to_string(loss.diff) + ", L_vdm=" + std::to_string(loss.vdm) + ")");
      opt.step(p, std::move(g));
      trace.push_back({step, loss});
      if (trace_csv) write_trace_row(*trace_csv, trace.back());
      if (on_step) on_step(trace.back());
      ++step;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Inference

struct Inference {
  MaskPair masks;
  Signal coh, diff, vdm;
};

inline Inference infer(const NetworkParams& p, const Waveform& mics, double beta, const StftConfig& cfg) {
  mics.validate();
  if (mics.num_channels() != p.config().mics) throw std::invalid_argument("infer: channel count does not match the network");
  std::vector<ComplexSpectrogram> specs;
  for (const auto& ch : mics.channels) specs.push_back(stft(ch, cfg));
  const auto x = make_features(specs);
  Inference out;
  out.masks = forward(p, x, specs.front());
  const auto est = apply_and_combine(out.masks, specs.front(), beta);
  out.coh = istft(est.coh, cfg);
  out.diff = istft(est.diff, cfg);
  out.vdm = istft(est.vdm, cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "NDFP", u32 version, u32 count, then per tensor u16 name length,
// name, u8 rank, u32 dims, float32 data (all little-endian).

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_le(std::vector<unsigned char>& b, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const NetworkParams& p) {
  std::vector<unsigned char> b{'N', 'D', 'F', 'P'};
  detail::put_le(b, kCheckpointVersion, 4);
  std::uint32_t count = 0;
  p.visit([&](const std::string&, const Mat&, int) { ++count; });
  detail::put_le(b, count, 4);
  p.visit([&](const std::string& name, const Mat& m, int rank) {
    detail::put_le(b, name.size(), 2);
    b.insert(b.end(), name.begin(), name.end());
    b.push_back(static_cast<unsigned char>(rank));
    if (rank == 1) {
      detail::put_le(b, static_cast<std::uint64_t>(m.size()), 4);
    } else {
      detail::put_le(b, static_cast<std::uint64_t>(m.rows()), 4);
      detail::put_le(b, static_cast<std::uint64_t>(m.cols()), 4);
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_le(b, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i])), 4);
  });
  return b;
}

inline NetworkParams decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::Reader r(bytes);
  if (r.str(4) != "NDFP") throw CheckpointError("checkpoint: bad magic");
  if (const auto v = r.le(4); v != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(v));
  const auto count = r.le(4);
  std::vector<std::pair<std::string, Mat>> tensors;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name = r.str(r.le(2));
    const auto rank = r.le(1);
    if (rank != 1 && rank != 2) throw CheckpointError("checkpoint: unsupported rank for " + name);
    const auto rows = rank == 1 ? 1 : r.le(4);
    const auto cols = r.le(4);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4)));
    tensors.emplace_back(name, std::move(m));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");

  NetworkParams p;
  std::size_t k = 0;
  p.visit([&](const std::string& name, Mat& m, int) {
    if (k >= tensors.size() || tensors[k].first != name) throw CheckpointError("checkpoint: expected tensor " + name);
    m = std::move(tensors[k].second);
    ++k;
  });
  if (k != tensors.size()) throw CheckpointError("checkpoint: unexpected extra tensors");
  // Shape consistency.
  const auto cfg = p.config();
  const auto hf = static_cast<Eigen::Index>(cfg.hidden_freq), ht = static_cast<Eigen::Index>(cfg.hidden_time);
  auto lstm_ok = [](const LstmWeights& l, Eigen::Index in, Eigen::Index h) {
    return l.w_ih.rows() == 4 * h && l.w_ih.cols() == in && l.w_hh.rows() == 4 * h && l.w_hh.cols() == h &&
           l.bias.cols() == 4 * h;
  };
  auto lin_ok = [](const LinearWeights& l, Eigen::Index h) {
    return l.weight.rows() == 2 && l.weight.cols() == h && l.bias.cols() == 2;
  };
  const auto in = p.freq_fwd.w_ih.cols();
  if (in == 0 || in % 2 != 0 || !lstm_ok(p.freq_fwd, in, hf) || !lstm_ok(p.freq_bwd, in, hf) ||
      !lstm_ok(p.time_coh, 2 * hf, ht) || !lstm_ok(p.time_diff, 2 * hf, ht) || !lin_ok(p.out_coh, ht) ||
      !lin_ok(p.out_diff, ht))
    throw CheckpointError("checkpoint: inconsistent tensor shapes");
  return p;
}

inline void save_checkpoint(const NetworkParams& p, const std::string& path) {
  const auto b = encode_checkpoint(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw CheckpointError(path + ": write failed");
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open");
  const std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(b);
}

}  // namespace vdm
