#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "vdm/ndf.hpp"

using namespace vdm;

namespace {

const StftConfig kTiny(16, 8);  // 9 bins

NetConfig tiny_config(std::uint64_t seed = 1) { return NetConfig{2, 9, 8, 8, seed}; }

Signal randn(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Signal x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

// 40 samples -> 6 frames of 9 bins.
std::vector<TrainItem> tiny_items(std::uint64_t seed, std::size_t count = 2, double beta = 0.577) {
  std::mt19937_64 rng(seed);
  std::vector<TrainItem> items;
  for (std::size_t k = 0; k < count; ++k) {
    Waveform w(16000.0, {randn(rng, 40), randn(rng, 40)});
    items.push_back(make_item(w, randn(rng, 40, 0.5), randn(rng, 40, 0.3), randn(rng, 40, 0.6), beta, kTiny));
  }
  return items;
}

std::vector<const TrainItem*> ptrs(const std::vector<TrainItem>& v) {
  std::vector<const TrainItem*> out;
  for (const auto& i : v) out.push_back(&i);
  return out;
}

std::vector<double*> flat(NetworkParams& p) {
  std::vector<double*> out;
  p.visit([&](const std::string&, Mat& m, int) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  });
  return out;
}

double grad_norm(const NetworkParams& g) {
  double s = 0.0;
  g.visit([&](const std::string&, const Mat& m, int) { s += m.squaredNorm(); });
  return std::sqrt(s);
}

}  // namespace

TEST(Init, DeterministicPerSeed) {
  const auto a = init_params(tiny_config(3)), b = init_params(tiny_config(3)), c = init_params(tiny_config(4));
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(c));
}

TEST(Init, ParameterCountMatchesClosedForm) {
  const auto p = init_params(tiny_config());
  auto lstm = [](std::size_t h, std::size_t in) { return 4 * h * (in + h + 1); };
  const std::size_t expected = 2 * lstm(8, 4) + 2 * lstm(8, 16) + 2 * (2 * 8 + 2);
  EXPECT_EQ(p.count(), expected);
  std::size_t enumerated = 0;
  std::vector<std::string> names;
  p.visit([&](const std::string& n, const Mat& m, int) {
    enumerated += static_cast<std::size_t>(m.rows() * m.cols());
    names.push_back(n);
  });
  EXPECT_EQ(enumerated, expected);
  EXPECT_EQ(names.size(), 16u);
  EXPECT_EQ(names.front(), "freq_fwd.w_ih");
}

TEST(Init, BoundsAndForgetBias) {
  const auto p = init_params(NetConfig{4, 257, 16, 12, 9});
  const double bound = 1.0 / std::sqrt(8.0 + 16.0);
  EXPECT_LE(p.freq_fwd.w_ih.cwiseAbs().maxCoeff(), bound);
  EXPECT_GE(p.freq_fwd.bias.middleCols(16, 16).minCoeff(), 1.0 - bound);
  EXPECT_LE(p.freq_fwd.bias.leftCols(16).cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(p.config().hidden_time, 12u);
  EXPECT_EQ(p.config().mics, 4u);
  EXPECT_THROW(init_params(NetConfig{0, 9, 8, 8, 0}), std::invalid_argument);
}

TEST(Forward, ZeroInputZeroBiasGivesZeroMasks) {
  auto p = init_params(tiny_config());
  p.visit([](const std::string& n, Mat& m, int) {
    if (n.ends_with("bias")) m.setZero();
  });
  Features x{Mat::Zero(54, 4), 6, 9};
  const auto like = stft(Signal(40, 0.0), kTiny);
  const auto m = forward(p, x, like);
  ASSERT_EQ(m.coh.frames, 6u);
  ASSERT_EQ(m.coh.bins, 9u);
  for (const auto& v : m.coh.data) EXPECT_EQ(v, cplx(0.0, 0.0));
  for (const auto& v : m.diff.data) EXPECT_EQ(v, cplx(0.0, 0.0));
}

TEST(Forward, MasksBoundedAndShapeErrors) {
  const auto p = init_params(tiny_config());
  std::mt19937_64 rng(2);
  Features x{Mat::Zero(54, 4), 6, 9};
  for (Eigen::Index i = 0; i < x.values.size(); ++i) x.values.data()[i] = 50.0 * randn(rng, 1)[0];
  const auto like = stft(Signal(40, 0.0), kTiny);
  const auto m = forward(p, x, like);
  for (const auto* s : {&m.coh, &m.diff})
    for (const auto& v : s->data) {
      EXPECT_LT(std::abs(v.real()), 1.0);
      EXPECT_LT(std::abs(v.imag()), 1.0);
    }
  Features bad{Mat::Zero(54, 6), 6, 9};
  EXPECT_THROW(forward(p, bad, like), std::invalid_argument);
  x.values(3, 1) = std::nan("");
  EXPECT_THROW(forward(p, x, like), std::invalid_argument);
}

TEST(Forward, TemporalCausality) {
  const auto p = init_params(tiny_config(5));
  std::mt19937_64 rng(3);
  Features x{Mat(9 * 10, 4), 10, 9};
  for (Eigen::Index i = 0; i < x.values.size(); ++i) x.values.data()[i] = randn(rng, 1)[0];
  const auto base = forward_trace(p, x);
  const std::size_t t0 = 6;
  for (std::size_t f = 0; f < 9; ++f) x.values.row(static_cast<Eigen::Index>(t0 * 9 + f)).array() += 0.7;
  const auto pert = forward_trace(p, x);
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(t0 * 9); ++r) {
    EXPECT_EQ(base.mask_coh.row(r), pert.mask_coh.row(r));
    EXPECT_EQ(base.mask_diff.row(r), pert.mask_diff.row(r));
  }
  EXPECT_NE(base.mask_coh.row(t0 * 9), pert.mask_coh.row(t0 * 9));
}

TEST(Forward, ShapeContractForVariousSizes) {
  const auto p = init_params(NetConfig{3, 0, 4, 5, 1});
  for (std::size_t t : {1u, 4u}) {
    for (std::size_t f : {1u, 5u, 33u}) {
      Features x{Mat::Constant(static_cast<Eigen::Index>(t * f), 6, 0.1), t, f};
      const auto tr = forward_trace(p, x);
      EXPECT_EQ(tr.mask_coh.rows(), static_cast<Eigen::Index>(t * f));
      EXPECT_EQ(tr.mask_diff.cols(), 2);
    }
  }
}

TEST(Loss, HandValues) {
  const std::vector<Signal> z{{1, 1}, {1, 1}}, est{{0, 1}, {1, 1}};
  EXPECT_NEAR(norm_l1_loss(est, z), 1.0 / (4.0 + 1e-7), 1e-15);
  EXPECT_EQ(norm_l1_loss(z, z), 0.0);
  const std::vector<Signal> zero{{0, 0}, {0, 0}};
  EXPECT_DOUBLE_EQ(norm_l1_loss(zero, z), 4.0 / (4.0 + 1e-7));
  EXPECT_THROW(norm_l1_loss(std::span(est).first(1), z), std::invalid_argument);
}

TEST(Loss, TotalLossLambda) {
  EXPECT_DOUBLE_EQ(total_loss(0.2, 0.3, 0.1, 1), 0.6);
  EXPECT_DOUBLE_EQ(total_loss(0.2, 0.3, 0.1, 0), 0.5);
  EXPECT_EQ(total_loss(0, 0, 0, 1), 0.0);
  EXPECT_THROW(total_loss(0.2, 0.3, 0.1, 2), std::invalid_argument);
}

TEST(Gradient, MatchesCentralDifferences) {
  for (int lambda : {0, 1}) {
    for (LossDomain domain : {LossDomain::time, LossDomain::spectral}) {
      auto p = init_params(tiny_config(11));
      const auto items = tiny_items(12);
      const auto batch = ptrs(items);
      const LossOptions opt{lambda, domain};
      const auto g = backward(p, batch, opt);
      auto gcopy = g;
      auto params = flat(p);
      auto grads = flat(gcopy);
      std::mt19937_64 rng(13);
      std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
      double worst = 0.0;
      const double h = 1e-5;
      for (int k = 0; k < 60; ++k) {
        const auto i = pick(rng);
        const double orig = *params[i];
        *params[i] = orig + h;
        const double up = evaluate_batch(p, batch, opt).loss.total;
        *params[i] = orig - h;
        const double down = evaluate_batch(p, batch, opt).loss.total;
        *params[i] = orig;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - *grads[i]) / std::max({std::abs(fd), std::abs(*grads[i]), 1e-6}));
      }
      EXPECT_LT(worst, 1e-4) << "lambda " << lambda << " spectral " << (domain == LossDomain::spectral);
    }
  }
}

TEST(Gradient, ZeroAtExactMinimum) {
  const auto p = init_params(tiny_config(21));
  auto items = tiny_items(22);
  for (auto& it : items) {
    const auto m = forward(p, it.features, it.y_ref);
    const auto e = apply_and_combine(m, it.y_ref, it.beta);
    it.z_coh = istft(e.coh, kTiny);
    it.z_diff = istft(e.diff, kTiny);
    it.z_vdm = istft(e.vdm, kTiny);
  }
  LossTerms loss;
  const auto g = backward(p, ptrs(items), {1, LossDomain::time}, &loss);
  EXPECT_EQ(loss.total, 0.0);
  EXPECT_LT(grad_norm(g), 1e-10);
}

TEST(Gradient, LambdaZeroIgnoresVdmTargetsAndBeta) {
  const auto p = init_params(tiny_config(31));
  auto items = tiny_items(32);
  const auto g1 = backward(p, ptrs(items), {0, LossDomain::time});
  for (auto& it : items) {
    for (auto& v : it.z_vdm) v = -3.0 * v + 1.0;
    it.beta *= 2.0;
  }
  const auto g2 = backward(p, ptrs(items), {0, LossDomain::time});
  EXPECT_EQ(encode_checkpoint(g1), encode_checkpoint(g2));
  const auto g3 = backward(p, ptrs(items), {1, LossDomain::time});
  EXPECT_NE(encode_checkpoint(g1), encode_checkpoint(g3));
}

TEST(Train, LearningRateZeroKeepsParameters) {
  auto p = init_params(tiny_config(41));
  const auto before = encode_checkpoint(p);
  const auto items = tiny_items(42, 3);
  TrainConfig cfg;
  cfg.adam.lr = 0.0;
  cfg.batch_size = 2;
  cfg.epochs = 2;
  const auto trace = train(p, items, cfg);
  EXPECT_EQ(trace.size(), 4u);
  EXPECT_EQ(encode_checkpoint(p), before);
}

TEST(Train, DeterministicTraceAndCsv) {
  const auto items = tiny_items(52, 4);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 3;
  cfg.seed = 5;
  auto p1 = init_params(tiny_config(51)), p2 = p1;
  std::ostringstream a, b;
  train(p1, items, cfg, &a);
  train(p2, items, cfg, &b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "step,L_coh,L_diff,L_vdm,L_final");
  EXPECT_EQ(encode_checkpoint(p1), encode_checkpoint(p2));
}

TEST(Train, LossDecreasesOnTinyProblem) {
  const auto items = tiny_items(62, 1);
  auto p = init_params(tiny_config(61));
  TrainConfig cfg;
  cfg.adam.lr = 1e-2;
  cfg.batch_size = 1;
  cfg.epochs = 200;
  const auto trace = train(p, items, cfg);
  EXPECT_LT(trace.back().loss.total, 0.7 * trace.front().loss.total);
}

TEST(Train, NonFiniteLossAborts) {
  auto items = tiny_items(72, 1);
  items[0].z_coh[3] = std::numeric_limits<double>::infinity();
  auto p = init_params(tiny_config(71));
  TrainConfig cfg;
  EXPECT_THROW(train(p, items, cfg), TrainingError);
  EXPECT_THROW(train(p, std::span<const TrainItem>{}, cfg), std::invalid_argument);
}

TEST(Train, ClipNormLimitsUpdate) {
  const auto items = tiny_items(82, 1);
  auto p = init_params(tiny_config(81));
  auto g = backward(p, ptrs(items), {});
  AdamConfig ac;
  ac.clip_norm = 1e-3;
  Adam opt(p, ac);
  auto before = p;
  opt.step(p, g);
  // Adam normalizes magnitudes, so each coordinate still moves by about lr.
  EXPECT_NEAR((p.out_coh.bias - before.out_coh.bias).cwiseAbs().maxCoeff(), 1e-3, 1e-4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto p = init_params(NetConfig{4, 257, 16, 12, 7});
  const auto path = (std::filesystem::temp_directory_path() / "vdm_ckpt_test.ndfp").string();
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  EXPECT_EQ(encode_checkpoint(q), encode_checkpoint(p));
  p.visit([&](const std::string& n, const Mat& m, int) {
    q.visit([&](const std::string& n2, const Mat& m2, int) {
      if (n == n2) {
        EXPECT_EQ(m, m2) << n;
      }
    });
  });
  std::filesystem::remove(path);

  std::mt19937_64 rng(1);
  Features x{Mat(5 * 257, 8), 5, 257};
  for (Eigen::Index i = 0; i < x.values.size(); ++i) x.values.data()[i] = randn(rng, 1)[0];
  EXPECT_EQ(forward_trace(p, x).mask_coh, forward_trace(q, x).mask_coh);
}

TEST(Checkpoint, Errors) {
  const auto b = encode_checkpoint(init_params(tiny_config()));
  auto truncated = b;
  truncated.resize(b.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), CheckpointError);
  auto magic = b;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), CheckpointError);
  auto version = b;
  version[4] = 9;
  EXPECT_THROW(decode_checkpoint(version), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt"), CheckpointError);
}

TEST(Infer, ChannelCountAndLinearCombination) {
  const auto p = init_params(tiny_config(91));
  std::mt19937_64 rng(92);
  Waveform w(16000.0, {randn(rng, 40), randn(rng, 40)});
  const auto a = infer(p, w, 0.0, kTiny);
  const auto b = infer(p, w, 0.5, kTiny);
  for (std::size_t i = 0; i < 40; ++i) {
    EXPECT_NEAR(a.vdm[i], a.coh[i], 1e-15);
    EXPECT_NEAR(b.vdm[i], b.coh[i] + 0.5 * b.diff[i], 1e-12);
  }
  Waveform three(16000.0, {randn(rng, 40), randn(rng, 40), randn(rng, 40)});
  EXPECT_THROW(infer(p, three, 0.5, kTiny), std::invalid_argument);
}
