#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "mtd/nn/model.hpp"
#include "support/nn_oracle.hpp"

using namespace mtd;
using namespace mtd::nn;

namespace {

using MatD = Mat<double>;

std::vector<double> randv(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng r(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * r.uniform(-1.0, 1.0);
  return v;
}

MatD randm(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  auto v = randv(static_cast<std::size_t>(r * c), seed);
  return Eigen::Map<MatD>(v.data(), r, c);
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

// Max relative error between `analytic` and central differences of f over the values at `x`.
template <class V>
double fd_check(double* x, std::size_t n, const V& analytic, const std::function<double()>& f,
                double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2 * h)));
  }
  return worst;
}

HyperParams tiny_hyper(Activation act = Activation::Tanh, int lstm_layers = 1) {
  HyperParams h;
  h.conv_layers = 2;
  h.filters = {4, 4};
  h.lstm_layers = lstm_layers;
  h.lstm_units = lstm_layers == 1 ? std::vector<int>{5} : std::vector<int>{5, 4};
  h.seq_len_steps = 3;
  h.activation = act;
  h.bias_reg = 1e-2;
  return h;
}

const InputShape kTinyShape{3, 8, 8};

}  // namespace

TEST(Layers, ActivationDerivatives) {
  for (double x : {-1.3, -0.2, 0.4, 2.1})
    for (Activation a : {Activation::Tanh, Activation::Relu}) {
      const double fd = (activate(a, x + 1e-6) - activate(a, x - 1e-6)) / 2e-6;
      EXPECT_NEAR(activate_grad_from_output(a, activate(a, x)), fd, 1e-8);
    }
}

TEST(GradCheck, Conv2d) {
  Conv2dShape s{2, 3, 5, 6, 3};
  auto x = randv(s.cin * s.pixels(), 1), W = randv(s.weight_count(), 2), b = randv(s.cout, 3);
  auto r = randv(s.cout * s.pixels(), 4);
  std::vector<double> y(r.size()), cols(s.patch() * s.pixels());
  auto f = [&] {
    conv2d_forward(s, x.data(), W.data(), b.data(), y.data(), cols.data());
    double L = 0;
    for (std::size_t i = 0; i < y.size(); ++i) L += r[i] * y[i];
    return L;
  };
  std::vector<double> dW(W.size(), 0.0), db(b.size(), 0.0), dx(x.size());
  conv2d_backward(s, x.data(), W.data(), r.data(), dW.data(), db.data(), dx.data(), cols.data());
  EXPECT_LT(fd_check(W.data(), W.size(), dW, f), 1e-4);
  EXPECT_LT(fd_check(b.data(), b.size(), db, f), 1e-4);
  EXPECT_LT(fd_check(x.data(), x.size(), dx, f), 1e-4);
}

TEST(GradCheck, Kernel5Conv) {
  Conv2dShape s{1, 2, 6, 6, 5};
  auto x = randv(s.cin * s.pixels(), 11), W = randv(s.weight_count(), 12), b = randv(s.cout, 13);
  auto r = randv(s.cout * s.pixels(), 14);
  std::vector<double> y(r.size()), cols(s.patch() * s.pixels());
  auto f = [&] {
    conv2d_forward(s, x.data(), W.data(), b.data(), y.data(), cols.data());
    double L = 0;
    for (std::size_t i = 0; i < y.size(); ++i) L += r[i] * y[i];
    return L;
  };
  std::vector<double> dW(W.size(), 0.0), db(b.size(), 0.0), dx(x.size());
  conv2d_backward(s, x.data(), W.data(), r.data(), dW.data(), db.data(), dx.data(), cols.data());
  EXPECT_LT(fd_check(W.data(), W.size(), dW, f), 1e-4);
  EXPECT_LT(fd_check(x.data(), x.size(), dx, f), 1e-4);
}

TEST(GradCheck, MaxPool) {
  const std::size_t c = 3, h = 4, w = 6, n_out = c * 2 * 3;
  auto x = randv(c * h * w, 21);
  auto r = randv(n_out, 22);
  std::vector<double> y(n_out);
  std::vector<std::uint32_t> arg(n_out);
  auto f = [&] {
    maxpool2_forward(x.data(), c, h, w, y.data(), arg.data());
    double L = 0;
    for (std::size_t i = 0; i < n_out; ++i) L += r[i] * y[i];
    return L;
  };
  f();
  std::vector<double> dx(x.size());
  maxpool2_backward(r.data(), arg.data(), n_out, dx.data(), dx.size());
  EXPECT_LT(fd_check(x.data(), x.size(), dx, f), 1e-4);
}

TEST(GradCheck, MaxPoolOddSizeDropsTrailing) {
  std::vector<double> x(5 * 5);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  std::vector<double> y(4);
  std::vector<std::uint32_t> arg(4);
  maxpool2_forward(x.data(), 1, 5, 5, y.data(), arg.data());
  EXPECT_EQ(y, (std::vector<double>{6, 8, 16, 18}));
}

TEST(GradCheck, DropoutFixedMask) {
  const std::size_t n = 40;
  auto x = randv(n, 31), r = randv(n, 32);
  std::vector<double> m(n);
  auto f = [&] {
    dropout_mask(0.3, 77, 5, m.data(), n);
    double L = 0;
    for (std::size_t i = 0; i < n; ++i) L += r[i] * x[i] * m[i];
    return L;
  };
  f();
  std::vector<double> dx(n);
  for (std::size_t i = 0; i < n; ++i) dx[i] = r[i] * m[i];
  EXPECT_LT(fd_check(x.data(), n, dx, f), 1e-4);
}

TEST(Dropout, MaskStatistics) {
  std::vector<double> m(200000);
  dropout_mask(0.25, 9, 3, m.data(), m.size());
  double zeros = 0, mean = 0;
  for (double v : m) {
    zeros += v == 0.0;
    mean += v;
  }
  EXPECT_NEAR(zeros / m.size(), 0.25, 0.005);
  EXPECT_NEAR(mean / m.size(), 1.0, 0.01);
  std::vector<double> m2(m.size()), m3(m.size());
  dropout_mask(0.25, 9, 3, m2.data(), m2.size());
  dropout_mask(0.25, 9, 4, m3.data(), m3.size());
  EXPECT_EQ(m, m2);
  EXPECT_NE(m, m3);
}

class LstmGrad : public ::testing::TestWithParam<Activation> {};

TEST_P(LstmGrad, AllInputs) {
  LstmShape s{4, 3, GetParam()};
  const std::size_t S = 4;
  const Eigen::Index B = 2;
  auto wx = randv(s.wx_count(), 41), wh = randv(s.wh_count(), 42), b = randv(s.bias_count(), 43);
  std::vector<MatD> xs, rs;
  for (std::size_t t = 0; t < S; ++t) {
    xs.push_back(randm(B, 4, 50 + t));
    rs.push_back(randm(B, 3, 60 + t));
  }
  LstmCache<double> cache;
  auto f = [&] {
    lstm_forward(s, xs, wx.data(), wh.data(), b.data(), cache);
    double L = 0;
    for (std::size_t t = 0; t < S; ++t) L += (rs[t].array() * cache.h[t + 1].array()).sum();
    return L;
  };
  f();
  std::vector<double> dwx(wx.size(), 0.0), dwh(wh.size(), 0.0), db(b.size(), 0.0);
  std::vector<MatD> dxs;
  lstm_backward(s, cache, rs, wx.data(), wh.data(), dwx.data(), dwh.data(), db.data(), &dxs);
  EXPECT_LT(fd_check(wx.data(), wx.size(), dwx, f), 1e-4);
  EXPECT_LT(fd_check(wh.data(), wh.size(), dwh, f), 1e-4);
  EXPECT_LT(fd_check(b.data(), b.size(), db, f), 1e-4);
  for (std::size_t t = 0; t < S; ++t) {
    std::vector<double> g(dxs[t].data(), dxs[t].data() + dxs[t].size());
    EXPECT_LT(fd_check(xs[t].data(), static_cast<std::size_t>(xs[t].size()), g, f), 1e-4) << "t=" << t;
  }
}

INSTANTIATE_TEST_SUITE_P(Activations, LstmGrad, ::testing::Values(Activation::Tanh, Activation::Relu));

TEST(GradCheck, Dense) {
  MatD x = randm(3, 5, 71), r = randm(3, 2, 72);
  auto w = randv(10, 73), b = randv(2, 74);
  MatD y;
  auto f = [&] {
    dense_forward(x, w.data(), b.data(), 2, y);
    return (r.array() * y.array()).sum();
  };
  std::vector<double> dw(10, 0.0), db(2, 0.0);
  MatD dx;
  dense_backward(x, r, w.data(), dw.data(), db.data(), &dx);
  EXPECT_LT(fd_check(w.data(), w.size(), dw, f), 1e-4);
  EXPECT_LT(fd_check(b.data(), b.size(), db, f), 1e-4);
  std::vector<double> g(dx.data(), dx.data() + dx.size());
  EXPECT_LT(fd_check(x.data(), static_cast<std::size_t>(x.size()), g, f), 1e-4);
}

struct ModelCase {
  Activation act;
  int lstm_layers;
};

class ModelGrad : public ::testing::TestWithParam<ModelCase> {};

TEST_P(ModelGrad, FullTinyModel) {
  CnnLstm<double> m(tiny_hyper(GetParam().act, GetParam().lstm_layers), kTinyShape, 5);
  // Non-zero biases so the bias penalty contributes.
  Rng r(6);
  for (const auto& e : m.layout().entries)
    if (e.bias)
      for (std::size_t i = 0; i < e.size; ++i) m.params()[e.offset + i] += r.uniform(-0.3, 0.3);
  std::vector<std::vector<double>> vols;
  for (std::uint64_t v = 0; v < 4; ++v) vols.push_back(randv(kTinyShape.size(), 100 + v));
  Batch<double> batch;
  for (auto& v : vols) batch.volumes.push_back(v.data());
  batch.sequences = {{0, 1, 2}, {1, 2, 3}};
  const MatD target = randm(2, 3, 99);
  const ForwardOptions fo{true, 1234};
  auto f = [&] { return m.loss(m.forward(batch, fo), target); };
  f();
  Buf<double> grad;
  m.backward(target, grad);
  ASSERT_EQ(grad.size(), m.params().size());
  const double err = fd_check(m.params().data(), m.params().size(), grad, f);
  EXPECT_LT(err, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Configs, ModelGrad,
                         ::testing::Values(ModelCase{Activation::Tanh, 1}, ModelCase{Activation::Tanh, 2},
                                           ModelCase{Activation::Relu, 2}));

TEST(Model, DefaultParameterCount) {
  CnnLstm<float> m(HyperParams{}, InputShape{}, 1);
  EXPECT_EQ(m.feature_dim(), 800u);
  EXPECT_EQ(m.layout().total, 213977u);
  EXPECT_EQ(m.layout().at("lstm0.wx").shape, (std::vector<std::size_t>{800, 200}));
  EXPECT_EQ(m.layout().at("dense.weight").shape, (std::vector<std::size_t>{50, 3}));
}

TEST(Model, ZeroNetworkGivesZeroOutput) {
  CnnLstm<double> m(tiny_hyper(), kTinyShape, 3);
  m.zero();
  auto v = randv(kTinyShape.size(), 8);
  Batch<double> b{{v.data()}, {{0, 0, 0}}};
  const MatD y = m.forward(b);
  EXPECT_EQ(y.rows(), 1);
  EXPECT_EQ(y.cols(), 3);
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_EQ(y.data()[i], 0.0);
}

TEST(Model, EvalForwardIsDeterministicAndTrainUsesDropout) {
  CnnLstm<float> m(tiny_hyper(), kTinyShape, 3);
  std::vector<float> v(kTinyShape.size());
  Rng r(2);
  for (auto& x : v) x = static_cast<float>(r.normal());
  Batch<float> b{{v.data()}, {{0, 0, 0}}};
  const Mat<float> a = m.forward(b), c = m.forward(b);
  EXPECT_TRUE((a.array() == c.array()).all());
  EXPECT_FALSE(m.has_tape());
  const Mat<float> t = m.forward(b, {true, 1});
  EXPECT_TRUE(m.has_tape());
  EXPECT_FALSE((a.array() == t.array()).all());
}

TEST(Model, MatchesStraightLineOracle) {
  HyperParams h;  // reference architecture at double precision
  CnnLstm<double> m(h, InputShape{}, 42);
  Rng r(4);
  for (const auto& e : m.layout().entries)
    if (e.bias)
      for (std::size_t i = 0; i < e.size; ++i) m.params()[e.offset + i] += r.uniform(-0.2, 0.2);
  std::vector<std::vector<double>> vols;
  for (std::uint64_t v = 0; v < 6; ++v) vols.push_back(randv(InputShape{}.size(), 300 + v, 3.0));
  Batch<double> b;
  for (auto& v : vols) b.volumes.push_back(v.data());
  b.sequences = {{0, 1, 2, 3, 4, 5}, {5, 4, 3, 2, 1, 0}};
  const MatD y = m.forward(b);
  oracle::NaiveNet<double> naive{m};
  for (Eigen::Index s = 0; s < 2; ++s) {
    std::vector<const double*> seq;
    for (auto i : b.sequences[static_cast<std::size_t>(s)]) seq.push_back(vols[i].data());
    const auto ref = naive.predict(seq);
    for (Eigen::Index o = 0; o < 3; ++o)
      EXPECT_LE(std::abs(y(s, o) - ref[static_cast<std::size_t>(o)]), 1e-6 * std::max(1.0, std::abs(ref[static_cast<std::size_t>(o)])));
  }
}

TEST(Model, ReluTinyMatchesOracle) {
  CnnLstm<double> m(tiny_hyper(Activation::Relu, 2), kTinyShape, 8);
  std::vector<std::vector<double>> vols;
  for (std::uint64_t v = 0; v < 3; ++v) vols.push_back(randv(kTinyShape.size(), 400 + v));
  Batch<double> b;
  for (auto& v : vols) b.volumes.push_back(v.data());
  b.sequences = {{0, 1, 2}};
  const MatD y = m.forward(b);
  const auto ref = oracle::NaiveNet<double>{m}.predict({vols[0].data(), vols[1].data(), vols[2].data()});
  for (Eigen::Index o = 0; o < 3; ++o) EXPECT_NEAR(y(0, o), ref[static_cast<std::size_t>(o)], 1e-12);
}

TEST(Model, ShapeErrors) {
  CnnLstm<double> m(tiny_hyper(), kTinyShape, 3);
  auto v = randv(kTinyShape.size(), 8);
  Batch<double> wrong_len{{v.data()}, {{0, 0}}};
  EXPECT_THROW(m.forward(wrong_len), Error);
  Batch<double> missing{{v.data()}, {{0, 0, 1}}};
  EXPECT_THROW(m.forward(missing), Error);
  HyperParams h = tiny_hyper();
  h.conv_layers = 4;
  h.filters = {4, 4, 4, 4};
  EXPECT_THROW((CnnLstm<double>(h, InputShape{1, 4, 4}, 0)), Error);
}

TEST(Backward, WithoutTapeIsStateError) {
  CnnLstm<double> m(tiny_hyper(), kTinyShape, 3);
  Buf<double> g;
  try {
    m.backward(MatD::Zero(1, 3), g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StateError);
  }
  auto v = randv(kTinyShape.size(), 8);
  Batch<double> b{{v.data()}, {{0, 0, 0}}};
  m.forward(b);  // eval mode records nothing
  EXPECT_THROW(m.backward(MatD::Zero(1, 3), g), Error);
  m.forward(b, {true, 1});
  m.backward(MatD::Zero(1, 3), g);
  EXPECT_THROW(m.backward(MatD::Zero(1, 3), g), Error);  // tape consumed
}

TEST(Backward, ZeroResidualGivesZeroGradient) {
  HyperParams h = tiny_hyper();
  h.bias_reg = 0.0;
  CnnLstm<double> m(h, kTinyShape, 3);
  auto v = randv(kTinyShape.size(), 8), w = randv(kTinyShape.size(), 9);
  Batch<double> b{{v.data(), w.data()}, {{0, 1, 0}, {1, 1, 0}}};
  const MatD y = m.forward(b, {true, 5});
  Buf<double> g;
  m.backward(y, g);
  for (double x : g) EXPECT_EQ(x, 0.0);
}

TEST(Backward, DoublingResidualDoublesOutputGradients) {
  HyperParams h = tiny_hyper();
  h.bias_reg = 0.0;
  CnnLstm<double> m(h, kTinyShape, 3);
  auto v = randv(kTinyShape.size(), 8);
  Batch<double> b{{v.data()}, {{0, 0, 0}}};
  const MatD t1 = randm(1, 3, 17);
  const MatD y = m.forward(b, {true, 5});
  Buf<double> g1, g2;
  m.backward(t1, g1);
  m.forward(b, {true, 5});
  m.backward(y - 2.0 * (y - t1), g2);
  for (const char* name : {"dense.weight", "dense.bias"}) {
    const auto& e = m.layout().at(name);
    for (std::size_t i = 0; i < e.size; ++i) EXPECT_NEAR(g2[e.offset + i], 2.0 * g1[e.offset + i], 1e-12);
  }
}

TEST(Loss, BiasRegularizationNeverLowersLoss) {
  HyperParams h = tiny_hyper();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    h.bias_reg = 0.0;
    CnnLstm<double> plain(h, kTinyShape, seed);
    h.bias_reg = 0.1;
    CnnLstm<double> reg(h, kTinyShape, seed);
    ASSERT_EQ(plain.params(), reg.params());
    auto v = randv(kTinyShape.size(), seed);
    Batch<double> b{{v.data()}, {{0, 0, 0}}};
    const MatD t = randm(1, 3, seed + 50);
    EXPECT_GE(reg.loss(reg.forward(b), t), plain.loss(plain.forward(b), t));
    EXPECT_GT(reg.bias_penalty(), 0.0);  // forget-gate biases start at 1
  }
}

TEST(Stream, MatchesBatchedForward) {
  CnnLstm<float> m(tiny_hyper(Activation::Tanh, 2), kTinyShape, 12);
  std::vector<std::vector<float>> vols(10, std::vector<float>(kTinyShape.size()));
  Rng r(3);
  for (auto& v : vols)
    for (auto& x : v) x = static_cast<float>(r.normal());
  std::vector<const float*> ptrs;
  for (auto& v : vols) ptrs.push_back(v.data());
  const auto streamed = infer_stream(m, ptrs);
  ASSERT_EQ(streamed.size(), 8u);
  Batch<float> b;
  b.volumes = ptrs;
  for (std::size_t t = 2; t < 10; ++t) b.sequences.push_back({t - 2, t - 1, t});
  const Mat<float> y = m.forward(b);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t o = 0; o < 3; ++o)
      EXPECT_NEAR(streamed[t][o], y(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(o)), 1e-6);
}

TEST(Stream, ColdStreamIsInsufficientHistory) {
  CnnLstm<float> m(tiny_hyper(), kTinyShape, 12);
  std::vector<float> v(kTinyShape.size(), 0.5f);
  try {
    infer_stream(m, {v.data(), v.data()});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientHistory);
  }
  StreamDecoder<float> d(m);
  EXPECT_FALSE(d.push(v.data()).has_value());
  EXPECT_THROW(d.current(), Error);
}

TEST(Stream, FutureFramesDoNotAffectPast) {
  CnnLstm<float> m(tiny_hyper(), kTinyShape, 12);
  std::vector<std::vector<float>> vols(9, std::vector<float>(kTinyShape.size()));
  Rng r(5);
  for (auto& v : vols)
    for (auto& x : v) x = static_cast<float>(r.normal());
  std::vector<const float*> ptrs;
  for (auto& v : vols) ptrs.push_back(v.data());
  const auto base = infer_stream(m, ptrs);
  for (std::size_t t = 2; t + 1 < ptrs.size(); ++t) {
    auto shuffled = ptrs;
    std::reverse(shuffled.begin() + static_cast<long>(t) + 1, shuffled.end());
    const auto out = infer_stream(m, shuffled);
    for (std::size_t s = 0; s + 2 <= t; ++s) EXPECT_EQ(out[s], base[s]) << "step " << s << " cut " << t;
  }
}

TEST(Stream, ResetIsolatesTrials) {
  CnnLstm<float> m(tiny_hyper(), kTinyShape, 12);
  std::vector<float> a(kTinyShape.size(), 0.3f), b(kTinyShape.size(), -0.7f);
  StreamDecoder<float> fresh(m), used(m);
  for (int i = 0; i < 5; ++i) used.push(a.data());
  used.reset();
  EXPECT_FALSE(used.warm());
  std::optional<std::vector<float>> y1, y2;
  for (int i = 0; i < 3; ++i) {
    y1 = fresh.push(b.data());
    y2 = used.push(b.data());
  }
  ASSERT_TRUE(y1 && y2);
  EXPECT_EQ(*y1, *y2);
}
