#include <gtest/gtest.h>

#include <filesystem>

#include "mtd/nn/io.hpp"
#include "mtd/nn/train.hpp"
#include "mtd/synth/forward_model.hpp"
#include "support/synthetic_examples.hpp"

using namespace mtd;
using namespace mtd::nn;
using testing_support::Synthetic;
using testing_support::kShape;

namespace {

HyperParams small_hyper() {
  HyperParams h;
  h.conv_layers = 2;
  h.filters = {8, 8};
  h.lstm_layers = 1;
  h.lstm_units = {16};
  h.seq_len_steps = 3;
  h.dropout = 0.1;
  h.learning_rate = 3e-3;
  h.batch_size = 10;
  return h;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam a(2, 0.1);
  std::vector<double> p{1.0, -1.0}, g{3.0, -0.001};
  a.step(p, g);
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -0.9, 1e-4);
}

TEST(Adam, MinimizesQuadratic) {
  Adam a(1, 0.05);
  std::vector<double> p{3.0}, g(1);
  for (int i = 0; i < 2000; ++i) {
    g[0] = 2 * (p[0] - 1.5);
    a.step(p, g);
  }
  EXPECT_NEAR(p[0], 1.5, 1e-3);
}

TEST(Train, OverfitsSmallSet) {
  Synthetic data(200);
  CnnLstm<float> m(small_hyper(), kShape, 7);
  TrainOptions opt;
  opt.seed = 3;
  const auto rep = train(m, data.source(), opt);
  ASSERT_GE(rep.epochs_run, 1);
  EXPECT_LT(rep.train_loss.back(), 0.1 * rep.train_loss.front())
      << "first " << rep.train_loss.front() << " last " << rep.train_loss.back();
  EXPECT_LE(rep.epochs_run, 12);
  // best_epoch is the argmin of val_loss
  const auto it = std::min_element(rep.val_loss.begin(), rep.val_loss.end());
  EXPECT_EQ(rep.best_epoch, static_cast<int>(it - rep.val_loss.begin()) + 1);
  for (double v : rep.val_loss) EXPECT_TRUE(std::isfinite(v));
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  Synthetic data(60);
  HyperParams h = small_hyper();
  h.learning_rate = 0.0;
  CnnLstm<float> m(h, kShape, 7);
  const auto before = m.params();
  TrainOptions opt;
  opt.max_epochs = 2;
  train(m, data.source(), opt);
  EXPECT_EQ(m.params(), before);
}

TEST(Train, DeterministicGivenSeed) {
  Synthetic data(80);
  TrainOptions opt;
  opt.max_epochs = 3;
  opt.seed = 11;
  CnnLstm<float> a(small_hyper(), kShape, 7), b(small_hyper(), kShape, 7);
  const auto ra = train(a, data.source(), opt);
  const auto rb = train(b, data.source(), opt);
  EXPECT_EQ(ra.train_loss, rb.train_loss);
  EXPECT_EQ(ra.val_loss, rb.val_loss);
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
  EXPECT_EQ(a.params(), b.params());
}

TEST(Train, ResumingMatchesOneRun) {
  Synthetic data(80);
  TrainOptions opt;
  opt.max_epochs = 4;
  opt.patience = 10;
  CnnLstm<float> a(small_hyper(), kShape, 7), b(small_hyper(), kShape, 7);
  Trainer ta(a, data.source(), opt), tb(b, data.source(), opt);
  ta.run(4);
  tb.run(1);
  tb.run(3);
  tb.run(4);
  EXPECT_EQ(ta.report().val_loss, tb.report().val_loss);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_TRUE(tb.done());
}

TEST(Train, SplitKeepsGroupsTogether) {
  Synthetic data(100);
  CnnLstm<float> m(small_hyper(), kShape, 7);
  Trainer t(m, data.source(), TrainOptions{});
  EXPECT_EQ(t.train_count() + t.val_count(), 100u);
  EXPECT_EQ(t.val_count(), 20u);  // 2 of 10 groups of 10
}

TEST(Train, RejectsTooLittleData) {
  Synthetic data(15);
  CnnLstm<float> m(small_hyper(), kShape, 7);
  try {
    train(m, data.source());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
  }
}

TEST(Train, SingleOutputModel) {
  Synthetic data(60);
  HyperParams h = small_hyper();
  h.outputs = 1;
  CnnLstm<float> m(h, kShape, 7);
  TrainOptions opt;
  opt.max_epochs = 2;
  const auto rep = train(m, data.source(1), opt);
  EXPECT_EQ(rep.epochs_run, 2);
  EXPECT_THROW(train(m, data.source(3), opt), Error);
}

TEST(ModelIo, RoundTripIsBitExact) {
  CnnLstm<float> m(small_hyper(), kShape, 9);
  for (auto& p : m.params()) p *= 1.000123f;
  const auto path = std::filesystem::temp_directory_path() / "mtd_model_roundtrip.bin";
  save_model(path, m, {{"config_hash", "abc"}});
  const auto back = load_model(path);
  EXPECT_EQ(back.hyper(), m.hyper());
  EXPECT_EQ(back.input_shape(), m.input_shape());
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(read_model_header(path).at("config_hash"), "abc");
  Synthetic data(4);
  Batch<float> b{{data.vols[0].data(), data.vols[1].data(), data.vols[2].data()}, {{0, 1, 2}}};
  const Mat<float> y1 = m.forward(b);
  auto back2 = back;
  const Mat<float> y2 = back2.forward(b);
  EXPECT_TRUE((y1.array() == y2.array()).all());
  std::filesystem::remove(path);
}

TEST(ModelIo, RejectsCorruptFiles) {
  CnnLstm<float> m(small_hyper(), kShape, 9);
  const auto path = std::filesystem::temp_directory_path() / "mtd_model_corrupt.bin";
  save_model(path, m);
  std::string buf = fmt::read_file(path.string());
  fmt::write_file(path.string(), buf.substr(0, buf.size() - 4));
  EXPECT_THROW(load_model(path), Error);
  fmt::write_file(path.string(), "not json\n");
  EXPECT_THROW(load_model(path), Error);
  std::filesystem::remove(path);
}
