#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "revface/anonymizers.hpp"
#include "revface/autoencoder.hpp"
#include "revface/synthetic.hpp"

namespace fs = std::filesystem;
using namespace revface;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("revface_ae_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<ImagePair> blur_pairs(int identities, int per_identity, int resolution) {
  SyntheticParams p;
  p.identity_count = identities;
  p.images_per_identity = per_identity;
  p.resolution = resolution;
  std::vector<ImagePair> pairs;
  for (const auto& li : render_synthetic_faces(p)) {
    pairs.push_back({gaussian_blur(li.image, 3), li.image, li.identity_id});
  }
  return pairs;
}

AeHyperparams tiny_hyper(AeLoss loss, bool linear) {
  AeHyperparams h;
  h.features = 2;
  h.loss = loss;
  h.with_linear_layer = linear;
  h.seed = 17;
  return h;
}

// Straightforward loop implementation of the network, used as a reference
// for the GEMM-based forward pass.
struct Tensor {
  int c, h, w;
  std::vector<double> v;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

Tensor ref_conv3(const Tensor& in, const double* wt, const double* b, int cout) {
  Tensor out(cout, in.h, in.w);
  for (int co = 0; co < cout; ++co) {
    for (int y = 0; y < in.h; ++y) {
      for (int x = 0; x < in.w; ++x) {
        double acc = b[co];
        for (int ci = 0; ci < in.c; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y + ky - 1, xx = x + kx - 1;
              if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
              acc += wt[((co * in.c + ci) * 3 + ky) * 3 + kx] * in.at(ci, yy, xx);
            }
          }
        }
        out.at(co, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor ref_tconv4(const Tensor& in, const double* wt, const double* b, int cout) {
  Tensor out(cout, 2 * in.h, 2 * in.w);
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < out.h; ++oy) {
      for (int ox = 0; ox < out.w; ++ox) out.at(co, oy, ox) = b[co];
    }
  }
  for (int ci = 0; ci < in.c; ++ci) {
    for (int co = 0; co < cout; ++co) {
      for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
          for (int ky = 0; ky < 4; ++ky) {
            for (int kx = 0; kx < 4; ++kx) {
              const int oy = 2 * y + ky - 1, ox = 2 * x + kx - 1;
              if (oy < 0 || oy >= out.h || ox < 0 || ox >= out.w) continue;
              out.at(co, oy, ox) += wt[((ci * cout + co) * 4 + ky) * 4 + kx] * in.at(ci, y, x);
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor ref_pool(const Tensor& in) {
  Tensor out(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        out.at(c, y, x) = std::max({in.at(c, 2 * y, 2 * x), in.at(c, 2 * y, 2 * x + 1),
                                    in.at(c, 2 * y + 1, 2 * x), in.at(c, 2 * y + 1, 2 * x + 1)});
      }
    }
  }
  return out;
}

void ref_leaky(Tensor& t, double slope) {
  for (double& v : t.v) v = v > 0 ? v : slope * v;
}

std::vector<double> ref_forward(const AutoencoderModel<double>& m, const Image& img) {
  const AeLayout& l = m.layout;
  const double* p = m.params.data();
  const double slope = m.hyper.activation_slope;
  const int f = l.features;
  Tensor x(3, img.height(), img.width());
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = img.data()[i];
  Tensor a = ref_conv3(x, p + l.conv1_w.offset, p + l.conv1_b.offset, f);
  ref_leaky(a, slope);
  a = ref_pool(a);
  a = ref_conv3(a, p + l.conv2_w.offset, p + l.conv2_b.offset, f);
  ref_leaky(a, slope);
  a = ref_pool(a);
  if (l.linear) {
    const std::size_t n = a.v.size();
    std::vector<double> z(n);
    for (std::size_t o = 0; o < n; ++o) {
      double acc = p[l.lin_b.offset + o];
      for (std::size_t i = 0; i < n; ++i) acc += p[l.lin_w.offset + o * n + i] * a.v[i];
      z[o] = acc > 0 ? acc : slope * acc;
    }
    a.v = z;
  }
  a = ref_tconv4(a, p + l.tconv1_w.offset, p + l.tconv1_b.offset, f);
  ref_leaky(a, slope);
  a = ref_tconv4(a, p + l.tconv2_w.offset, p + l.tconv2_b.offset, f);
  ref_leaky(a, slope);
  a = ref_conv3(a, p + l.out_w.offset, p + l.out_b.offset, 3);
  for (double& v : a.v) v = 1.0 / (1.0 + std::exp(-v));
  return a.v;
}

}  // namespace

TEST(Autoencoder, ParameterCountMatchesLayerSum) {
  for (int f : {1, 4, 16}) {
    for (bool linear : {false, true}) {
      const std::uint64_t n = static_cast<std::uint64_t>(f) * 8 * 8;
      std::uint64_t expected = 0;
      expected += 3 * f * 9 + f;                 // conv1
      expected += f * f * 9 + f;                 // conv2
      if (linear) expected += n * n + n;
      expected += 2 * (f * f * 16 + f);          // two transposed convs
      expected += f * 3 * 9 + 3;                 // output conv
      EXPECT_EQ(ae_parameter_count(f, 32, 32, linear), expected);
      AeHyperparams h;
      h.features = f;
      h.with_linear_layer = linear;
      EXPECT_EQ(ae_init<float>(h, 32, 32).params.size(), expected);
    }
  }
}

TEST(Autoencoder, InitRejectsBadShapesAndOversizedModels) {
  AeHyperparams h;
  EXPECT_THROW(ae_init<float>(h, 30, 32), Error);
  h.max_parameters = 1000;
  EXPECT_THROW(ae_init<float>(h, 32, 32), Error);
}

TEST(Autoencoder, InitIsSeededAndBiasesStartAtZero) {
  AeHyperparams h = tiny_hyper(AeLoss::kMse, true);
  const auto a = ae_init<float>(h, 8, 8);
  EXPECT_EQ(a.params, ae_init<float>(h, 8, 8).params);
  h.seed += 1;
  EXPECT_NE(a.params, ae_init<float>(h, 8, 8).params);
  for (float b : a.block(a.layout.conv1_b)) EXPECT_EQ(b, 0.0f);
  const double bound = std::sqrt(6.0 / 27.0);
  for (float w : a.block(a.layout.conv1_w)) EXPECT_LE(std::abs(w), bound);
}

TEST(Autoencoder, ForwardMatchesLoopReference) {
  const auto pairs = blur_pairs(2, 1, 8);
  for (bool linear : {false, true}) {
    const auto model = ae_init<double>(tiny_hyper(AeLoss::kMse, linear), 8, 8);
    AeActivations<double> act;
    const auto x = image_to_buffer<double>(pairs[0].anonymized);
    ae_forward_batch<double>(model, x, 1, act);
    const auto expected = ref_forward(model, pairs[0].anonymized);
    ASSERT_EQ(act.output.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      EXPECT_NEAR(act.output[i], expected[i], 1e-12);
    }
  }
}

TEST(Autoencoder, BatchedForwardEqualsPerImageForward) {
  const auto pairs = blur_pairs(5, 4, 8);
  const auto model = ae_init<float>(tiny_hyper(AeLoss::kSsim, true), 8, 8);
  std::vector<Image> inputs;
  for (const auto& p : pairs) inputs.push_back(p.anonymized);
  const auto batched = ae_forward(model, inputs, 3);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Image single = ae_apply(model, inputs[i]);
    for (std::size_t k = 0; k < single.size(); ++k) {
      EXPECT_NEAR(batched[i].data()[k], single.data()[k], 1e-6);
    }
  }
}

TEST(Autoencoder, ForwardRejectsWrongResolution) {
  const auto model = ae_init<float>(tiny_hyper(AeLoss::kMse, true), 8, 8);
  EXPECT_THROW(ae_apply(model, Image(16, 16)), Error);
}

class GradientCheck : public ::testing::TestWithParam<std::tuple<AeLoss, bool>> {};

TEST_P(GradientCheck, AnalyticMatchesFiniteDifferences) {
  const auto [loss, linear] = GetParam();
  const auto pairs = blur_pairs(1, 1, 8);
  const auto model = ae_init<double>(tiny_hyper(loss, linear), 8, 8);
  // A small step keeps bias perturbations from crossing LeakyReLU kinks.
  EXPECT_LT(ae_gradient_check(model, pairs[0], 1e-6), 1e-3);
}

INSTANTIATE_TEST_SUITE_P(
    AllLosses, GradientCheck,
    ::testing::Combine(::testing::Values(AeLoss::kMse, AeLoss::kMae, AeLoss::kSsim),
                       ::testing::Bool()),
    [](const auto& info) {
      return std::string(to_string(std::get<0>(info.param))) +
             (std::get<1>(info.param) ? "_linear" : "_conv");
    });

TEST(Autoencoder, LossValuesMatchDirectFormulas) {
  std::vector<double> a = {0.1, 0.5, 0.9, 0.3}, b = {0.2, 0.5, 0.6, 0.0};
  EXPECT_NEAR(ae_loss<double>(AeLoss::kMse, a, b, 1, 1), (0.01 + 0 + 0.09 + 0.09) / 4, 1e-15);
  EXPECT_NEAR(ae_loss<double>(AeLoss::kMae, a, b, 1, 1), (0.1 + 0 + 0.3 + 0.3) / 4, 1e-15);
  const auto img = blur_pairs(1, 1, 8)[0].clear;
  const auto x = image_to_buffer<double>(img);
  EXPECT_NEAR(ae_loss<double>(AeLoss::kSsim, x, x, 8, 8), 0.0, 1e-12);
}

TEST(Hyperparams, JsonRoundTripAndValidation) {
  AeHyperparams h;
  h.features = 8;
  h.learning_rate = 3e-4;
  h.loss = AeLoss::kMae;
  h.with_linear_layer = false;
  h.seed = 99;
  const auto back = hyperparams_from_json(to_json(h));
  EXPECT_EQ(to_json(back), to_json(h));
  EXPECT_THROW(hyperparams_from_json({{"learning_rate", 0.0}}), Error);
  EXPECT_THROW(hyperparams_from_json({{"plateau_factor", 1.0}}), Error);
  EXPECT_THROW(hyperparams_from_json({{"loss", "huber"}}), Error);
  EXPECT_THROW(hyperparams_from_json({{"validation_fraction", 0.9}}), Error);
}

TEST(Training, ValidationSplitIsIdentityDisjoint) {
  const auto pairs = blur_pairs(10, 3, 8);
  const auto [train, val] = validation_split(pairs, 0.2, 5);
  EXPECT_EQ(train.size() + val.size(), pairs.size());
  EXPECT_FALSE(val.empty());
  std::set<std::string> train_ids, val_ids;
  for (auto i : train) train_ids.insert(pairs[i].identity_id);
  for (auto i : val) val_ids.insert(pairs[i].identity_id);
  for (const auto& id : val_ids) EXPECT_FALSE(train_ids.count(id)) << id;
  EXPECT_EQ(validation_split(pairs, 0.2, 5), validation_split(pairs, 0.2, 5));
}

TEST(Training, InsufficientDataIsAnError) {
  auto h = tiny_hyper(AeLoss::kMse, true);
  h.batch_size = 64;
  EXPECT_THROW(ae_train(blur_pairs(4, 2, 8), h), Error);
  EXPECT_THROW(ae_train(blur_pairs(1, 8, 8), h), Error);
}

TEST(Training, ResultDoesNotDependOnJobs) {
  const auto pairs = blur_pairs(12, 3, 8);
  auto h = tiny_hyper(AeLoss::kSsim, true);
  h.batch_size = 8;
  h.max_epochs = 3;
  h.learning_rate = 1e-3;
  const auto a = ae_train(pairs, h, {1, {}});
  const auto b = ae_train(pairs, h, {3, {}});
  EXPECT_EQ(a.model.params, b.model.params);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_EQ(a.log[i].val_loss, b.log[i].val_loss);
  }
}

TEST(Training, ScheduleAndBestEpochAreConsistent) {
  const auto pairs = blur_pairs(12, 3, 8);
  auto h = tiny_hyper(AeLoss::kMse, false);
  h.batch_size = 4;
  h.max_epochs = 25;
  h.learning_rate = 5e-2;
  h.plateau_patience = 1;
  h.plateau_factor = 0.5;
  h.early_stop_patience = 3;
  int callbacks = 0;
  const auto r = ae_train(pairs, h, {1, [&](const TrainingLogRow&) { ++callbacks; }});
  ASSERT_FALSE(r.log.empty());
  EXPECT_EQ(callbacks, static_cast<int>(r.log.size()));
  EXPECT_EQ(r.log.front().learning_rate, h.learning_rate);
  double best = r.log.front().val_loss;
  int best_epoch = 1;
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].epoch, static_cast<int>(i) + 1);
    if (i > 0) {
      const double ratio = r.log[i].learning_rate / r.log[i - 1].learning_rate;
      EXPECT_TRUE(ratio == 1.0 || std::abs(ratio - 0.5) < 1e-12) << ratio;
    }
    if (r.log[i].val_loss < best) {
      best = r.log[i].val_loss;
      best_epoch = r.log[i].epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(r.best_val_loss, best);
  if (static_cast<int>(r.log.size()) < h.max_epochs) {
    EXPECT_EQ(static_cast<int>(r.log.size()) - r.best_epoch, h.early_stop_patience);
  }
  const auto [train, val] = validation_split(pairs, h.validation_fraction, h.seed);
  EXPECT_NEAR(ae_evaluate_loss(r.model, pairs, val), r.best_val_loss, 1e-9);
}

TEST(Training, LearnsToReduceLoss) {
  const auto pairs = blur_pairs(16, 4, 8);
  auto h = tiny_hyper(AeLoss::kMse, true);
  h.features = 4;
  h.batch_size = 8;
  h.max_epochs = 30;
  h.learning_rate = 3e-3;
  const auto r = ae_train(pairs, h);
  EXPECT_LT(r.best_val_loss, 0.5 * r.log.front().val_loss);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = temp_dir("ckpt");
  auto model = ae_init<float>(tiny_hyper(AeLoss::kMae, true), 8, 12);
  model.params[3] = -0.0f;
  model.params[4] = 1e-38f;
  save_checkpoint(model, dir / "sub" / "model.bin");
  const auto back = load_checkpoint(dir / "sub" / "model.bin");
  EXPECT_EQ(to_json(back.hyper), to_json(model.hyper));
  EXPECT_EQ(back.height(), 8);
  EXPECT_EQ(back.width(), 12);
  ASSERT_EQ(back.params.size(), model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back.params[i]),
              std::bit_cast<std::uint32_t>(model.params[i]));
  }
}

TEST(Checkpoint, WeightsAreLittleEndianFloat32) {
  const auto dir = temp_dir("ckpt_le");
  auto model = ae_init<float>(tiny_hyper(AeLoss::kMse, false), 8, 8);
  model.params.back() = 1.0f;
  save_checkpoint(model, dir / "m.bin");
  std::ifstream in(dir / "m.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GE(bytes.size(), 4u);
  const std::vector<unsigned char> tail(bytes.end() - 4, bytes.end());
  EXPECT_EQ(tail, (std::vector<unsigned char>{0x00, 0x00, 0x80, 0x3f}));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RVAE");
}

TEST(Checkpoint, RejectsBadMagicVersionAndTruncation) {
  const auto dir = temp_dir("ckpt_bad");
  const auto model = ae_init<float>(tiny_hyper(AeLoss::kMse, true), 8, 8);
  save_checkpoint(model, dir / "good.bin");
  std::ifstream in(dir / "good.bin", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(write("magic.bin", bad_magic)), Error);
  std::string bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(load_checkpoint(write("version.bin", bad_version)), Error);
  EXPECT_THROW(load_checkpoint(write("short.bin", bytes.substr(0, bytes.size() - 3))), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), Error);
}

TEST(TrainingLog, CsvRoundTrip) {
  const auto dir = temp_dir("log");
  const std::vector<TrainingLogRow> log = {{1, 0.5, 0.6, 1e-3}, {2, 0.1 / 3, 0.4, 7.5e-4}};
  write_training_log_csv(log, dir / "training_log.csv");
  std::ifstream in(dir / "training_log.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,lr");
  const auto back = read_training_log_csv(dir / "training_log.csv");
  ASSERT_EQ(back.size(), log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(back[i].epoch, log[i].epoch);
    EXPECT_EQ(back[i].train_loss, log[i].train_loss);
    EXPECT_EQ(back[i].val_loss, log[i].val_loss);
    EXPECT_EQ(back[i].learning_rate, log[i].learning_rate);
  }
  std::ofstream(dir / "bad.csv") << "epoch,loss\n";
  EXPECT_THROW(read_training_log_csv(dir / "bad.csv"), Error);
}
