#include <gtest/gtest.h>

#include <fstream>

#include "etap/recon.hpp"

using namespace etap;

namespace {

Dataset small_data(std::size_t samples, std::uint64_t seed) {
  DatasetConfig dc;
  dc.skeleton = "fork4";
  dc.rig.resolution = 16;
  dc.render.sigma = 1.0;
  dc.samples = samples;
  dc.seed = seed;
  return generate_dataset(dc);
}

ModelConfig cnn_config() {
  auto c = model_preset("tiny");
  c.encoder = EncoderKind::kCnn;
  c.propagation = false;
  c.head = HeadMode::kGlobal;
  return c;
}

ReconConfig quick_recon(std::size_t epochs = 3) {
  ReconConfig rc;
  rc.epochs = epochs;
  rc.batch = 4;
  rc.lr = 3e-3;
  rc.decoder = {32, 4, 4};
  return rc;
}

}  // namespace

TEST(ZerosBaseline, EqualsMeanSquaredHeatmapValue) {
  const auto data = small_data(7, 2);
  double s = 0, n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto hm = data.heatmaps(i);
    for (float v : hm.joint.values()) s += double(v) * v, ++n;
  }
  EXPECT_NEAR(zeros_mse_batch(data), s / n, 1e-15);
  EXPECT_NEAR(zeros_mse_streaming(data), zeros_mse_batch(data), 1e-9);
  EXPECT_GT(zeros_mse_batch(data), 0.0);
}

TEST(FrozenEmbeddings, RowsMatchForwardPass) {
  const auto data = small_data(5, 2);
  const auto m = make_pose_model(model_preset("tiny"), "fork4", 3);
  const auto emb = frozen_embeddings(m, data, 2);
  ASSERT_EQ(emb.shape(), (Shape{5, 4 * 8}));
  Tape<float> tape;
  ParamBinder<float> b(tape, m.params);
  const auto hm = data.heatmaps(3);
  const auto e3 = model_forward(b, m.config, m.tree, hm.joint, hm.limb).embedding.value();
  for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(emb[3 * 32 + k], e3[k]);
  const auto cnn = frozen_embeddings(make_pose_model(cnn_config(), "fork4", 3), data);
  EXPECT_EQ(cnn.shape(), (Shape{5, 4 * 8}));
}

TEST(Decoder, TrainingIsDeterministicAndBeatsZeros) {
  const auto data = small_data(16, 2);
  const auto emb = frozen_embeddings(make_pose_model(model_preset("tiny"), "fork4", 3), data);
  auto rc = quick_recon(20);
  rc.lr = 1e-2;
  const auto a = train_decoder(emb, data, rc);
  const auto b = train_decoder(emb, data, rc);
  EXPECT_TRUE(bitwise_equal(a.params, b.params));
  EXPECT_EQ(a.restarts, 0u);
  EXPECT_EQ(a.epochs, 20u);
  const double mse = recon_mse(a.params, rc, emb, data);
  EXPECT_EQ(mse, recon_mse(a.params, rc, emb, data, 3));
  EXPECT_LT(mse, zeros_mse_batch(data));
}

TEST(Decoder, MinMaxTermVanishesBelowThreshold) {
  const auto data = small_data(12, 2);
  const auto emb = frozen_embeddings(make_pose_model(model_preset("tiny"), "fork4", 3), data);
  auto rc = quick_recon(8);
  rc.keep_trace = true;
  // Threshold near the zeros error so both branches occur.
  rc.loss.theta = zeros_mse_batch(data);
  const auto run = train_decoder(emb, data, rc);
  ASSERT_EQ(run.trace.size(), 8u * 12u);
  std::size_t below = 0, above = 0;
  for (const auto& s : run.trace) {
    if (s.l_r <= rc.loss.theta) {
      ++below;
      EXPECT_FALSE(s.minmax_active);
      EXPECT_EQ(s.l_m, 0.0);
    } else {
      ++above;
      EXPECT_TRUE(s.minmax_active);
    }
  }
  EXPECT_GT(below, 0u);
  EXPECT_GT(above, 0u);
}

TEST(Decoder, RestartsOnCollapseUpToLimit) {
  const auto data = small_data(8, 2);
  const auto emb = frozen_embeddings(make_pose_model(model_preset("tiny"), "fork4", 3), data);
  auto rc = quick_recon(4);
  rc.collapse_max = 1e30;  // every epoch looks collapsed
  const auto run = train_decoder(emb, data, rc);
  EXPECT_EQ(run.restarts, 5u);
  EXPECT_EQ(run.epochs, 4u);
  rc.max_restarts = 2;
  EXPECT_EQ(train_decoder(emb, data, rc).restarts, 2u);
  rc.collapse_max = -1;
  EXPECT_EQ(train_decoder(emb, data, rc).restarts, 0u);
}

TEST(Decoder, RestartUsesFreshWeights) {
  const auto data = small_data(8, 2);
  const auto emb = frozen_embeddings(make_pose_model(model_preset("tiny"), "fork4", 3), data);
  auto rc = quick_recon(3);
  const auto plain = train_decoder(emb, data, rc);
  rc.collapse_max = 1e30;
  rc.max_restarts = 1;
  const auto restarted = train_decoder(emb, data, rc);
  EXPECT_EQ(restarted.restarts, 1u);
  EXPECT_FALSE(bitwise_equal(plain.params, restarted.params));
}

TEST(ReconExperiment, ProducesThreeRowsAndIsRepeatable) {
  const auto train = small_data(8, 2), test = small_data(4, 9);
  const auto grid = make_pose_model(model_preset("tiny"), "fork4", 3);
  const auto cnn = make_pose_model(cnn_config(), "fork4", 3);
  const auto rc = quick_recon(2);
  const auto rows = run_reconstruction_experiment(grid, cnn, train, test, rc);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].variant, "gridvit");
  EXPECT_EQ(rows[1].variant, "cnn");
  EXPECT_EQ(rows[2].variant, "zeros");
  EXPECT_EQ(rows[2].mse, zeros_mse_batch(test));
  const auto again = run_reconstruction_experiment(grid, cnn, train, test, rc);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rows[i].mse, again[i].mse);
  EXPECT_THROW(run_reconstruction_experiment(cnn, grid, train, test, rc), std::invalid_argument);

  const auto path = std::filesystem::temp_directory_path() / "etap_recon_test.csv";
  write_recon_csv(path, rows);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variant,mse,epochs,restarts");
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 3u);
  std::filesystem::remove(path);
}

TEST(ReconConfig, JsonRoundTrip) {
  auto rc = quick_recon(5);
  rc.loss.theta = 1e-3;
  rc.seed = 17;
  EXPECT_EQ(to_json(recon_config_from_json(to_json(rc))), to_json(rc));
  rc.warmup_epochs = 5;
  EXPECT_THROW(rc.validate(), std::invalid_argument);
}
