#include <gtest/gtest.h>

#include "etap/dataset.hpp"
#include "etap/grad_check.hpp"
#include "etap/losses.hpp"
#include "etap/metrics.hpp"
#include "test_util.hpp"

using namespace etap;
using namespace etap::testing;

namespace {

/// Direct sliding-window convolution, stride s, zero padding p, kernel [out, in, k, k].
Tensor<double> conv_ref(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t s,
                        std::size_t p) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  Tensor<double> y(Shape{cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) {
              const long yy = static_cast<long>(i * s + u) - static_cast<long>(p);
              const long xx = static_cast<long>(j * s + v) - static_cast<long>(p);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
              acc += x[(c * h + yy) * wd + xx] * w[((o * cin + c) * k + u) * k + v];
            }
        y[(o * oh + i) * ow + j] = acc;
      }
  return y;
}

ModelConfig cnn_cfg() {
  ModelConfig c = model_preset("tiny");
  c.encoder = EncoderKind::kCnn;
  c.propagation = false;
  c.head = HeadMode::kGlobal;
  return c;
}

Dataset small_data(const std::string& skeleton, std::size_t samples, std::uint64_t seed) {
  DatasetConfig dc;
  dc.skeleton = skeleton;
  dc.rig.resolution = 16;
  dc.render.sigma = 1.0;
  dc.samples = samples;
  dc.seed = seed;
  return generate_dataset(dc);
}

}  // namespace

TEST(CnnEncoder, ZeroInputGivesZeroEmbedding) {
  auto cfg = cnn_cfg();
  Rng rng(1);
  ParamSet<double> ps;
  add_cnn_encoder_params(ps, cfg, 8, 4 * cfg.state(), rng);
  Tape<double> tape(false);
  ParamBinder<double> b(tape, ps, false);
  auto e = cnn_encode(b, cfg, Tensor<double>(Shape{8, 16, 16})).value();
  EXPECT_EQ(e.shape(), (Shape{1, 4 * cfg.state()}));
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(cnn_encode(b, cfg, Tensor<double>(Shape{6, 16, 16})), ShapeError);
  EXPECT_THROW(cnn_encode(b, cfg, Tensor<double>(Shape{8, 8, 8})), ShapeError);
}

TEST(CnnEncoder, FullSizeEmbeddingMatchesGridFeatureSize) {
  ModelConfig cfg = model_preset("full");
  cfg.encoder = EncoderKind::kCnn;
  cfg.propagation = false;
  cfg.head = HeadMode::kGlobal;
  auto tree = build_skeleton(default_skeleton_config());
  auto ps = init_model_params<float>(cfg, tree, 0);
  EXPECT_EQ(ps.get("cnn.conv0.w").shape(), (Shape{64, 30, 3, 3}));
  EXPECT_EQ(ps.get("cnn.out.w").shape(), (Shape{512 * 4 * 4, 15 * 256}));
}

TEST(CnnEncoder, MatchesDirectConvolution) {
  auto cfg = cnn_cfg();
  Rng rng(2);
  ParamSet<double> ps;
  add_cnn_encoder_params(ps, cfg, 8, 16, rng);
  randomize(ps, rng, 0.3);
  auto x = init::uniform<double>(rng, {8, 16, 16}, 0.0, 1.0);
  Tape<double> tape(false);
  ParamBinder<double> b(tape, ps, false);
  auto got = cnn_encode(b, cfg, x).value();
  Tensor<double> h = x;
  for (std::size_t l = 0; l < cfg.cnn_channels.size(); ++l) {
    const std::string p = "cnn.conv" + std::to_string(l);
    h = conv_ref(h, ps.get(p + ".w"), ps.get(p + ".b"), 2, 1);
    for (double& v : h.data()) v = std::max(0.0, v);
  }
  EXPECT_EQ(h.shape(), (Shape{16, 1, 1}));
  const Vec want = affine_ref(Vec(h.data().begin(), h.data().end()), ps.get("cnn.out.w"), ps.get("cnn.out.b"));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
}

TEST(Decoder, ZeroEmbeddingGivesZeroHeatmaps) {
  DecoderConfig dc{32, 4, 4};
  Rng rng(3);
  ParamSet<double> ps;
  add_decoder_params(ps, dc, 20, 6, 16, rng);
  Tape<double> tape(false);
  ParamBinder<double> b(tape, ps, false);
  auto out = decode_heatmaps(b, dc, tape.constant(Tensor<double>(Shape{1, 20})), 6, 16).value();
  EXPECT_EQ(out.shape(), (Shape{6, 16, 16}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(decode_heatmaps(b, dc, tape.constant(Tensor<double>(Shape{1, 19})), 6, 16), ShapeError);
  ParamSet<double> bad;
  EXPECT_THROW(add_decoder_params(bad, dc, 20, 6, 18, rng), std::invalid_argument);
}

TEST(Decoder, FullSizePlanShapes) {
  Rng rng(4);
  ParamSet<float> ps;
  add_decoder_params(ps, DecoderConfig{}, 15 * 256, 30, 64, rng);
  EXPECT_EQ(ps.get("dec.fc0.w").shape(), (Shape{15 * 256, 512}));
  EXPECT_EQ(ps.get("dec.fc1.w").shape(), (Shape{512, 4096}));
  EXPECT_EQ(ps.get("dec.conv1.w").shape(), (Shape{30, 16, 3, 3}));
}

TEST(Decoder, ReconLossGradientMatchesFiniteDifferences) {
  DecoderConfig dc{16, 4, 4};
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    ParamSet<double> ps;
    add_decoder_params(ps, dc, 12, 4, 8, rng);
    randomize(ps, rng, 0.4);
    const auto emb = rand_t(rng, {1, 12});
    auto target = init::uniform<double>(rng, {4, 8, 8}, 0.0, 0.2);
    target[17] = 1.0;
    ScalarFn<double> f = [&](ParamBinder<double>& b) {
      auto recon = decode_heatmaps(b, dc, b.tape().constant(emb), 4, 8);
      return recon_loss(b.tape().constant(target), recon).value;
    };
    auto rep = grad_check(f, ps);
    EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst_param << "[" << rep.worst_index << "]";
  }
}

TEST(Model, OutputShapesForEveryVariant) {
  auto tree = build_skeleton(skeleton_preset("fork4"));
  auto data = small_data("fork4", 1, 1);
  const auto hm = data.heatmaps(0);
  struct Case {
    ModelConfig cfg;
    std::size_t rows;
  };
  std::vector<Case> cases;
  ModelConfig full = model_preset("tiny");
  cases.push_back({full, 4});
  ModelConfig np = full;
  np.propagation = false;
  cases.push_back({np, 4});
  ModelConfig global = full;
  global.head = HeadMode::kGlobal;
  global.extra_targets = 2;
  cases.push_back({global, 6});
  cases.push_back({cnn_cfg(), 4});
  for (const auto& c : cases) {
    auto ps = init_model_params<float>(c.cfg, tree, 1);
    Tape<float> tape(false);
    ParamBinder<float> b(tape, ps, false);
    auto out = model_forward(b, c.cfg, tree, hm.joint, hm.limb);
    EXPECT_EQ(out.pose.shape(), (Shape{c.rows, 3}));
    EXPECT_EQ(out.embedding.shape(), (Shape{1, 4 * c.cfg.state()}));
    EXPECT_EQ(out.f_p.has_value(), c.cfg.propagation);
  }
}

TEST(Model, NoPropagationHasNoLimbOrUnitWeights) {
  auto tree = build_skeleton(skeleton_preset("fork4"));
  ModelConfig cfg = model_preset("tiny");
  cfg.propagation = false;
  auto ps = init_model_params<float>(cfg, tree, 1);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_NE(ps.name(i).rfind("pu", 0), 0u) << ps.name(i);
    EXPECT_NE(ps.name(i).rfind("er.", 0), 0u) << ps.name(i);
  }
  EXPECT_EQ(ps.get("head.w").shape(), (Shape{cfg.state(), 3}));
}

TEST(Model, InitIsDeterministicPerSeed) {
  auto tree = build_skeleton(skeleton_preset("fork4"));
  auto cfg = model_preset("tiny");
  EXPECT_TRUE(bitwise_equal(init_model_params<float>(cfg, tree, 7), init_model_params<float>(cfg, tree, 7)));
  EXPECT_FALSE(bitwise_equal(init_model_params<float>(cfg, tree, 7), init_model_params<float>(cfg, tree, 8)));
}

TEST(Model, OutputNormalizationIsAffineOnRawPose) {
  auto tree = build_skeleton(skeleton_preset("fork4"));
  auto cfg = model_preset("tiny");
  auto data = small_data("fork4", 1, 2);
  auto ps = init_model_params<double>(cfg, tree, 3);
  const auto joint = data.heatmaps(0).joint.cast<double>();
  const auto limb = data.heatmaps(0).limb.cast<double>();
  auto run = [&](const ParamSet<double>& p) {
    Tape<double> tape(false);
    ParamBinder<double> b(tape, p, false);
    return model_forward(b, cfg, tree, joint, limb).pose.value();
  };
  const auto raw = run(ps);
  Rng rng(3);
  const auto offset = rand_t(rng, {4, 3}, 10.0);
  set_output_norm(ps, 4.0, offset);
  const auto pose = run(ps);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_NEAR(pose[k], raw[k] * 4.0 + offset[k], 1e-12);
  EXPECT_THROW(set_output_norm(ps, 0.0, offset), std::invalid_argument);
  EXPECT_THROW(set_output_norm(ps, 1.0, Tensor<double>(Shape{3, 3})), ShapeError);
  EXPECT_TRUE(is_frozen_param(kNormScale));
  EXPECT_FALSE(is_frozen_param("head.w"));
}

TEST(Model, RootRowIsOriginInPerJointMode) {
  auto tree = build_skeleton(skeleton_preset("fork4"));
  auto cfg = model_preset("tiny");
  auto data = small_data("fork4", 1, 4);
  auto ps = init_model_params<float>(cfg, tree, 4);
  Tape<float> tape(false);
  ParamBinder<float> b(tape, ps, false);
  auto pose = model_forward(b, cfg, tree, data.heatmaps(0).joint, data.heatmaps(0).limb).pose.value();
  for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(pose[a], 0.0f);
}

TEST(Model, SingleAndDoublePrecisionAgree) {
  auto tree = build_skeleton(skeleton_preset("fork4"));
  auto cfg = model_preset("tiny");
  auto data = small_data("fork4", 1, 5);
  auto pf = init_model_params<float>(cfg, tree, 5);
  auto pd = pf.cast<double>();
  Tape<float> tf(false);
  ParamBinder<float> bf(tf, pf, false);
  Tape<double> td(false);
  ParamBinder<double> bd(td, pd, false);
  auto a = model_forward(bf, cfg, tree, data.heatmaps(0).joint, data.heatmaps(0).limb).pose.value();
  auto c = model_forward(bd, cfg, tree, data.heatmaps(0).joint.cast<double>(), data.heatmaps(0).limb.cast<double>())
               .pose.value();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], c[k], 1e-4);
}

TEST(Model, MismatchedHeatmapsThrow) {
  auto tree = build_skeleton(skeleton_preset("fork4"));
  auto cfg = model_preset("tiny");
  auto ps = init_model_params<float>(cfg, tree, 1);
  Tape<float> tape(false);
  ParamBinder<float> b(tape, ps, false);
  EXPECT_THROW(model_forward(b, cfg, tree, Tensor<float>(Shape{6, 16, 16}), Tensor<float>(Shape{6, 2, 16, 16})),
               ShapeError);
}

TEST(ModelConfig, ValidationAndRoundTrip) {
  ModelConfig c = model_preset("desk");
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.state(), 32u);
  const auto back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  ModelConfig bad = cnn_cfg();
  bad.propagation = true;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  ModelConfig extra = model_preset("tiny");
  extra.extra_targets = 2;
  EXPECT_THROW(extra.validate(), std::invalid_argument);
  ModelConfig patch = model_preset("tiny");
  patch.patch = 5;
  EXPECT_THROW(patch.validate(), std::invalid_argument);
  EXPECT_THROW(model_preset("huge"), std::invalid_argument);
}
