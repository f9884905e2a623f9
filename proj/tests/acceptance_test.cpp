// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <Eigen/Geometry>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>

#include "etap/pipeline_check.hpp"
#include "etap/recon.hpp"
#include "test_util.hpp"

using namespace etap;
using namespace etap::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename... A>
std::string fmt(const char* f, A... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path kWork = fs::temp_directory_path() / "etap_acceptance";

Outcome gradient_correctness() {
  PipelineCheckConfig cfg;
  cfg.seeds = 20;
  const auto t0 = Clock::now();
  const auto r = pipeline_grad_check(cfg);
  const double t = seconds_since(t0);
  cfg.pure64 = true;
  const auto rp = pipeline_grad_check(cfg);
  return {r.max_rel_error < 1e-5 && r.per_seed.size() >= 20 && t < 120.0,
          fmt("max rel error %.3g over %zu seeds (%zu coords, %zu skipped at relu kinks, worst seed %zu), %.1f s; "
              "pure 64-bit quotient %.3g (informational)",
              r.max_rel_error, r.per_seed.size(), r.coords_checked, r.kinks_skipped, r.worst_seed, t,
              rp.pure_max_rel_error)};
}

Outcome pu_reduces_to_lstm() {
  Rng rng(2024);
  double worst = 0;
  std::size_t joints = 0;
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig cfg = model_preset("tiny");
    cfg.embed = 1 + rng.below(4);
    const std::size_t s = cfg.state();
    ParamSet<double> ps;
    add_propagation_params(ps, cfg, rng);
    randomize(ps, rng, 0.3 + rng.uniform());
    const auto tree = trial == 0 ? build_skeleton(default_skeleton_config()) : random_tree(rng, 2 + rng.below(14));
    const std::size_t n = tree.joint_count();
    const auto fj = rand_t(rng, {n, s}, 2.0), fr = rand_t(rng, {n - 1, s}, 2.0);
    Tape<double> tape(false);
    ParamBinder<double> b(tape, ps, false);
    const auto fp = propagate(b, tree, tape.constant(fj), tape.constant(fr), {true}).f_p.value();
    for (std::size_t i = 1; i < n; ++i) {
      const auto ref = tree_lstm_ref(ps, tree, fj, fr, i);
      for (std::size_t k = 0; k < s; ++k) worst = std::max(worst, std::abs(fp.at(i - 1, k) - ref.l2.h[k]));
      ++joints;
    }
  }
  return {worst <= 1e-6, fmt("50 trees, %zu joints, max |PU - tree LSTM| = %.3g", joints, worst)};
}

Tensor<double> joint_features_from_patches(const ModelConfig& cfg, const ParamSet<double>& ps,
                                           const Tensor<double>& patches, const GridLayout& layout) {
  Tape<double> tape(false);
  ParamBinder<double> b(tape, ps, false);
  auto z = embed_patches(b, tape.constant(patches));
  auto zp = transformer_encode(b, cfg, z, layout.mask());
  return stereo_concat(regroup_and_compress(b, cfg, zp, layout)).value();
}

Outcome mask_invariance() {
  ModelConfig cfg = model_preset("tiny");
  Rng rng(303);
  std::size_t trials = 0, bitwise = 0;
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng init(seed);
    ParamSet<double> ps;
    add_encoder_params(ps, cfg, 30, init);
    const auto maps = init::uniform<double>(rng, {30, 16, 16}, 0.0, 1.0);
    const auto grid = assemble_grid(maps, cfg.patch);
    if (grid.layout.cells_per_side != 6) return {false, "30 heatmaps did not tile a 6x6 grid"};
    const auto ref = joint_features_from_patches(cfg, ps, patchify(grid.image, grid.layout), grid.layout);
    for (int t = 0; t < 20; ++t) {
      auto noisy = grid.image;
      for (std::size_t cell = 30; cell < 36; ++cell) {
        const std::size_t r0 = (cell / 6) * 16, c0 = (cell % 6) * 16;
        for (std::size_t y = 0; y < 16; ++y)
          for (std::size_t x = 0; x < 16; ++x) noisy.at(r0 + y, c0 + x) = rng.normal(0, 10);
      }
      const auto f = joint_features_from_patches(cfg, ps, patchify(noisy, grid.layout), grid.layout);
      for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, std::abs(f[i] - ref[i]));
      bitwise += bitwise_equal(f, ref);
      ++trials;
    }
  }
  return {worst <= 1e-6 && bitwise == trials,
          fmt("%zu noise trials on the 6 unassigned cells: max |dF_J| = %.3g, bitwise equal %zu/%zu", trials, worst,
              bitwise, trials)};
}

Outcome zero_depth_correspondence() {
  ModelConfig cfg = model_preset("tiny");
  cfg.layers = 0;
  Rng init(404), rng(405);
  ParamSet<double> ps;
  add_encoder_params(ps, cfg, 30, init);
  const auto maps = init::uniform<double>(rng, {30, 16, 16}, 0.0, 1.0);
  auto k_of = [&](const Tensor<double>& m) {
    Tape<double> tape(false);
    ParamBinder<double> b(tape, ps, false);
    const auto grid = assemble_grid(m, cfg.patch);
    auto z = embed_patches(b, tape.constant(patchify(grid.image, grid.layout)));
    return regroup_and_compress(b, cfg, transformer_encode(b, cfg, z, grid.layout.mask()), grid.layout).value();
  };
  const auto base = k_of(maps);
  const std::size_t e = cfg.embed;
  std::size_t leaks = 0, own_unchanged = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t jp = rng.below(30);
    auto changed = maps;
    for (std::size_t q = 0; q < 256; ++q) changed[jp * 256 + q] = rng.uniform();
    const auto k = k_of(changed);
    for (std::size_t j = 0; j < 30; ++j) {
      const bool same = std::memcmp(base.ptr() + j * e, k.ptr() + j * e, e * sizeof(double)) == 0;
      if (j != jp && !same) ++leaks;
      if (j == jp && same) ++own_unchanged;
    }
  }
  return {leaks == 0 && own_unchanged == 0,
          fmt("100 trials: %zu k_j changed by another heatmap, %zu perturbed heatmaps left their own k_j unchanged",
              leaks, own_unchanged)};
}

Mat3 random_rotation(Rng& rng) {
  const Vec3 axis(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
  return Eigen::AngleAxisd(rng.uniform(-M_PI, M_PI), axis.normalized()).toRotationMatrix();
}

Pose3D random_pose(Rng& rng, std::size_t n, double a = 30.0) {
  Pose3D p(n);
  for (auto& v : p) v = Vec3(rng.uniform(-a, a), rng.uniform(-a, a), rng.uniform(-a, a));
  return p;
}

Outcome procrustes_properties() {
  Rng rng(505);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const auto gt = random_pose(rng, 15);
    const Mat3 R = random_rotation(rng);
    const double s = rng.uniform(0.2, 5.0);
    const Vec3 tr(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100));
    Pose3D pred(gt.size());
    for (std::size_t j = 0; j < gt.size(); ++j) pred[j] = s * (R * gt[j]) + tr;
    worst = std::max(worst, pa_mpjpe(pred, gt));
  }
  // pa_mpjpe <= mpjpe: random noisy predictions plus one outlier configuration.
  std::size_t above = 0, checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto gt = random_pose(rng, 15);
    Pose3D pred = gt;
    const double sigma = rng.uniform(0.5, 20.0);
    for (auto& v : pred) v += Vec3(rng.normal(0, sigma), rng.normal(0, sigma), rng.normal(0, sigma));
    above += pa_mpjpe(pred, gt) > mpjpe(pred, gt);
    ++checked;
  }
  const Pose3D gt{{2.743, 0.279, 0.527},   {-1.826, -0.206, -3.168}, {2.465, 0.638, -0.512}, {-1.153, 1.347, 0.071},
                  {0.516, -0.546, -1.067}, {2.184, 1.338, 0.118},    {0.038, -0.353, -0.512}, {0.505, 0.650, -0.031}};
  Pose3D pred = gt;
  pred[1] = Vec3(2.086, 1.145, 1.656);
  const double out_pa = pa_mpjpe(pred, gt), out_mp = mpjpe(pred, gt);
  above += out_pa > out_mp;
  ++checked;
  return {worst < 1e-6 && above == 0,
          fmt("similarity copies: max pa_mpjpe %.3g over 100; pa_mpjpe > mpjpe in %zu of %zu cases (outlier case "
              "%.4f vs %.4f)",
              worst, above, checked, out_pa, out_mp)};
}

Outcome loss_identities() {
  const auto tree = build_skeleton(default_skeleton_config());
  Rng rng(606);
  double e_p = 0, e_c = 0, e_t = 0;
  for (int t = 0; t < 50; ++t) {
    const auto gt = to_tensor(random_pose(rng, 15));
    Tape<double> tape(false);
    const auto l = total_loss(tape.constant(gt), tape.constant(gt), tree, LossWeights{0.1, -0.01});
    e_p = std::max(e_p, std::abs(l.pose.value()[0]));
    e_c = std::max(e_c, std::abs(l.cosine.value()[0] - 1.0));
    e_t = std::max(e_t, std::abs(l.value.value()[0] + 0.01));
  }
  return {e_p <= 1e-12 && e_c <= 1e-12 && e_t <= 1e-12,
          fmt("50 poses: max |L_p| %.3g, max |L_c - 1| %.3g, max |total + 0.01| %.3g", e_p, e_c, e_t)};
}

Dataset overfit_data() {
  DatasetConfig dc;
  dc.rig.resolution = 16;
  dc.render.sigma = 1.0;
  dc.samples = 64;
  dc.seed = 3;
  return generate_dataset(dc);
}

PoseModel normalized(ModelConfig cfg, const Dataset& data, std::uint64_t seed) {
  auto m = make_pose_model(cfg, data.config.skeleton, seed);
  const auto n = compute_output_norm(data, output_rows(cfg, m.tree));
  set_output_norm(m.params, n.scale, n.offset);
  return m;
}

TrainConfig overfit_config() {
  TrainConfig tc;
  tc.epochs = 16;
  tc.batch = 2;
  tc.lr = 1e-3;
  tc.warmup_epochs = 1;
  return tc;
}

Outcome training_sanity() {
  const auto data = overfit_data();
  const auto t0 = Clock::now();
  auto a = normalized(model_preset("tiny"), data, 1);
  const auto ra = fit(a, data, nullptr, overfit_config());
  const double t = seconds_since(t0);
  auto b = normalized(model_preset("tiny"), data, 1);
  const auto rb = fit(b, data, nullptr, overfit_config());
  bool same_history = ra.history.size() == rb.history.size();
  for (std::size_t e = 0; same_history && e < ra.history.size(); ++e)
    same_history = same_bits(ra.history[e].train_mpjpe, rb.history[e].train_mpjpe);
  const double first = ra.history.front().train_mpjpe, last = ra.history.back().train_mpjpe;
  const bool rerun = bitwise_equal(a.params, b.params) && same_history;
  return {last < 0.2 * first && rerun && t < 600.0,
          fmt("train MPJPE %.4f -> %.4f (%.1f%%) in 16 epochs, %.1f s; rerun bit-identical: %s", first, last,
              100.0 * last / first, t, rerun ? "yes" : "no")};
}

DatasetConfig desk_data_config(std::size_t samples, std::uint64_t seed) {
  DatasetConfig dc;
  dc.rig.resolution = 16;
  dc.render.sigma = 1.0;
  dc.occlusion.rate = 0.3;
  dc.samples = samples;
  dc.seed = seed;
  return dc;
}

struct DeskRuns {
  Dataset train, test;
  PoseModel np, p, cnn;
  EvalReport eval_np, eval_p;
  double seconds_np = 0, seconds_p = 0, seconds_cnn = 0;
};

PoseModel train_desk(ModelConfig cfg, const DeskRuns& d, double* seconds) {
  const auto t0 = Clock::now();
  auto m = normalized(cfg, d.train, 1);
  TrainConfig tc;
  tc.eval_train = false;
  fit(m, d.train, nullptr, tc);
  *seconds = seconds_since(t0);
  return m;
}

const DeskRuns& desk_runs() {
  static std::optional<DeskRuns> runs;
  if (!runs) {
    DeskRuns d;
    d.train = generate_dataset(desk_data_config(5000, 1));
    d.test = generate_dataset(desk_data_config(500, 2));
    ModelConfig np = model_preset("desk");
    np.propagation = false;
    d.np = train_desk(np, d, &d.seconds_np);
    d.p = train_desk(model_preset("desk"), d, &d.seconds_p);
    ModelConfig cnn = model_preset("desk");
    cnn.encoder = EncoderKind::kCnn;
    cnn.propagation = false;
    cnn.head = HeadMode::kGlobal;
    d.cnn = train_desk(cnn, d, &d.seconds_cnn);
    d.eval_np = evaluate(d.np, d.test);
    d.eval_p = evaluate(d.p, d.test);
    runs = std::move(d);
  }
  return *runs;
}

Outcome propagation_benefit() {
  const auto& d = desk_runs();
  const double ratio = d.eval_p.mpjpe / d.eval_np.mpjpe;
  const double minutes = (d.seconds_np + d.seconds_p) / 60.0;
  return {ratio <= 0.95 && minutes <= 60.0,
          fmt("held-out MPJPE no-propagation %.4f, full %.4f, ratio %.4f; training %.1f min", d.eval_np.mpjpe,
              d.eval_p.mpjpe, ratio, minutes)};
}

Outcome pp_pe_relationship() {
  const auto& d = desk_runs();
  std::vector<std::vector<double>> enp, ep;
  for (const auto& s : d.eval_np.samples) enp.push_back(s.joint_errors);
  for (const auto& s : d.eval_p.samples) ep.push_back(s.joint_errors);
  std::vector<double> x, y;
  for (const auto& r : propagation_metrics(enp, ep, d.p.tree)) {
    x.push_back(r.pp);
    y.push_back(r.pe);
  }
  const auto reg = linear_regression(x, y);
  return {reg.slope > 0 && reg.p_value < 0.05,
          fmt("PE vs PP over %zu (sample, joint) rows: slope %.4f, r %.4f, p %.3g", reg.n, reg.slope, reg.r,
              reg.p_value)};
}

Outcome reconstruction_ordering() {
  const auto& d = desk_runs();
  ReconConfig rc;
  const auto rows = run_reconstruction_experiment(d.p, d.cnn, d.train, d.test, rc);
  const double grid = rows[0].mse, cnn = rows[1].mse, zeros = rows[2].mse;
  return {grid < cnn && cnn <= 1.05 * zeros,
          fmt("test MSE grid vit %.4e, cnn %.4e, zeros %.4e (restarts %zu, %zu)", grid, cnn, zeros, rows[0].restarts,
              rows[1].restarts)};
}

bool same_eval(const EvalReport& a, const EvalReport& b) {
  if (a.samples.size() != b.samples.size() || !same_bits(a.mpjpe, b.mpjpe) || !same_bits(a.pa_mpjpe, b.pa_mpjpe))
    return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto &x = a.samples[i], &y = b.samples[i];
    if (!same_bits(x.mpjpe, y.mpjpe) || !same_bits(x.pa_mpjpe, y.pa_mpjpe) || x.joint_errors.size() != y.joint_errors.size())
      return false;
    for (std::size_t j = 0; j < x.joint_errors.size(); ++j)
      if (!same_bits(x.joint_errors[j], y.joint_errors[j])) return false;
  }
  return true;
}

Outcome serialization() {
  const fs::path dir = kWork / "serialization";
  fs::remove_all(dir);
  auto dc = desk_data_config(40, 11);
  const auto data = generate_dataset(dc);
  write_dataset(data, dir / "data");
  const auto back = read_dataset(dir / "data");
  const bool data_ok = bitwise_equal(data.joint, back.joint) && bitwise_equal(data.limb, back.limb) &&
                       bitwise_equal(data.poses, back.poses) && back.tree.parents() == data.tree.parents();
  write_dataset(back, dir / "data2");
  bool files_ok = true;
  for (const auto& f : fs::directory_iterator(dir / "data"))
    files_ok = files_ok && slurp(f.path()) == slurp(dir / "data2" / f.path().filename());

  auto m = normalized(model_preset("tiny"), data, 5);
  TrainConfig tc = overfit_config();
  tc.epochs = 2;
  tc.checkpoint_dir = dir / "run";
  fit(m, data, nullptr, tc);
  OptState<float> opt;
  CheckpointInfo info;
  const auto loaded = load_checkpoint(resolve_checkpoint(dir / "run"), &opt, &info);
  const bool params_ok = bitwise_equal(loaded.params, m.params);
  save_checkpoint(dir / "resaved", loaded, &opt, info);
  OptState<float> opt2;
  const auto again = load_checkpoint(dir / "resaved", &opt2);
  const bool ckpt_ok = bitwise_equal(again.params, m.params) && bitwise_equal(opt2.m, opt.m) &&
                       bitwise_equal(opt2.v, opt.v) && opt2.step == opt.step &&
                       slurp(dir / "resaved" / "params.etab") == slurp(epoch_dir(dir / "run", 2) / "params.etab") &&
                       slurp(dir / "resaved" / "optimizer.etab") == slurp(epoch_dir(dir / "run", 2) / "optimizer.etab");
  const bool eval_ok = same_eval(evaluate(m, back), evaluate(loaded, back));
  return {data_ok && files_ok && params_ok && ckpt_ok && eval_ok,
          fmt("dataset tensors %s, dataset files %s, checkpoint params %s, checkpoint re-save %s, reloaded eval %s",
              data_ok ? "bitwise" : "DIFFER", files_ok ? "identical" : "DIFFER", params_ok ? "bitwise" : "DIFFER",
              ckpt_ok ? "bitwise" : "DIFFER", eval_ok ? "bitwise" : "DIFFERS")};
}

}  // namespace

int main() {
  fs::create_directories(kWork);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"PU to tree-LSTM reduction", pu_reduces_to_lstm},
      {"mask invariance", mask_invariance},
      {"zero-depth correspondence", zero_depth_correspondence},
      {"procrustes properties", procrustes_properties},
      {"loss identities", loss_identities},
      {"training sanity", training_sanity},
      {"propagation benefit", propagation_benefit},
      {"PP/PE relationship", pp_pe_relationship},
      {"reconstruction ordering", reconstruction_ordering},
      {"serialization", serialization},
  };
  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu %s  %s: %s [%.0f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu of %zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
