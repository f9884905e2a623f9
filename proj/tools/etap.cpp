#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "etap/pipeline_check.hpp"
#include "etap/recon.hpp"
#include "etap/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace etap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Bad inputs that are not caught by a library precondition.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json num(double x) { return std::isnan(x) ? json() : json(x); }

std::uint64_t default_seed() {
  const char* env = std::getenv("ETAP_SEED");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw ValidationError(std::string("ETAP_SEED is not a seed: '") + env + "'");
  return v;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

fs::path sidecar(const fs::path& csv) { return fs::path(csv.string() + ".json"); }

std::string long_name(const CLI::Option* o) {
  for (const auto& n : o->get_lnames()) return n;
  return {};
}

/// Flat "<command>.<option>" map of every option value after parsing.
json resolved_config(const CLI::App* sub) {
  json cfg = json::object();
  for (const CLI::Option* o : sub->get_options()) {
    const std::string name = long_name(o);
    if (name.empty() || name == "help" || name == "config") continue;
    const std::string key = sub->get_name() + "." + name;
    if (o->get_expected_max() == 0) {
      cfg[key] = o->count() > 0;
    } else if (o->count() > 0) {
      const auto& r = o->results();
      cfg[key] = o->get_expected_max() > 1 ? json(r) : json(r.back());
    } else {
      cfg[key] = o->get_default_str();
    }
  }
  return cfg;
}

json run_manifest(const CLI::App* sub) {
  return {{"command", sub->get_name()}, {"version", ETAP_VERSION}, {"config", resolved_config(sub)}};
}

bool flag_given(const std::vector<std::string>& args, const std::string& name) {
  const std::string f = "--" + name;
  for (const auto& a : args)
    if (a == f || a.rfind(f + "=", 0) == 0) return true;
  return false;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  return v.dump();
}

/// Appends values from a flat dotted-key JSON file (or a run manifest) for the
/// options not given on the command line.
void apply_config_file(CLI::App& app, std::vector<std::string>& args) {
  std::string path, command;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (command.empty() && !args[i].empty() && args[i][0] != '-') command = args[i];
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || command.empty()) return;
  CLI::App* sub = app.get_subcommand_no_throw(command);
  if (!sub) return;
  json cfg = read_json(path);
  if (cfg.contains("command") && cfg.contains("config") && cfg["config"].is_object()) cfg = cfg["config"];
  if (!cfg.is_object()) throw ValidationError(path + ": expected a JSON object of dotted keys");
  for (const auto& [key, value] : cfg.items()) {
    std::string name = key;
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
      const std::string prefix = key.substr(0, dot);
      if (prefix != command) {
        if (app.get_subcommand_no_throw(prefix)) continue;
      } else {
        name = key.substr(dot + 1);
      }
    }
    const CLI::Option* opt = sub->get_option_no_throw("--" + name);
    if (!opt) {
      if (name != key) throw ValidationError(path + ": '" + key + "' is not an option of " + command);
      continue;
    }
    if (name == "config" || flag_given(args, name)) continue;
    if (opt->get_expected_max() == 0) {
      const bool on = value.is_boolean() ? value.get<bool>() : (scalar_text(value) == "true");
      if (on) args.push_back("--" + name);
    } else if (value.is_array()) {
      args.push_back("--" + name);
      for (const auto& v : value) args.push_back(scalar_text(v));
    } else {
      args.push_back("--" + name);
      args.push_back(scalar_text(value));
    }
  }
}

void print_eval(const EvalReport& r) {
  std::printf("samples %zu  MPJPE %.4f  PA-MPJPE %.4f", r.samples.size(), r.mpjpe, r.pa_mpjpe);
  if (r.pa_undefined) std::printf("  (PA undefined for %zu)", r.pa_undefined);
  std::printf("\n");
}

json eval_summary(const EvalReport& r) {
  json per_joint = json::object();
  for (std::size_t j = 0; j < r.per_joint.size(); ++j) per_joint[r.joint_names[j]] = r.per_joint[j];
  return {{"samples", r.samples.size()},
          {"mpjpe", num(r.mpjpe)},
          {"pa_mpjpe", num(r.pa_mpjpe)},
          {"pa_undefined", r.pa_undefined},
          {"per_joint", per_joint}};
}

json dataset_identity(const Dataset& d) { return {{"config", to_json(d.config)}, {"samples", d.size()}}; }

// ---- gen-data ----

struct GenDataArgs {
  std::string out, skeleton = "humanoid15", occlusion_mode = "zero";
  std::size_t samples = 100, resolution = 64, workers = 1;
  std::uint64_t seed = 1;
  double sigma = 2.0, limb_width = 1.5, occlusion = 0.0, attenuation = 0.25;
  double baseline = 8.0, drop = 2.0, pitch = 60.0, focal_scale = 0.35;
  bool depth_weighted = false;
};

int cmd_gen_data(const GenDataArgs& a, const CLI::App* sub) {
  DatasetConfig dc;
  dc.skeleton = a.skeleton;
  dc.samples = a.samples;
  dc.seed = a.seed;
  dc.rig.resolution = a.resolution;
  dc.rig.baseline = a.baseline;
  dc.rig.drop = a.drop;
  dc.rig.pitch_deg = a.pitch;
  dc.rig.focal_scale = a.focal_scale;
  dc.render.sigma = a.sigma;
  dc.render.limb_width = a.limb_width;
  dc.occlusion.rate = a.occlusion;
  dc.occlusion.depth_weighted = a.depth_weighted;
  dc.occlusion.mode = parse_occlusion_mode(a.occlusion_mode);
  dc.occlusion.attenuation = a.attenuation;
  Dataset ds = generate_dataset(dc, a.workers);
  ds.provenance = run_manifest(sub);
  write_dataset(ds, a.out);
  std::printf("wrote %zu samples to %s: %zu joints, %zu limbs, %zux%zu heatmaps, %zu occluded joint views\n", ds.size(),
              a.out.c_str(), ds.joint_count(), ds.limb.dim(1) / 2, ds.resolution(), ds.resolution(),
              ds.occluded_views);
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string data, heldout, out, preset = "desk", head = "per-joint", encoder = "gridvit";
  bool no_propagation = false, resume = false, eval_train = false;
  std::size_t extra_targets = 0, epochs = 16, batch = 32, warmup_epochs = 1, workers = 1;
  double lr = 1e-3, weight_decay = 1e-2, clip_norm = 0.0;
  std::uint64_t seed = 1;
};

int cmd_train(const TrainArgs& a, const CLI::App* sub) {
  const Dataset train = read_dataset(a.data);
  std::optional<Dataset> held;
  if (!a.heldout.empty()) held = read_dataset(a.heldout);

  ModelConfig mc = model_preset(a.preset);
  mc.encoder = parse_encoder_kind(a.encoder);
  mc.propagation = !a.no_propagation;
  mc.head = parse_head_mode(a.head);
  if (mc.encoder == EncoderKind::kCnn) {
    mc.propagation = false;
    mc.head = HeadMode::kGlobal;
  }
  mc.extra_targets = a.extra_targets;
  mc.validate();
  if (mc.resolution != train.resolution()) {
    throw ValidationError("dataset " + a.data + " has " + std::to_string(train.resolution()) + " px heatmaps but the '" +
                          a.preset + "' model expects " + std::to_string(mc.resolution));
  }

  PoseModel model = make_pose_model(mc, train.config.skeleton, a.seed);
  const OutputNorm norm = compute_output_norm(train, output_rows(mc, model.tree));
  set_output_norm(model.params, norm.scale, norm.offset);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.warmup_epochs = a.warmup_epochs;
  tc.adamw.weight_decay = a.weight_decay;
  tc.clip_norm = a.clip_norm;
  tc.seed = a.seed;
  tc.workers = a.workers;
  tc.eval_train = a.eval_train;
  tc.checkpoint_dir = a.out;
  tc.resume = a.resume;
  tc.validate();

  json manifest = run_manifest(sub);
  manifest["model"] = to_json(mc);
  manifest["train"] = to_json(tc);
  manifest["dataset"] = dataset_identity(train);
  if (held) manifest["heldout"] = dataset_identity(*held);
  write_json(fs::path(a.out) / "run.json", manifest);

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = fit(model, train, held ? &*held : nullptr, tc, [&](const EpochRecord& r) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %3zu  step %6zu  lr %.3e  loss %.5f  train %.4f  heldout %.4f  (%.0f s)\n", r.epoch, r.step, r.lr,
                r.train_loss, r.train_mpjpe, r.heldout_mpjpe, s);
    std::fflush(stdout);
  });
  write_history_csv(fs::path(a.out) / "history.csv", result.history);
  if (held) {
    const auto rep = evaluate(model, *held, a.workers);
    write_eval_csv(fs::path(a.out) / "heldout_eval.csv", rep, true);
    json side = run_manifest(sub);
    side["checkpoint"] = epoch_dir(a.out, a.epochs).string();
    side["skeleton"] = model.skeleton;
    side["dataset"] = dataset_identity(*held);
    side["summary"] = eval_summary(rep);
    write_json(sidecar(fs::path(a.out) / "heldout_eval.csv"), side);
    std::printf("held-out: ");
    print_eval(rep);
  }
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, data, out;
  bool per_joint = false;
  std::size_t workers = 1;
};

int cmd_eval(const EvalArgs& a, const CLI::App* sub) {
  const fs::path ckpt = resolve_checkpoint(a.checkpoint);
  const PoseModel model = load_checkpoint(ckpt);
  const Dataset data = read_dataset(a.data);
  const EvalReport rep = evaluate(model, data, a.workers);
  write_eval_csv(a.out, rep, a.per_joint);
  json side = run_manifest(sub);
  side["checkpoint"] = ckpt.string();
  side["skeleton"] = model.skeleton;
  side["dataset"] = dataset_identity(data);
  side["summary"] = eval_summary(rep);
  write_json(sidecar(a.out), side);
  print_eval(rep);
  return kExitOk;
}

// ---- prop-metrics ----

struct PropArgs {
  std::string np, p, out, skeleton;
};

int cmd_prop_metrics(const PropArgs& a, const CLI::App* sub) {
  const EvalReport rn = read_eval_csv(a.np);
  const EvalReport rp = read_eval_csv(a.p);
  std::optional<json> mn, mp;
  if (fs::exists(sidecar(a.np))) mn = read_json(sidecar(a.np));
  if (fs::exists(sidecar(a.p))) mp = read_json(sidecar(a.p));
  if (rn.samples.size() != rp.samples.size()) {
    throw ValidationError("sample misalignment: " + std::to_string(rn.samples.size()) + " vs " +
                          std::to_string(rp.samples.size()) + " samples");
  }
  if (rn.joint_names != rp.joint_names) throw ValidationError("sample misalignment: the reports use different joints");
  if (mn && mp && mn->contains("dataset") && mp->contains("dataset") && (*mn)["dataset"] != (*mp)["dataset"]) {
    throw ValidationError("sample misalignment: the reports were computed on different datasets");
  }
  std::string skeleton = a.skeleton;
  if (skeleton.empty() && mn) skeleton = mn->value("skeleton", "");
  if (skeleton.empty()) skeleton = "humanoid15";
  const SkeletonTree tree = build_skeleton(skeleton_preset(skeleton));
  if (tree.names() != rn.joint_names) throw ValidationError("the reports do not use the '" + skeleton + "' skeleton");

  std::vector<std::vector<double>> en, ep;
  for (const auto& s : rn.samples) en.push_back(s.joint_errors);
  for (const auto& s : rp.samples) ep.push_back(s.joint_errors);
  const auto rows = propagation_metrics(en, ep, tree);
  std::vector<double> x, y;
  for (const auto& r : rows) {
    x.push_back(r.pp);
    y.push_back(r.pe);
  }
  const Regression reg = linear_regression(x, y);

  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  std::ofstream out(a.out);
  if (!out) throw std::runtime_error("cannot write " + a.out);
  out << "sample,joint,name,pp,pe\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.pp, r.pe);
    out << r.sample << ',' << r.joint << ',' << tree.names()[r.joint] << ',' << buf << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + a.out);

  double pp_mean = 0, pe_mean = 0;
  for (std::size_t i = 0; i < x.size(); ++i) pp_mean += x[i], pe_mean += y[i];
  pp_mean /= static_cast<double>(x.size());
  pe_mean /= static_cast<double>(y.size());
  json side = run_manifest(sub);
  side["skeleton"] = skeleton;
  side["rows"] = rows.size();
  side["mean_pp"] = pp_mean;
  side["mean_pe"] = pe_mean;
  side["regression"] = {{"slope", reg.slope},
                        {"intercept", reg.intercept},
                        {"r", reg.r},
                        {"p_value", reg.p_value},
                        {"n", reg.n}};
  write_json(sidecar(a.out), side);
  std::printf("rows %zu  mean PP %.4f  mean PE %.4f  slope %.6f  intercept %.6f  r %.4f  p %.3g\n", rows.size(), pp_mean,
              pe_mean, reg.slope, reg.intercept, reg.r, reg.p_value);
  return kExitOk;
}

// ---- ablate-recon ----

struct ReconArgs {
  std::string grid, cnn, data, train_data, out;
  ReconConfig rc;
};

int cmd_ablate_recon(const ReconArgs& a, const CLI::App* sub) {
  const PoseModel grid = load_checkpoint(resolve_checkpoint(a.grid));
  const PoseModel cnn = load_checkpoint(resolve_checkpoint(a.cnn));
  Dataset test = read_dataset(a.data);
  Dataset train;
  if (!a.train_data.empty()) {
    train = read_dataset(a.train_data);
  } else {
    // First 80% of the samples fit the decoders, the rest is scored.
    const std::size_t n = test.size();
    const std::size_t cut = std::max<std::size_t>(1, n * 4 / 5);
    if (cut >= n) throw ValidationError("ablate-recon: need --train-data or at least 2 samples in --data");
    std::vector<std::size_t> tr(cut), te(n - cut);
    for (std::size_t i = 0; i < n; ++i) (i < cut ? tr[i] : te[i - cut]) = i;
    train = test.subset(tr);
    test = test.subset(te);
  }
  a.rc.validate();
  const auto rows = run_reconstruction_experiment(grid, cnn, train, test, a.rc);
  write_recon_csv(a.out, rows);
  json side = run_manifest(sub);
  side["train"] = dataset_identity(train);
  side["test"] = dataset_identity(test);
  side["zeros_streaming"] = zeros_mse_streaming(test);
  json table = json::array();
  for (const auto& r : rows) {
    table.push_back({{"variant", r.variant}, {"mse", r.mse}, {"epochs", r.epochs}, {"restarts", r.restarts}});
    std::printf("%-8s  mse %.6e  epochs %zu  restarts %zu\n", r.variant.c_str(), r.mse, r.epochs, r.restarts);
  }
  side["rows"] = table;
  write_json(sidecar(a.out), side);
  std::printf("gridvit < cnn: %s   cnn <= 1.05 zeros: %s\n", rows[0].mse < rows[1].mse ? "yes" : "no",
              rows[1].mse <= 1.05 * rows[2].mse ? "yes" : "no");
  return kExitOk;
}

// ---- grad-check ----

struct GradArgs {
  PipelineCheckConfig pc;
  bool keep_kinks = false;
  double threshold = 1e-5;
  std::string out;
};

int cmd_grad_check(const GradArgs& a, const CLI::App* sub) {
  if (!(a.threshold > 0)) throw ValidationError("--threshold must be positive");
  PipelineCheckConfig pc = a.pc;
  pc.skip_kinks = !a.keep_kinks;
  const auto rep = pipeline_grad_check(pc);
  for (std::size_t k = 0; k < rep.per_seed.size(); ++k) {
    const auto& r = rep.per_seed[k];
    std::printf("seed %3llu  coords %4zu  kinks skipped %zu  max rel err %.3e  at %s[%zu]",
                static_cast<unsigned long long>(a.pc.first_seed + k), r.coords_checked, r.kinks_skipped,
                r.max_rel_error, r.worst_param.c_str(), r.worst_index);
    if (a.pc.pure64) std::printf("  (pure 64-bit quotient %.3e)", rep.pure_per_seed[k].max_rel_error);
    std::printf("\n");
  }
  const bool pass = rep.max_rel_error <= a.threshold;
  std::printf("max relative error %.3e over %zu coordinates, %zu skipped at relu kinks (threshold %.1e): %s\n",
              rep.max_rel_error, rep.coords_checked, rep.kinks_skipped, a.threshold, pass ? "PASS" : "FAIL");
  if (!a.out.empty()) {
    json side = run_manifest(sub);
    side["max_rel_error"] = rep.max_rel_error;
    side["worst_seed"] = rep.worst_seed;
    side["coords_checked"] = rep.coords_checked;
    side["kinks_skipped"] = rep.kinks_skipped;
    if (a.pc.pure64) side["pure64_max_rel_error"] = rep.pure_max_rel_error;
    side["pass"] = pass;
    write_json(a.out, side);
  }
  return pass ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::uint64_t seed_default = 1;
  try {
    seed_default = default_seed();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  CLI::App app{"Heatmap-to-3D pose lifting: data generation, training, evaluation and analysis"};
  app.set_version_flag("--version", ETAP_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::string config_path;
  auto add_common = [&](CLI::App* s) {
    s->option_defaults()->always_capture_default();
    s->add_option("--config", config_path, "JSON file of flat dotted keys (<command>.<option>); flags win");
  };

  GenDataArgs g;
  g.seed = seed_default;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic stereo heatmap dataset");
  add_common(gen);
  gen->add_option("--out", g.out, "Output directory")->required();
  gen->add_option("--samples", g.samples, "Number of samples");
  gen->add_option("--seed", g.seed, "Seed (default: ETAP_SEED or 1)");
  gen->add_option("--skeleton", g.skeleton, "humanoid15, fork4 or chainN");
  gen->add_option("--resolution", g.resolution, "Heatmap side length in pixels");
  gen->add_option("--sigma", g.sigma, "Joint heatmap Gaussian sigma in pixels");
  gen->add_option("--limb-width", g.limb_width, "Limb heatmap band width in pixels");
  gen->add_option("--occlusion", g.occlusion, "Per-view joint occlusion rate in [0, 1]");
  gen->add_flag("--occlusion-depth", g.depth_weighted, "Scale the occlusion rate by relative depth");
  gen->add_option("--occlusion-mode", g.occlusion_mode, "zero or attenuate");
  gen->add_option("--attenuation", g.attenuation, "Heatmap factor for attenuated joints");
  gen->add_option("--baseline", g.baseline, "Camera baseline in cm");
  gen->add_option("--drop", g.drop, "Camera drop below the head in cm");
  gen->add_option("--pitch", g.pitch, "Downward camera tilt in degrees");
  gen->add_option("--focal-scale", g.focal_scale, "Focal length as a fraction of the resolution");
  gen->add_option("--workers", g.workers, "Worker threads");

  TrainArgs t;
  t.seed = seed_default;
  auto* tr = app.add_subcommand("train", "Train a pose model");
  add_common(tr);
  tr->add_option("--data", t.data, "Training dataset directory")->required();
  tr->add_option("--heldout", t.heldout, "Held-out dataset directory, evaluated every epoch");
  tr->add_option("--out", t.out, "Run directory (checkpoints, history.csv)")->required();
  tr->add_option("--preset", t.preset, "Model size: desk, tiny or full");
  tr->add_option("--encoder", t.encoder, "gridvit or cnn");
  tr->add_flag("--no-propagation", t.no_propagation, "Grid ViT only: predict every joint straight from F_J");
  tr->add_option("--head", t.head, "per-joint or global");
  tr->add_option("--extra-targets", t.extra_targets, "Extra rows predicted by the global head");
  tr->add_option("--epochs", t.epochs, "Epochs");
  tr->add_option("--batch", t.batch, "Batch size");
  tr->add_option("--lr", t.lr, "Peak learning rate");
  tr->add_option("--warmup-epochs", t.warmup_epochs, "Linear warmup length in epochs");
  tr->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay");
  tr->add_option("--clip-norm", t.clip_norm, "Gradient norm clip (0: off)");
  tr->add_option("--seed", t.seed, "Seed for weights and batch order (default: ETAP_SEED or 1)");
  tr->add_option("--workers", t.workers, "Worker threads");
  tr->add_flag("--eval-train", t.eval_train, "Also evaluate the training set after every epoch");
  tr->add_flag("--resume", t.resume, "Continue from the newest checkpoint in --out");

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (MPJPE, PA-MPJPE)");
  add_common(ev);
  ev->add_option("--checkpoint", e.checkpoint, "Checkpoint or run directory")->required();
  ev->add_option("--data", e.data, "Dataset directory")->required();
  ev->add_option("--out", e.out, "Per-sample CSV; a .json summary is written next to it")->required();
  ev->add_flag("--per-joint", e.per_joint, "Add per-joint error columns");
  ev->add_option("--workers", e.workers, "Worker threads");

  PropArgs p;
  auto* pm = app.add_subcommand("prop-metrics", "Propagation potential/effect rows and their regression");
  add_common(pm);
  pm->add_option("--np", p.np, "Per-joint eval CSV of the no-propagation model")->required();
  pm->add_option("--p", p.p, "Per-joint eval CSV of the propagation model")->required();
  pm->add_option("--out", p.out, "Output CSV")->required();
  pm->add_option("--skeleton", p.skeleton, "Skeleton (default: from the eval summary)");

  ReconArgs r;
  r.rc.seed = seed_default;
  auto* ab = app.add_subcommand("ablate-recon", "Heatmap reconstruction from frozen embeddings");
  add_common(ab);
  ab->add_option("--grid", r.grid, "Grid ViT pose model checkpoint")->required();
  ab->add_option("--cnn", r.cnn, "CNN pose model checkpoint")->required();
  ab->add_option("--data", r.data, "Test dataset (split 80/20 when --train-data is absent)")->required();
  ab->add_option("--train-data", r.train_data, "Dataset used to fit the decoders");
  ab->add_option("--out", r.out, "Output CSV")->required();
  ab->add_option("--epochs", r.rc.epochs, "Decoder epochs");
  ab->add_option("--batch", r.rc.batch, "Batch size");
  ab->add_option("--lr", r.rc.lr, "Peak learning rate");
  ab->add_option("--warmup-epochs", r.rc.warmup_epochs, "Warmup epochs");
  ab->add_option("--theta", r.rc.loss.theta, "Reconstruction error above which the min-max term is added");
  ab->add_option("--w-m", r.rc.loss.w_m, "Min-max term weight");
  ab->add_option("--hidden", r.rc.decoder.hidden, "Decoder hidden width");
  ab->add_option("--channels", r.rc.decoder.base_channels, "Decoder channels after the reshape");
  ab->add_option("--mid-channels", r.rc.decoder.mid_channels, "Decoder channels after the first upsampling");
  ab->add_option("--max-restarts", r.rc.max_restarts, "Restarts allowed after a collapse to zero");
  ab->add_option("--seed", r.rc.seed, "Seed (default: ETAP_SEED or 1)");
  ab->add_option("--workers", r.rc.workers, "Worker threads");

  GradArgs gc;
  auto* gk = app.add_subcommand("grad-check", "Full-pipeline gradient check against finite differences");
  add_common(gk);
  gk->add_option("--threshold", gc.threshold, "Largest accepted relative error");
  gk->add_option("--seeds", gc.pc.seeds, "Number of random models");
  gk->add_option("--first-seed", gc.pc.first_seed, "Seed of the first model");
  gk->add_option("--coords", gc.pc.coords_per_tensor, "Coordinates per parameter tensor (0: all)");
  gk->add_option("--step", gc.pc.step, "Finite-difference step");
  gk->add_option("--preset", gc.pc.preset, "Model size");
  gk->add_option("--skeleton", gc.pc.skeleton, "Skeleton");
  gk->add_flag("--pure64", gc.pc.pure64, "Also report the pure 64-bit difference quotient");
  gk->add_flag("--keep-kinks", gc.keep_kinks, "Also check coordinates whose difference straddles a relu kink");
  gk->add_option("--out", gc.out, "JSON report");

  try {
    apply_config_file(app, args);
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitValidation;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(g, gen);
    if (tr->parsed()) return cmd_train(t, tr);
    if (ev->parsed()) return cmd_eval(e, ev);
    if (pm->parsed()) return cmd_prop_metrics(p, pm);
    if (ab->parsed()) return cmd_ablate_recon(r, ab);
    if (gk->parsed()) return cmd_grad_check(gc, gk);
  } catch (const ValidationError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
