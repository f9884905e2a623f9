#include "etap/training.hpp"

#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "etap/container.hpp"
#include "etap/parallel.hpp"

namespace etap {

namespace fs = std::filesystem;

template <typename T>
OptState<T> init_opt_state(const ParamSet<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

template <typename T>
void adamw_step(ParamSet<T>& params, const ParamSet<T>& grads, OptState<T>& state, const AdamWConfig& cfg,
                double lr) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v)) {
    throw ShapeError("adamw_step: parameter, gradient and moment layouts differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads.at(i).all_finite()) throw TrainingError("non-finite gradient for parameter '" + grads.name(i) + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_frozen_param(params.name(i))) continue;
    Tensor<T>& p = params.at(i);
    Tensor<T>& m = state.m.at(i);
    Tensor<T>& v = state.v.at(i);
    const Tensor<T>& g = grads.at(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = cfg.beta1 * static_cast<double>(m[k]) + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * static_cast<double>(v[k]) + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double pk = static_cast<double>(p[k]) * decay;
      p[k] = static_cast<T>(pk - lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps));
    }
  }
}

template OptState<float> init_opt_state<float>(const ParamSet<float>&);
template OptState<double> init_opt_state<double>(const ParamSet<double>&);
template void adamw_step<float>(ParamSet<float>&, const ParamSet<float>&, OptState<float>&, const AdamWConfig&,
                                double);
template void adamw_step<double>(ParamSet<double>&, const ParamSet<double>&, OptState<double>&,
                                 const AdamWConfig&, double);

void Schedule::validate() const {
  if (total_steps == 0) throw std::invalid_argument("schedule: total steps must be positive");
  if (warmup_steps >= total_steps) {
    throw std::invalid_argument("schedule: warmup (" + std::to_string(warmup_steps) + " steps) must be shorter than " +
                                "the run (" + std::to_string(total_steps) + " steps)");
  }
  if (!(peak_lr >= 0) || !std::isfinite(peak_lr)) throw std::invalid_argument("schedule: bad peak learning rate");
}

double lr_at(std::size_t step, const Schedule& s) {
  s.validate();
  if (step > s.total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) +
                            "]");
  }
  if (step < s.warmup_steps) return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (step == s.total_steps) return 0.0;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
  return s.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

PoseModel make_pose_model(const ModelConfig& cfg, const std::string& skeleton, std::uint64_t seed) {
  PoseModel m;
  m.config = cfg;
  m.skeleton = skeleton;
  m.tree = build_skeleton(skeleton_preset(skeleton));
  m.params = init_model_params<float>(cfg, m.tree, seed);
  return m;
}

OutputNorm compute_output_norm(const Dataset& data, std::size_t rows) {
  const std::size_t nj = data.joint_count();
  if (data.size() == 0) throw std::invalid_argument("output normalization: empty dataset");
  if (rows < nj) throw std::invalid_argument("output normalization: fewer rows than joints");
  OutputNorm n;
  n.offset = Tensor<double>(Shape{rows, 3});
  const float* p = data.poses.ptr();
  for (std::size_t s = 0; s < data.size(); ++s)
    for (std::size_t k = 0; k < 3 * nj; ++k) n.offset[k] += p[s * 3 * nj + k];
  for (std::size_t k = 0; k < 3 * nj; ++k) n.offset[k] /= static_cast<double>(data.size());
  double ss = 0;
  for (std::size_t s = 0; s < data.size(); ++s)
    for (std::size_t k = 3; k < 3 * nj; ++k) {
      const double d = p[s * 3 * nj + k] - n.offset[k];
      ss += d * d;
    }
  const double count = static_cast<double>(data.size() * 3 * (nj - 1));
  n.scale = count > 0 && ss > 0 ? std::sqrt(ss / count) : 1.0;
  return n;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch == 0) fail("batch must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) fail("lr must be positive");
  if (warmup_epochs >= epochs) fail("warmup_epochs must be below epochs");
  if (!(adamw.beta1 >= 0 && adamw.beta1 < 1) || !(adamw.beta2 >= 0 && adamw.beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(adamw.eps > 0)) fail("eps must be positive");
  if (!(adamw.weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(clip_norm >= 0)) fail("clip_norm must be non-negative");
  if (workers == 0) fail("workers must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"warmup_epochs", c.warmup_epochs},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"w_p", c.loss.w_p},
          {"w_c", c.loss.w_c},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"workers", c.workers},
          {"eval_train", c.eval_train}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.adamw.beta1 = j.value("beta1", c.adamw.beta1);
  c.adamw.beta2 = j.value("beta2", c.adamw.beta2);
  c.adamw.eps = j.value("eps", c.adamw.eps);
  c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
  c.loss.w_p = j.value("w_p", c.loss.w_p);
  c.loss.w_c = j.value("w_c", c.loss.w_c);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  c.eval_train = j.value("eval_train", c.eval_train);
  return c;
}

namespace {

nlohmann::json num_or_null(double x) { return std::isnan(x) ? nlohmann::json() : nlohmann::json(x); }
double num_or_nan(const nlohmann::json& j, const char* key) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<double>() : kNaN;
}

// Rows of the prediction that have ground truth.
Var<float> skeleton_rows(Var<float> pose, std::size_t nj) {
  if (pose.shape()[0] == nj) return pose;
  std::vector<std::size_t> rows(nj);
  for (std::size_t i = 0; i < nj; ++i) rows[i] = i;
  return gather_rows(pose, rows);
}

Tensor<float> pose_tensor(const Dataset& d, std::size_t i) {
  const std::size_t nj = d.joint_count();
  const float* p = d.poses.ptr() + i * 3 * nj;
  return Tensor<float>(Shape{nj, 3}, std::vector<float>(p, p + 3 * nj));
}

double sample_gradient(const PoseModel& model, const Dataset& data, std::size_t i, const LossWeights& w,
                       ParamSet<float>& grads) {
  Tape<float> tape;
  ParamBinder<float> b(tape, model.params);
  const auto hm = data.heatmaps(i);
  const auto out = model_forward(b, model.config, model.tree, hm.joint, hm.limb);
  const Var<float> gt = tape.constant(pose_tensor(data, i));
  const auto loss = total_loss(skeleton_rows(out.pose, data.joint_count()), gt, model.tree, w);
  const double value = static_cast<double>(loss.value.value()[0]);
  if (!std::isfinite(value)) throw NonFiniteError("loss is " + std::to_string(value) + " for sample " + std::to_string(i));
  tape.backward(loss.value);
  b.accumulate_grads(grads);
  return value;
}

double global_norm(const ParamSet<float>& g) {
  double ss = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (is_frozen_param(g.name(i))) continue;
    for (float x : g.at(i).values()) ss += static_cast<double>(x) * x;
  }
  return std::sqrt(ss);
}

void check_compatible(const PoseModel& model, const Dataset& data, const char* what) {
  if (data.joint_count() != model.tree.joint_count() || data.tree.names() != model.tree.names()) {
    throw std::invalid_argument(std::string(what) + ": dataset skeleton '" + data.config.skeleton +
                                "' does not match the model skeleton '" + model.skeleton + "'");
  }
  if (data.resolution() != model.config.resolution) {
    throw std::invalid_argument(std::string(what) + ": dataset heatmaps are " + std::to_string(data.resolution()) +
                                " px, the model expects " + std::to_string(model.config.resolution));
  }
}

nlohmann::json resume_key(const TrainConfig& c) {
  auto j = to_json(c);
  j.erase("workers");
  j.erase("eval_train");
  return j;
}

}  // namespace

TrainResult fit(PoseModel& model, const Dataset& train, const Dataset* heldout, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("fit: empty training set");
  check_compatible(model, train, "fit");
  if (heldout) check_compatible(model, *heldout, "fit (held-out)");

  const std::size_t n = train.size();
  const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const Schedule sched{cfg.epochs * per_epoch, cfg.warmup_epochs * per_epoch, cfg.lr};
  sched.validate();

  TrainResult result;
  OptState<float> opt = init_opt_state(model.params);
  std::size_t step = 0, first_epoch = 1;
  const bool checkpoints = !cfg.checkpoint_dir.empty();

  auto record_epoch = [&](EpochRecord r) {
    if (cfg.eval_train) r.train_mpjpe = evaluate(model, train, cfg.workers).mpjpe;
    if (heldout) r.heldout_mpjpe = evaluate(model, *heldout, cfg.workers).mpjpe;
    r.step = step;
    r.lr = lr_at(step, sched);
    result.history.push_back(r);
    if (checkpoints) {
      save_checkpoint(epoch_dir(cfg.checkpoint_dir, r.epoch), model, &opt,
                      {r.epoch, step, to_json(cfg), result.history});
    }
    if (on_epoch) on_epoch(r);
  };

  bool resumed = false;
  if (cfg.resume && checkpoints && fs::exists(cfg.checkpoint_dir)) {
    fs::path latest;
    try {
      latest = resolve_checkpoint(cfg.checkpoint_dir);
    } catch (const std::runtime_error&) {
    }
    if (!latest.empty()) {
      CheckpointInfo info;
      PoseModel saved = load_checkpoint(latest, &opt, &info);
      if (to_json(saved.config) != to_json(model.config) || saved.skeleton != model.skeleton) {
        throw std::invalid_argument("resume: checkpoint " + latest.string() + " holds a different model");
      }
      if (resume_key(train_config_from_json(info.train_config)) != resume_key(cfg)) {
        throw std::invalid_argument("resume: checkpoint " + latest.string() +
                                    " was written with different training settings");
      }
      model.params = std::move(saved.params);
      step = info.step;
      first_epoch = info.epoch + 1;
      result.history = info.history;
      resumed = true;
    }
  }
  result.first_step = step;
  if (!resumed) record_epoch(EpochRecord{});

  std::vector<std::size_t> order(n);
  const std::size_t workers = std::min(cfg.workers, cfg.batch);
  std::vector<ParamSet<float>> partial(workers, model.params.zeros_like());
  std::vector<double> partial_loss(workers);
  ParamSet<float> grads = model.params.zeros_like();

  for (std::size_t epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = Rng::derive(cfg.seed ^ 0x7368756666ULL, epoch);
    shuffle.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, n - start);
      try {
        parallel_ranges(count, workers, [&](std::size_t lo, std::size_t hi, std::size_t w) {
          partial[w].set_zero();
          partial_loss[w] = 0;
          for (std::size_t k = lo; k < hi; ++k)
            partial_loss[w] += sample_gradient(model, train, order[start + k], cfg.loss, partial[w]);
        });
      } catch (const NonFiniteError& e) {
        throw TrainingError("non-finite value at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                            "): " + e.what());
      }
      grads.set_zero();
      const std::size_t used = std::min(workers, count);
      for (std::size_t w = 0; w < used; ++w) {
        grads.add_scaled(partial[w], 1.0f);
        epoch_loss += partial_loss[w];
      }
      float factor = 1.0f / static_cast<float>(count);
      if (cfg.clip_norm > 0) {
        const double norm = global_norm(grads) * factor;
        if (norm > cfg.clip_norm) factor = static_cast<float>(factor * cfg.clip_norm / norm);
      }
      ParamSet<float> scaled = grads.zeros_like();
      scaled.add_scaled(grads, factor);
      const double lr = lr_at(step, sched);
      result.lr_trace.push_back(lr);
      try {
        adamw_step(model.params, scaled, opt, cfg.adamw, lr);
      } catch (const TrainingError& e) {
        throw TrainingError("step " + std::to_string(step) + ": " + e.what());
      }
      ++step;
    }
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = epoch_loss / static_cast<double>(n);
    record_epoch(r);
  }
  return result;
}

Pose3D predict(const PoseModel& model, const Dataset& data, std::size_t index) {
  Tape<float> tape(false);
  ParamBinder<float> b(tape, model.params, false);
  const auto hm = data.heatmaps(index);
  const auto out = model_forward(b, model.config, model.tree, hm.joint, hm.limb);
  Pose3D p = to_pose(out.pose.value());
  p.resize(data.joint_count());
  return p;
}

namespace {

void aggregate(EvalReport& r) {
  const std::size_t nj = r.joint_names.size();
  r.mpjpe = 0;
  r.pa_mpjpe = 0;
  r.pa_undefined = 0;
  r.per_joint.assign(nj, 0.0);
  double pa_sum = 0;
  for (const auto& s : r.samples) {
    r.mpjpe += s.mpjpe;
    if (std::isnan(s.pa_mpjpe)) {
      ++r.pa_undefined;
    } else {
      pa_sum += s.pa_mpjpe;
    }
    for (std::size_t j = 0; j < nj; ++j) r.per_joint[j] += s.joint_errors[j];
  }
  const double count = static_cast<double>(r.samples.size());
  if (count == 0) return;
  r.mpjpe /= count;
  const std::size_t defined = r.samples.size() - r.pa_undefined;
  r.pa_mpjpe = defined ? pa_sum / static_cast<double>(defined) : kNaN;
  for (double& e : r.per_joint) e /= count;
}

}  // namespace

EvalReport evaluate(const PoseModel& model, const Dataset& data, std::size_t workers) {
  check_compatible(model, data, "evaluate");
  EvalReport r;
  r.joint_names = model.tree.names();
  r.samples.resize(data.size());
  parallel_ranges(data.size(), workers, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Pose3D pred = predict(model, data, i);
      const Pose3D gt = data.pose(i);
      SampleMetrics& s = r.samples[i];
      s.joint_errors = per_joint_errors(pred, gt);
      s.mpjpe = mpjpe(pred, gt);
      try {
        s.pa_mpjpe = pa_mpjpe(pred, gt);
      } catch (const std::domain_error&) {
        s.pa_mpjpe = kNaN;
      }
    }
  });
  aggregate(r);
  return r;
}

namespace {

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const fs::path& path, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": not a number: '" + s + "'");
  }
  return v;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_eval_csv(const fs::path& path, const EvalReport& r, bool per_joint) {
  auto out = open_out(path);
  out << "sample,mpjpe,pa_mpjpe";
  if (per_joint)
    for (const auto& n : r.joint_names) out << ",err_" << n;
  out << '\n';
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    const auto& s = r.samples[i];
    out << i << ',' << fmt(s.mpjpe) << ',' << fmt(s.pa_mpjpe);
    if (per_joint)
      for (double e : s.joint_errors) out << ',' << fmt(e);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EvalReport read_eval_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  const auto header = split_csv(line);
  if (header.size() < 4 || header[0] != "sample" || header[1] != "mpjpe" || header[2] != "pa_mpjpe") {
    throw FormatError(path.string() + ": expected a per-joint evaluation CSV (sample,mpjpe,pa_mpjpe,err_...)");
  }
  EvalReport r;
  for (std::size_t c = 3; c < header.size(); ++c) {
    if (header[c].rfind("err_", 0) != 0) throw FormatError(path.string() + ": unexpected column '" + header[c] + "'");
    r.joint_names.push_back(header[c].substr(4));
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    if (cells[0] != std::to_string(r.samples.size())) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": samples out of order");
    }
    SampleMetrics s;
    s.mpjpe = parse_double(cells[1], path, lineno);
    s.pa_mpjpe = parse_double(cells[2], path, lineno);
    for (std::size_t c = 3; c < cells.size(); ++c) s.joint_errors.push_back(parse_double(cells[c], path, lineno));
    r.samples.push_back(std::move(s));
  }
  aggregate(r);
  return r;
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"step", r.step},
          {"train_loss", num_or_null(r.train_loss)},
          {"train_mpjpe", num_or_null(r.train_mpjpe)},
          {"heldout_mpjpe", num_or_null(r.heldout_mpjpe)},
          {"lr", r.lr}};
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.step = j.at("step").get<std::size_t>();
  r.train_loss = num_or_nan(j, "train_loss");
  r.train_mpjpe = num_or_nan(j, "train_mpjpe");
  r.heldout_mpjpe = num_or_nan(j, "heldout_mpjpe");
  r.lr = j.at("lr").get<double>();
  return r;
}

void write_history_csv(const fs::path& path, const std::vector<EpochRecord>& history) {
  auto out = open_out(path);
  out << "epoch,step,lr,train_loss,train_mpjpe,heldout_mpjpe\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.step << ',' << fmt(r.lr) << ',' << fmt(r.train_loss) << ',' << fmt(r.train_mpjpe)
        << ',' << fmt(r.heldout_mpjpe) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

fs::path epoch_dir(const fs::path& root, std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu", epoch);
  return root / buf;
}

void save_checkpoint(const fs::path& dir, const PoseModel& model, const OptState<float>* opt,
                     const CheckpointInfo& info) {
  fs::create_directories(dir);
  save_bundle(dir / "params.etab", model.params);
  if (opt) {
    ParamSet<float> moments;
    for (std::size_t i = 0; i < opt->m.size(); ++i) moments.add("m/" + opt->m.name(i), opt->m.at(i));
    for (std::size_t i = 0; i < opt->v.size(); ++i) moments.add("v/" + opt->v.name(i), opt->v.at(i));
    save_bundle(dir / "optimizer.etab", moments);
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : info.history) hist.push_back(to_json(r));
  const std::uint64_t seed = info.train_config.is_object() ? info.train_config.value("seed", std::uint64_t{0}) : 0;
  const nlohmann::json manifest = {
      {"format", "etap-checkpoint"},
      {"format_version", kCheckpointFormatVersion},
      {"version", ETAP_VERSION},
      {"model", to_json(model.config)},
      {"skeleton", model.skeleton},
      {"epoch", info.epoch},
      {"step", info.step},
      {"optimizer_step", opt ? opt->step : 0},
      {"has_optimizer", opt != nullptr},
      // Batch order of epoch e is drawn from Rng::derive(seed ^ tag, e).
      {"rng", {{"seed", seed}, {"next_epoch", info.epoch + 1}}},
      {"train_config", info.train_config},
      {"history", hist}};
  auto out = open_out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + (dir / "manifest.json").string());
}

PoseModel load_checkpoint(const fs::path& dir, OptState<float>* opt, CheckpointInfo* info) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("missing checkpoint: " + mpath.string() + " not found");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  if (m.value("format", "") != "etap-checkpoint") throw FormatError(mpath.string() + ": not a checkpoint manifest");
  if (m.value("format_version", 0) != kCheckpointFormatVersion) {
    throw FormatError(mpath.string() + ": unsupported checkpoint format version");
  }
  PoseModel model;
  model.config = model_config_from_json(m.at("model"));
  model.skeleton = m.at("skeleton").get<std::string>();
  model.tree = build_skeleton(skeleton_preset(model.skeleton));
  model.params = load_bundle<float>(dir / "params.etab");
  const auto expected = init_model_params<float>(model.config, model.tree, 0);
  if (!expected.same_layout(model.params)) {
    throw FormatError((dir / "params.etab").string() + ": parameters do not match the model in the manifest");
  }
  if (opt) {
    if (!m.value("has_optimizer", false)) throw FormatError(dir.string() + ": checkpoint has no optimizer state");
    const auto moments = load_bundle<float>(dir / "optimizer.etab");
    OptState<float> s;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      s.m.add(model.params.name(i), moments.get("m/" + model.params.name(i)));
      s.v.add(model.params.name(i), moments.get("v/" + model.params.name(i)));
    }
    if (!s.m.same_layout(model.params) || !s.v.same_layout(model.params)) {
      throw FormatError((dir / "optimizer.etab").string() + ": moment shapes do not match the parameters");
    }
    s.step = m.at("optimizer_step").get<std::uint64_t>();
    *opt = std::move(s);
  }
  if (info) {
    info->epoch = m.at("epoch").get<std::size_t>();
    info->step = m.at("step").get<std::size_t>();
    info->train_config = m.value("train_config", nlohmann::json::object());
    info->history.clear();
    for (const auto& r : m.value("history", nlohmann::json::array())) info->history.push_back(epoch_record_from_json(r));
  }
  return model;
}

fs::path resolve_checkpoint(const fs::path& path) {
  if (fs::exists(path / "manifest.json")) return path;
  fs::path best;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      const auto name = e.path().filename().string();
      if (e.is_directory() && name.rfind("epoch_", 0) == 0 && fs::exists(e.path() / "manifest.json") &&
          (best.empty() || name > best.filename().string())) {
        best = e.path();
      }
    }
  }
  if (best.empty()) throw std::runtime_error("missing checkpoint: no manifest.json in " + path.string());
  return best;
}

}  // namespace etap
