#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "etap/container.hpp"
#include "etap/dataset.hpp"
#include "etap/losses.hpp"
#include "etap/metrics.hpp"
#include "etap/model.hpp"

namespace etap {

inline constexpr int kCheckpointFormatVersion = 1;

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

template <typename T>
struct OptState {
  ParamSet<T> m;
  ParamSet<T> v;
  std::uint64_t step = 0;
};

template <typename T>
OptState<T> init_opt_state(const ParamSet<T>& params);

/// Decoupled weight decay, then a bias-corrected Adam update:
///   p <- p (1 - lr wd);  p <- p - lr m_hat / (sqrt(v_hat) + eps)
/// Frozen parameters (see is_frozen_param) are skipped. Moments are kept in T.
template <typename T>
void adamw_step(ParamSet<T>& params, const ParamSet<T>& grads, OptState<T>& state, const AdamWConfig& cfg,
                double lr);

struct Schedule {
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;
  double peak_lr = 1e-3;
  void validate() const;
};

/// Linear 0 -> peak over the warmup, then cosine down to exactly 0 at total_steps.
double lr_at(std::size_t step, const Schedule& s);

/// Weights plus the skeleton they were built for.
struct PoseModel {
  ModelConfig config;
  std::string skeleton = "humanoid15";
  SkeletonTree tree;
  ParamSet<float> params;
};

PoseModel make_pose_model(const ModelConfig& cfg, const std::string& skeleton, std::uint64_t seed);

struct OutputNorm {
  double scale = 1.0;
  Tensor<double> offset;  // [rows, 3]
};

/// offset = per-joint mean of the training poses (extra rows 0); scale = RMS
/// deviation from that mean over the non-root joints.
OutputNorm compute_output_norm(const Dataset& data, std::size_t rows);

struct TrainConfig {
  std::size_t epochs = 16;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t warmup_epochs = 1;
  AdamWConfig adamw;
  LossWeights loss;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  /// Also evaluate the training set after every epoch.
  bool eval_train = true;
  /// Checkpoint root; epoch e goes to <dir>/epoch_eee. Empty: no checkpoints.
  std::filesystem::path checkpoint_dir;
  /// Continue from the newest checkpoint in checkpoint_dir, if any.
  bool resume = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Epoch 0 is the untrained model; its loss columns are NaN.
struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double train_loss = kNaN;
  double train_mpjpe = kNaN;
  double heldout_mpjpe = kNaN;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  /// Learning rate used by every optimizer update of this call, in order.
  std::vector<double> lr_trace;
  std::size_t first_step = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch AdamW over `train`. Batch order comes from Rng::derive(seed, epoch);
/// per-worker gradient sums are reduced in worker order, so a fixed worker
/// count gives bitwise-identical runs.
TrainResult fit(PoseModel& model, const Dataset& train, const Dataset* heldout, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {});

struct SampleMetrics {
  double mpjpe = 0;
  double pa_mpjpe = 0;  // NaN when the prediction collapses to a point
  std::vector<double> joint_errors;
};

struct EvalReport {
  std::vector<SampleMetrics> samples;
  double mpjpe = 0;
  /// Mean over samples where PA-MPJPE is defined.
  double pa_mpjpe = 0;
  std::size_t pa_undefined = 0;
  std::vector<double> per_joint;
  std::vector<std::string> joint_names;
};

EvalReport evaluate(const PoseModel& model, const Dataset& data, std::size_t workers = 1);

/// Predicted skeleton joints of one sample, [N_J, 3].
Pose3D predict(const PoseModel& model, const Dataset& data, std::size_t index);

/// One row per sample: sample, mpjpe, pa_mpjpe[, err_<joint>...].
void write_eval_csv(const std::filesystem::path& path, const EvalReport& r, bool per_joint);
/// Reads a CSV written with per_joint = true and re-aggregates it.
EvalReport read_eval_csv(const std::filesystem::path& path);

struct CheckpointInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  nlohmann::json train_config = nlohmann::json::object();
  std::vector<EpochRecord> history;
};

/// <dir>/manifest.json, <dir>/params.etab and, with `opt`, <dir>/optimizer.etab.
void save_checkpoint(const std::filesystem::path& dir, const PoseModel& model, const OptState<float>* opt,
                     const CheckpointInfo& info);
PoseModel load_checkpoint(const std::filesystem::path& dir, OptState<float>* opt = nullptr,
                          CheckpointInfo* info = nullptr);
/// `path` itself when it holds a manifest, else the newest epoch_* below it.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);
std::filesystem::path epoch_dir(const std::filesystem::path& root, std::size_t epoch);

nlohmann::json to_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const nlohmann::json& j);
void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace etap
