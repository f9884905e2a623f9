#pragma once

#include "etap/training.hpp"

namespace etap {

struct ReconConfig {
  std::size_t epochs = 16;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t warmup_epochs = 1;
  AdamWConfig adamw;
  ReconLossConfig loss;
  DecoderConfig decoder;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  /// Restart when the largest reconstructed value stays below collapse_max
  /// for collapse_epochs consecutive epochs, at most max_restarts times.
  std::size_t collapse_epochs = 3;
  double collapse_max = 1e-3;
  std::size_t max_restarts = 5;
  /// Record (L_r, L_m) for every training sample.
  bool keep_trace = false;

  void validate() const;
};

nlohmann::json to_json(const ReconConfig& c);
ReconConfig recon_config_from_json(const nlohmann::json& j);

/// Frozen encoder output for every sample: [S, E] (flattened F_J for the
/// Grid ViT, the single embedding for the CNN).
Tensor<float> frozen_embeddings(const PoseModel& model, const Dataset& data, std::size_t workers = 1);

struct ReconStep {
  double l_r = 0;
  double l_m = 0;
  bool minmax_active = false;
};

struct DecoderRun {
  ParamSet<float> params;
  std::size_t epochs = 0;
  std::size_t restarts = 0;
  /// Largest reconstructed value seen in each epoch of the final attempt.
  std::vector<double> epoch_max;
  std::vector<ReconStep> trace;
};

/// Fits a fresh decoder from `embeddings` [S, E] to the joint heatmaps of `data`.
DecoderRun train_decoder(const Tensor<float>& embeddings, const Dataset& data, const ReconConfig& cfg);

/// Mean squared error per pixel over every joint heatmap of `data`.
double recon_mse(const ParamSet<float>& decoder, const ReconConfig& cfg, const Tensor<float>& embeddings,
                 const Dataset& data, std::size_t workers = 1);

/// Mean of the squared joint heatmap values, i.e. the error of predicting zeros.
/// Running-mean version and one-pass sum version.
double zeros_mse_streaming(const Dataset& data);
double zeros_mse_batch(const Dataset& data);

struct ReconRow {
  std::string variant;
  double mse = 0;
  std::size_t epochs = 0;
  std::size_t restarts = 0;
};

/// Rows gridvit, cnn, zeros. Each encoder gets its own decoder trained on `train`.
std::vector<ReconRow> run_reconstruction_experiment(const PoseModel& grid, const PoseModel& cnn, const Dataset& train,
                                                    const Dataset& test, const ReconConfig& cfg);

void write_recon_csv(const std::filesystem::path& path, const std::vector<ReconRow>& rows);

}  // namespace etap
