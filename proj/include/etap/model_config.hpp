#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace etap {

enum class HeadMode { kPerJoint, kGlobal };
enum class EncoderKind { kGridViT, kCnn };

HeadMode parse_head_mode(const std::string& s);
std::string to_string(HeadMode m);
EncoderKind parse_encoder_kind(const std::string& s);
std::string to_string(EncoderKind k);

struct ModelConfig {
  std::string preset = "full";
  std::size_t resolution = 64;
  std::size_t patch = 16;
  std::size_t width = 1024;
  std::size_t heads = 8;
  std::size_t mlp = 4096;
  std::size_t layers = 3;
  std::vector<std::size_t> ek_hidden{2048, 512};
  /// Per-heatmap feature size k; joint, limb and state extents are 2k.
  std::size_t embed = 128;
  std::vector<std::size_t> er_hidden{2048, 512};
  bool propagation = true;
  HeadMode head = HeadMode::kPerJoint;
  /// Global head only: rows predicted beyond the skeleton's joints.
  std::size_t extra_targets = 0;
  EncoderKind encoder = EncoderKind::kGridViT;
  std::vector<std::size_t> cnn_channels{64, 128, 256, 512};
  double ln_eps = 1e-5;

  std::size_t state() const { return 2 * embed; }
  void validate() const;
};

/// "full": full-size layer plan. "tiny": gradient-check scale.
/// "desk": the scale used for CPU training experiments.
ModelConfig model_preset(const std::string& name);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace etap
