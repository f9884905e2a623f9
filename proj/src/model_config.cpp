#include "etap/model_config.hpp"

#include <stdexcept>

namespace etap {

HeadMode parse_head_mode(const std::string& s) {
  if (s == "per-joint") return HeadMode::kPerJoint;
  if (s == "global") return HeadMode::kGlobal;
  throw std::invalid_argument("unknown head mode '" + s + "' (expected per-joint|global)");
}

std::string to_string(HeadMode m) { return m == HeadMode::kPerJoint ? "per-joint" : "global"; }

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "gridvit") return EncoderKind::kGridViT;
  if (s == "cnn") return EncoderKind::kCnn;
  throw std::invalid_argument("unknown encoder '" + s + "' (expected gridvit|cnn)");
}

std::string to_string(EncoderKind k) { return k == EncoderKind::kGridViT ? "gridvit" : "cnn"; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (resolution == 0 || patch == 0 || resolution % patch != 0) fail("resolution must be a multiple of patch");
  if (width == 0 || heads == 0 || width % heads != 0) fail("width must be a multiple of heads");
  if (mlp == 0 || embed == 0) fail("mlp and embed must be positive");
  if (!(ln_eps > 0)) fail("ln_eps must be positive");
  if (extra_targets != 0 && head != HeadMode::kGlobal) fail("extra targets need the global head");
  if (encoder == EncoderKind::kCnn) {
    if (cnn_channels.empty()) fail("cnn needs at least one layer");
    if (propagation) fail("the cnn encoder has no per-joint features to propagate");
    if (head != HeadMode::kGlobal) fail("the cnn encoder needs the global head");
  }
}

ModelConfig model_preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "full") return c;
  if (name == "tiny") {
    c.resolution = 16;
    c.patch = 8;
    c.width = 64;
    c.heads = 2;
    c.mlp = 256;
    c.layers = 1;
    c.ek_hidden = {32, 8};
    c.embed = 4;
    c.er_hidden = {32, 8};
    c.cnn_channels = {8, 8, 16, 16};
    return c;
  }
  if (name == "desk") {
    c.resolution = 16;
    c.patch = 8;
    c.width = 32;
    c.heads = 2;
    c.mlp = 128;
    c.layers = 1;
    c.ek_hidden = {64, 32};
    c.embed = 16;
    c.er_hidden = {64, 32};
    c.cnn_channels = {32, 64, 128, 256};
    return c;
  }
  throw std::invalid_argument("unknown model preset '" + name + "' (expected full|tiny|desk)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"preset", c.preset},
          {"resolution", c.resolution},
          {"patch", c.patch},
          {"width", c.width},
          {"heads", c.heads},
          {"mlp", c.mlp},
          {"layers", c.layers},
          {"ek_hidden", c.ek_hidden},
          {"embed", c.embed},
          {"er_hidden", c.er_hidden},
          {"propagation", c.propagation},
          {"head", to_string(c.head)},
          {"extra_targets", c.extra_targets},
          {"encoder", to_string(c.encoder)},
          {"cnn_channels", c.cnn_channels},
          {"ln_eps", c.ln_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.preset = j.at("preset");
  c.resolution = j.at("resolution");
  c.patch = j.at("patch");
  c.width = j.at("width");
  c.heads = j.at("heads");
  c.mlp = j.at("mlp");
  c.layers = j.at("layers");
  c.ek_hidden = j.at("ek_hidden").get<std::vector<std::size_t>>();
  c.embed = j.at("embed");
  c.er_hidden = j.at("er_hidden").get<std::vector<std::size_t>>();
  c.propagation = j.at("propagation");
  c.head = parse_head_mode(j.at("head"));
  c.extra_targets = j.at("extra_targets");
  c.encoder = parse_encoder_kind(j.at("encoder"));
  c.cnn_channels = j.at("cnn_channels").get<std::vector<std::size_t>>();
  c.ln_eps = j.at("ln_eps");
  c.validate();
  return c;
}

}  // namespace etap
