#pragma once

#include "etap/layers.hpp"
#include "etap/model_config.hpp"

namespace etap {

/// Strided convolution stack (kernel 3, stride 2, padding 1, ReLU) over the
/// channel-stacked joint heatmaps, then one affine map to `out_features`.
template <typename T>
void add_cnn_encoder_params(ParamSet<T>& ps, const ModelConfig& cfg, std::size_t in_channels,
                            std::size_t out_features, Rng& rng);

/// heatmaps [C, R, R] -> embedding [1, out_features].
template <typename T>
Var<T> cnn_encode(ParamBinder<T>& b, const ModelConfig& cfg, const Tensor<T>& heatmaps);

struct DecoderConfig {
  std::size_t hidden = 512;
  std::size_t base_channels = 16;
  std::size_t mid_channels = 16;
};

/// Affine -> ReLU -> affine -> reshape [C0, R/4, R/4] -> (upsample, conv 3x3) twice.
template <typename T>
void add_decoder_params(ParamSet<T>& ps, const DecoderConfig& cfg, std::size_t embedding, std::size_t maps,
                        std::size_t resolution, Rng& rng);

/// embedding [1, E] -> heatmaps [maps, R, R].
template <typename T>
Var<T> decode_heatmaps(ParamBinder<T>& b, const DecoderConfig& cfg, Var<T> embedding, std::size_t maps,
                       std::size_t resolution);

}  // namespace etap
