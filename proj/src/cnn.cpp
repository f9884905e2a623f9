#include "etap/cnn.hpp"

#include <stdexcept>

namespace etap {

namespace {

std::size_t conv_out(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

template <typename T>
void add_conv(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(name + ".w", init::xavier_uniform<T>(rng, {out, in, 3, 3}, in * 9, out * 9));
  ps.add(name + ".b", init::zeros<T>({out}));
}

}  // namespace

template <typename T>
void add_cnn_encoder_params(ParamSet<T>& ps, const ModelConfig& cfg, std::size_t in_channels,
                            std::size_t out_features, Rng& rng) {
  std::size_t c = in_channels, side = cfg.resolution;
  for (std::size_t l = 0; l < cfg.cnn_channels.size(); ++l) {
    add_conv(ps, "cnn.conv" + std::to_string(l), c, cfg.cnn_channels[l], rng);
    c = cfg.cnn_channels[l];
    side = conv_out(side);
  }
  add_linear_params(ps, "cnn.out", c * side * side, out_features, rng);
}

template <typename T>
Var<T> cnn_encode(ParamBinder<T>& b, const ModelConfig& cfg, const Tensor<T>& heatmaps) {
  if (heatmaps.rank() != 3 || heatmaps.dim(1) != cfg.resolution || heatmaps.dim(2) != cfg.resolution) {
    throw ShapeError("cnn_encode: heatmaps " + shape_str(heatmaps.shape()) + " do not match resolution " +
                     std::to_string(cfg.resolution));
  }
  Var<T> x = b.tape().constant(heatmaps);
  for (std::size_t l = 0; l < cfg.cnn_channels.size(); ++l) {
    const std::string p = "cnn.conv" + std::to_string(l);
    Var<T> w = b(p + ".w");
    if (w.shape()[1] != x.shape()[0]) {
      throw ShapeError("cnn_encode: layer " + std::to_string(l) + " expects " + std::to_string(w.shape()[1]) +
                       " channels, got " + std::to_string(x.shape()[0]));
    }
    x = relu(conv2d(x, w, b(p + ".b"), 2, 1));
  }
  return affine(b, "cnn.out", reshape(x, {1, x.value().size()}));
}

template <typename T>
void add_decoder_params(ParamSet<T>& ps, const DecoderConfig& cfg, std::size_t embedding, std::size_t maps,
                        std::size_t resolution, Rng& rng) {
  if (resolution % 4 != 0) throw std::invalid_argument("decoder: resolution must be divisible by 4");
  const std::size_t q = resolution / 4;
  add_linear_params(ps, "dec.fc0", embedding, cfg.hidden, rng);
  add_linear_params(ps, "dec.fc1", cfg.hidden, cfg.base_channels * q * q, rng);
  add_conv(ps, "dec.conv0", cfg.base_channels, cfg.mid_channels, rng);
  add_conv(ps, "dec.conv1", cfg.mid_channels, maps, rng);
}

template <typename T>
Var<T> decode_heatmaps(ParamBinder<T>& b, const DecoderConfig& cfg, Var<T> embedding, std::size_t maps,
                       std::size_t resolution) {
  Var<T> w0 = b("dec.fc0.w");
  if (embedding.shape().size() != 2 || embedding.shape()[0] != 1 || embedding.shape()[1] != w0.shape()[0]) {
    throw ShapeError("decode_heatmaps: embedding " + shape_str(embedding.shape()) + " does not match decoder input " +
                     std::to_string(w0.shape()[0]));
  }
  const std::size_t q = resolution / 4;
  Var<T> x = relu(affine(b, "dec.fc0", embedding));
  x = reshape(affine(b, "dec.fc1", x), {cfg.base_channels, q, q});
  x = relu(conv2d(upsample2x(x), b("dec.conv0.w"), b("dec.conv0.b"), 1, 1));
  x = conv2d(upsample2x(x), b("dec.conv1.w"), b("dec.conv1.b"), 1, 1);
  if (x.shape()[0] != maps) throw ShapeError("decode_heatmaps: decoder emits the wrong heatmap count");
  return x;
}

#define ETAP_INSTANTIATE_CNN(T)                                                                               \
  template void add_cnn_encoder_params<T>(ParamSet<T>&, const ModelConfig&, std::size_t, std::size_t, Rng&);   \
  template Var<T> cnn_encode<T>(ParamBinder<T>&, const ModelConfig&, const Tensor<T>&);                        \
  template void add_decoder_params<T>(ParamSet<T>&, const DecoderConfig&, std::size_t, std::size_t, std::size_t, \
                                      Rng&);                                                                  \
  template Var<T> decode_heatmaps<T>(ParamBinder<T>&, const DecoderConfig&, Var<T>, std::size_t, std::size_t);

ETAP_INSTANTIATE_CNN(float)
ETAP_INSTANTIATE_CNN(double)
ETAP_INSTANTIATE_CNN(long double)

}  // namespace etap
