#pragma once

#include <vector>

#include "etap/layers.hpp"
#include "etap/model_config.hpp"

namespace etap {

/// Square grid of heatmap cells. Heatmap j occupies cell (j / side, j % side).
/// Patches are ordered cell-major: heatmap j owns patches
/// [j * per_cell, (j + 1) * per_cell), row-major inside the cell, and the
/// patches of unassigned cells come last.
struct GridLayout {
  std::size_t maps = 0;
  std::size_t resolution = 0;
  std::size_t patch = 0;
  std::size_t cells_per_side = 0;

  static GridLayout make(std::size_t maps, std::size_t resolution, std::size_t patch);

  std::size_t image_side() const { return resolution * cells_per_side; }
  std::size_t patches_per_cell_side() const { return resolution / patch; }
  std::size_t patches_per_cell() const { return patches_per_cell_side() * patches_per_cell_side(); }
  std::size_t total_patches() const { return cells_per_side * cells_per_side * patches_per_cell(); }
  std::size_t used_patches() const { return maps * patches_per_cell(); }
  std::size_t masked_cells() const { return cells_per_side * cells_per_side - maps; }
  /// True for patches that belong to an assigned cell.
  std::vector<bool> mask() const;
  /// Top-left pixel of patch `index` in the grid image.
  std::pair<std::size_t, std::size_t> patch_origin(std::size_t index) const;
};

template <typename T>
struct GridImage {
  Tensor<T> image;  // [side, side]
  GridLayout layout;
};

/// heatmaps [maps, R, R] -> single grid image; unassigned cells are zero.
template <typename T>
GridImage<T> assemble_grid(const Tensor<T>& heatmaps, std::size_t patch);

/// Grid image -> [total_patches, patch * patch] in layout order.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, const GridLayout& layout);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const GridLayout& layout);

template <typename T>
void add_encoder_params(ParamSet<T>& ps, const ModelConfig& cfg, std::size_t maps, Rng& rng);

/// z_i = Flatten(X_i) W_z + b_z + p_i for rows i = 0 .. n-1.
template <typename T>
Var<T> embed_patches(ParamBinder<T>& b, Var<T> patches);

/// Pre-norm transformer layers over the unmasked rows only. Masked rows of
/// the result are exact zeros.
template <typename T>
Var<T> transformer_encode(ParamBinder<T>& b, const ModelConfig& cfg, Var<T> z, const std::vector<bool>& mask);

/// One pre-norm block: x + MHA(LN(x)), then + MLP(LN(.)).
template <typename T>
Var<T> transformer_layer(ParamBinder<T>& b, const ModelConfig& cfg, std::size_t layer, Var<T> x);

/// Concatenates each heatmap's patch embeddings and applies the shared E_K: [maps, embed].
template <typename T>
Var<T> regroup_and_compress(ParamBinder<T>& b, const ModelConfig& cfg, Var<T> z, const GridLayout& layout);

/// [2N, k] -> [N, 2k], left view first.
template <typename T>
Var<T> stereo_concat(Var<T> k);

/// Full Grid ViT path: joint heatmaps [2 N_J, R, R] -> F_J [N_J, 2k].
template <typename T>
Var<T> encode_joint_features(ParamBinder<T>& b, const ModelConfig& cfg, const Tensor<T>& heatmaps);

}  // namespace etap
