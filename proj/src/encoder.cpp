#include "etap/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace etap {

GridLayout GridLayout::make(std::size_t maps, std::size_t resolution, std::size_t patch) {
  if (maps == 0) throw std::invalid_argument("grid: no heatmaps");
  if (patch == 0 || resolution % patch != 0) {
    throw ShapeError("grid: heatmap side " + std::to_string(resolution) + " not divisible by patch " +
                     std::to_string(patch));
  }
  GridLayout g;
  g.maps = maps;
  g.resolution = resolution;
  g.patch = patch;
  g.cells_per_side = 1;
  while (g.cells_per_side * g.cells_per_side < maps) ++g.cells_per_side;
  return g;
}

std::vector<bool> GridLayout::mask() const {
  std::vector<bool> m(total_patches(), false);
  for (std::size_t i = 0; i < used_patches(); ++i) m[i] = true;
  return m;
}

std::pair<std::size_t, std::size_t> GridLayout::patch_origin(std::size_t index) const {
  const std::size_t cell = index / patches_per_cell(), inner = index % patches_per_cell();
  const std::size_t q = patches_per_cell_side();
  return {(cell / cells_per_side) * resolution + (inner / q) * patch,
          (cell % cells_per_side) * resolution + (inner % q) * patch};
}

template <typename T>
GridImage<T> assemble_grid(const Tensor<T>& heatmaps, std::size_t patch) {
  if (heatmaps.rank() != 3 || heatmaps.dim(1) != heatmaps.dim(2)) {
    throw ShapeError("assemble_grid: expected [maps, R, R], got " + shape_str(heatmaps.shape()));
  }
  const std::size_t r = heatmaps.dim(1);
  GridImage<T> out{Tensor<T>(), GridLayout::make(heatmaps.dim(0), r, patch)};
  const std::size_t side = out.layout.image_side(), cps = out.layout.cells_per_side;
  out.image = Tensor<T>(Shape{side, side});
  for (std::size_t j = 0; j < heatmaps.dim(0); ++j) {
    const std::size_t r0 = (j / cps) * r, c0 = (j % cps) * r;
    for (std::size_t y = 0; y < r; ++y) {
      const T* src = heatmaps.ptr() + (j * r + y) * r;
      std::copy(src, src + r, out.image.ptr() + (r0 + y) * side + c0);
    }
  }
  return out;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, const GridLayout& layout) {
  const std::size_t side = layout.image_side(), p = layout.patch;
  if (image.rank() != 2 || image.dim(0) != side || image.dim(1) != side || side % p != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) + " does not match layout side " +
                     std::to_string(side) + " / patch " + std::to_string(p));
  }
  Tensor<T> out(Shape{layout.total_patches(), p * p});
  for (std::size_t i = 0; i < layout.total_patches(); ++i) {
    const auto [r0, c0] = layout.patch_origin(i);
    for (std::size_t y = 0; y < p; ++y) {
      const T* src = image.ptr() + (r0 + y) * side + c0;
      std::copy(src, src + p, out.ptr() + i * p * p + y * p);
    }
  }
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const GridLayout& layout) {
  const std::size_t side = layout.image_side(), p = layout.patch;
  if (patches.rank() != 2 || patches.dim(0) != layout.total_patches() || patches.dim(1) != p * p) {
    throw ShapeError("unpatchify: patches " + shape_str(patches.shape()) + " do not match layout");
  }
  Tensor<T> image(Shape{side, side});
  for (std::size_t i = 0; i < layout.total_patches(); ++i) {
    const auto [r0, c0] = layout.patch_origin(i);
    for (std::size_t y = 0; y < p; ++y) {
      const T* src = patches.ptr() + i * p * p + y * p;
      std::copy(src, src + p, image.ptr() + (r0 + y) * side + c0);
    }
  }
  return image;
}

template <typename T>
void add_encoder_params(ParamSet<T>& ps, const ModelConfig& cfg, std::size_t maps, Rng& rng) {
  const auto layout = GridLayout::make(maps, cfg.resolution, cfg.patch);
  const std::size_t d = cfg.width, pp = cfg.patch * cfg.patch;
  ps.add("enc.patch.w", init::xavier_uniform<T>(rng, {pp, d}, pp, d));
  ps.add("enc.patch.b", init::zeros<T>({d}));
  ps.add("enc.pos", init::normal<T>(rng, {layout.total_patches(), d}, 0.02));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "enc.L" + std::to_string(l);
    ps.add(p + ".ln1.g", Tensor<T>(Shape{d}, T(1)));
    ps.add(p + ".ln1.b", init::zeros<T>({d}));
    add_linear_params(ps, p + ".attn.q", d, d, rng);
    // A key bias only shifts each score row by a constant, so there is none.
    ps.add(p + ".attn.k.w", init::xavier_uniform<T>(rng, {d, d}, d, d));
    add_linear_params(ps, p + ".attn.v", d, d, rng);
    add_linear_params(ps, p + ".attn.o", d, d, rng);
    ps.add(p + ".ln2.g", Tensor<T>(Shape{d}, T(1)));
    ps.add(p + ".ln2.b", init::zeros<T>({d}));
    add_mlp_params(ps, p + ".mlp", {d, cfg.mlp, d}, rng);
  }
  std::vector<std::size_t> dims{layout.patches_per_cell() * d};
  dims.insert(dims.end(), cfg.ek_hidden.begin(), cfg.ek_hidden.end());
  dims.push_back(cfg.embed);
  add_mlp_params(ps, "enc.ek", dims, rng);
}

template <typename T>
Var<T> embed_patches(ParamBinder<T>& b, Var<T> patches) {
  const std::size_t n = patches.shape()[0];
  Var<T> pos = b("enc.pos");
  if (n > pos.shape()[0]) throw ShapeError("embed_patches: more patches than positional encodings");
  return add(linear(patches, b("enc.patch.w"), b("enc.patch.b")), slice_rows(pos, 0, n));
}

template <typename T>
Var<T> transformer_layer(ParamBinder<T>& b, const ModelConfig& cfg, std::size_t layer, Var<T> x) {
  const std::string p = "enc.L" + std::to_string(layer);
  const T eps = static_cast<T>(cfg.ln_eps);
  const std::size_t dh = cfg.width / cfg.heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Var<T> a = layer_norm(x, b(p + ".ln1.g"), b(p + ".ln1.b"), eps);
  Var<T> q = affine(b, p + ".attn.q", a), k = matmul(a, b(p + ".attn.k.w")), v = affine(b, p + ".attn.v", a);
  std::vector<Var<T>> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
    Var<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var<T> att = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    heads.push_back(matmul(att, vh));
  }
  Var<T> attn = heads.size() == 1 ? heads[0] : concat_cols(heads);
  x = add(x, affine(b, p + ".attn.o", attn));

  Var<T> m = layer_norm(x, b(p + ".ln2.g"), b(p + ".ln2.b"), eps);
  m = linear(gelu(linear(m, b(p + ".mlp.w0"), b(p + ".mlp.b0"))), b(p + ".mlp.w1"), b(p + ".mlp.b1"));
  return add(x, m);
}

template <typename T>
Var<T> transformer_encode(ParamBinder<T>& b, const ModelConfig& cfg, Var<T> z, const std::vector<bool>& mask) {
  const std::size_t n = z.shape()[0];
  if (mask.size() != n) {
    throw ShapeError("transformer_encode: mask length " + std::to_string(mask.size()) + " != patch count " +
                     std::to_string(n));
  }
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) used.push_back(i);
  }
  if (used.empty()) throw std::invalid_argument("transformer_encode: every patch is masked");

  // Masking by exclusion: masked rows never enter the attention.
  const bool prefix = used.back() + 1 == used.size();
  Var<T> x = prefix ? (used.size() == n ? z : slice_rows(z, 0, used.size())) : gather_rows(z, used);
  for (std::size_t l = 0; l < cfg.layers; ++l) x = transformer_layer(b, cfg, l, x);
  if (used.size() == n) return x;
  if (prefix) return pad_rows(x, n);
  std::vector<std::size_t> scatter(n, used.size());
  for (std::size_t r = 0; r < used.size(); ++r) scatter[used[r]] = r;
  return gather_rows(pad_rows(x, used.size() + 1), scatter);
}

template <typename T>
Var<T> regroup_and_compress(ParamBinder<T>& b, const ModelConfig& cfg, Var<T> z, const GridLayout& layout) {
  const std::size_t used = layout.used_patches(), d = z.shape()[1];
  if (z.shape()[0] < used) {
    throw ShapeError("regroup_and_compress: " + std::to_string(z.shape()[0]) + " embeddings for " +
                     std::to_string(used) + " used patches");
  }
  Var<T> used_rows = z.shape()[0] == used ? z : slice_rows(z, 0, used);
  Var<T> grouped = reshape(used_rows, {layout.maps, layout.patches_per_cell() * d});
  return mlp(b, "enc.ek", grouped, cfg.ek_hidden.size() + 1);
}

template <typename T>
Var<T> stereo_concat(Var<T> k) {
  const std::size_t n = k.shape()[0];
  if (n % 2 != 0) throw ShapeError("stereo_concat: odd feature count " + std::to_string(n));
  return reshape(k, {n / 2, 2 * k.shape()[1]});
}

template <typename T>
Var<T> encode_joint_features(ParamBinder<T>& b, const ModelConfig& cfg, const Tensor<T>& heatmaps) {
  if (heatmaps.rank() != 3 || heatmaps.dim(1) != cfg.resolution || heatmaps.dim(2) != cfg.resolution) {
    throw ShapeError("encoder: heatmaps " + shape_str(heatmaps.shape()) + " do not match resolution " +
                     std::to_string(cfg.resolution));
  }
  auto grid = assemble_grid(heatmaps, cfg.patch);
  auto& tape = b.tape();
  Var<T> patches = tape.constant(patchify(grid.image, grid.layout));
  Var<T> z = embed_patches(b, patches);
  Var<T> zp = transformer_encode(b, cfg, z, grid.layout.mask());
  return stereo_concat(regroup_and_compress(b, cfg, zp, grid.layout));
}

#define ETAP_INSTANTIATE_ENCODER(T)                                                                    \
  template GridImage<T> assemble_grid<T>(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> patchify<T>(const Tensor<T>&, const GridLayout&);                                  \
  template Tensor<T> unpatchify<T>(const Tensor<T>&, const GridLayout&);                                \
  template void add_encoder_params<T>(ParamSet<T>&, const ModelConfig&, std::size_t, Rng&);             \
  template Var<T> embed_patches<T>(ParamBinder<T>&, Var<T>);                                            \
  template Var<T> transformer_encode<T>(ParamBinder<T>&, const ModelConfig&, Var<T>, const std::vector<bool>&); \
  template Var<T> transformer_layer<T>(ParamBinder<T>&, const ModelConfig&, std::size_t, Var<T>);        \
  template Var<T> regroup_and_compress<T>(ParamBinder<T>&, const ModelConfig&, Var<T>, const GridLayout&); \
  template Var<T> stereo_concat<T>(Var<T>);                                                             \
  template Var<T> encode_joint_features<T>(ParamBinder<T>&, const ModelConfig&, const Tensor<T>&);

ETAP_INSTANTIATE_ENCODER(float)
ETAP_INSTANTIATE_ENCODER(double)
ETAP_INSTANTIATE_ENCODER(long double)

}  // namespace etap
