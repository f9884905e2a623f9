#include "etap/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <thread>

#include "etap/container.hpp"

namespace etap {

namespace {

void copy_sample(const Tensor<float>& src, std::size_t i, Tensor<float>& dst, std::size_t j) {
  const std::size_t stride = src.size() / src.dim(0);
  std::memcpy(dst.ptr() + j * stride, src.ptr() + i * stride, stride * sizeof(float));
}

Tensor<float> sample_slice(const Tensor<float>& t, std::size_t i) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  const std::size_t stride = shape_numel(s);
  return Tensor<float>(std::move(s), std::vector<float>(t.ptr() + i * stride, t.ptr() + (i + 1) * stride));
}

Shape with_leading(std::size_t n, const Shape& rest) {
  Shape s{n};
  s.insert(s.end(), rest.begin(), rest.end());
  return s;
}

}  // namespace

StereoHeatmapSet Dataset::heatmaps(std::size_t i) const { return {sample_slice(joint, i), sample_slice(limb, i)}; }

Pose3D Dataset::pose(std::size_t i) const {
  Pose3D p(joint_count());
  const float* src = poses.ptr() + i * 3 * joint_count();
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = Vec3(src[3 * j], src[3 * j + 1], src[3 * j + 2]);
  return p;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw std::invalid_argument("Dataset::subset: empty index list");
  Dataset out;
  out.config = config;
  out.config.samples = indices.size();
  out.tree = tree;
  out.provenance = provenance;
  Shape js = joint.shape(), ls = limb.shape(), ps = poses.shape();
  js[0] = ls[0] = ps[0] = indices.size();
  out.joint = Tensor<float>(js);
  out.limb = Tensor<float>(ls);
  out.poses = Tensor<float>(ps);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw std::out_of_range("Dataset::subset: index out of range");
    copy_sample(joint, indices[k], out.joint, k);
    copy_sample(limb, indices[k], out.limb, k);
    copy_sample(poses, indices[k], out.poses, k);
  }
  return out;
}

Dataset generate_dataset(const DatasetConfig& config, std::size_t workers) {
  if (config.samples == 0) throw std::invalid_argument("gen-data: sample count must be positive");
  if (!(config.occlusion.rate >= 0 && config.occlusion.rate <= 1)) {
    throw std::invalid_argument("occlusion rate must be in [0, 1], got " + std::to_string(config.occlusion.rate));
  }
  if (!(config.render.sigma > 0)) throw std::invalid_argument("sigma must be positive");
  Dataset ds;
  ds.config = config;
  ds.tree = build_skeleton(skeleton_preset(config.skeleton));
  const StereoCamera cam = StereoCamera::make(config.rig);
  const std::size_t nj = ds.tree.joint_count(), r = config.rig.resolution, n = config.samples;
  ds.joint = Tensor<float>(Shape{n, 2 * nj, r, r});
  ds.limb = Tensor<float>(Shape{n, 2 * (nj - 1), 2, r, r});
  ds.poses = Tensor<float>(Shape{n, nj, 3});
  std::vector<std::size_t> occluded(n, 0);

  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      Rng rng = Rng::derive(config.seed, s);
      const Pose3D pose = sample_pose(ds.tree, rng);
      const auto proj = project(pose, cam);
      const auto occ = occlude(render_heatmaps(ds.tree, pose, cam, config.render), ds.tree, config.occlusion, rng,
                               &proj);
      std::copy(occ.set.joint.data().begin(), occ.set.joint.data().end(), ds.joint.ptr() + s * occ.set.joint.size());
      std::copy(occ.set.limb.data().begin(), occ.set.limb.data().end(), ds.limb.ptr() + s * occ.set.limb.size());
      for (std::size_t j = 0; j < nj; ++j)
        for (int a = 0; a < 3; ++a) ds.poses[(s * nj + j) * 3 + a] = static_cast<float>(pose[j][a]);
      occluded[s] = occ.count();
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, n);
  if (workers == 1) {
    run(0, n);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, n * w / workers, n * (w + 1) / workers);
  }
  for (auto c : occluded) ds.occluded_views += c;
  return ds;
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"skeleton", c.skeleton},
          {"seed", c.seed},
          {"samples", c.samples},
          {"rig",
           {{"baseline", c.rig.baseline},
            {"drop", c.rig.drop},
            {"pitch_deg", c.rig.pitch_deg},
            {"focal_scale", c.rig.focal_scale},
            {"resolution", c.rig.resolution}}},
          {"render", {{"sigma", c.render.sigma}, {"limb_width", c.render.limb_width}}},
          {"occlusion",
           {{"rate", c.occlusion.rate},
            {"depth_weighted", c.occlusion.depth_weighted},
            {"mode", to_string(c.occlusion.mode)},
            {"attenuation", c.occlusion.attenuation}}}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.skeleton = j.at("skeleton").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.samples = j.at("samples").get<std::size_t>();
  const auto& rig = j.at("rig");
  c.rig.baseline = rig.at("baseline");
  c.rig.drop = rig.at("drop");
  c.rig.pitch_deg = rig.at("pitch_deg");
  c.rig.focal_scale = rig.at("focal_scale");
  c.rig.resolution = rig.at("resolution");
  c.render.sigma = j.at("render").at("sigma");
  c.render.limb_width = j.at("render").at("limb_width");
  const auto& occ = j.at("occlusion");
  c.occlusion.rate = occ.at("rate");
  c.occlusion.depth_weighted = occ.at("depth_weighted");
  c.occlusion.mode = parse_occlusion_mode(occ.at("mode").get<std::string>());
  c.occlusion.attenuation = occ.at("attenuation");
  return c;
}

nlohmann::json dataset_manifest(const Dataset& ds) {
  nlohmann::json skel;
  for (std::size_t i = 0; i < ds.tree.joint_count(); ++i) {
    const auto& o = ds.tree.offset(i);
    skel.push_back({{"name", ds.tree.name(i)}, {"parent", ds.tree.parent(i)}, {"offset", {o.x(), o.y(), o.z()}}});
  }
  return {{"format_version", kDatasetFormatVersion},
          {"unit", "cm"},
          {"config", to_json(ds.config)},
          {"samples", ds.size()},
          {"joint_count", ds.tree.joint_count()},
          {"limb_count", ds.tree.limb_count()},
          {"resolution", ds.resolution()},
          {"occluded_views", ds.occluded_views},
          {"skeleton", skel},
          {"files",
           {{"heatmaps_joint.bin", ds.joint.shape()},
            {"heatmaps_limb.bin", ds.limb.shape()},
            {"poses.bin", ds.poses.shape()}}},
          {"provenance", ds.provenance}};
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "heatmaps_joint.bin", ds.joint);
  save_tensor(dir / "heatmaps_limb.bin", ds.limb);
  save_tensor(dir / "poses.bin", ds.poses);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error((dir / "manifest.json").string() + ": cannot open for writing");
  out << dataset_manifest(ds).dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(manifest_path.string() + ": cannot open for reading");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const int version = m.value("format_version", -1);
  if (version != kDatasetFormatVersion) {
    throw FormatError(manifest_path.string() + ": unsupported dataset format version " + std::to_string(version));
  }
  Dataset ds;
  try {
    ds.config = dataset_config_from_json(m.at("config"));
    ds.occluded_views = m.at("occluded_views");
    ds.provenance = m.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  ds.tree = build_skeleton(skeleton_preset(ds.config.skeleton));
  ds.joint = load_tensor<float>(dir / "heatmaps_joint.bin");
  ds.limb = load_tensor<float>(dir / "heatmaps_limb.bin");
  ds.poses = load_tensor<float>(dir / "poses.bin");

  const std::size_t n = m.at("samples"), nj = m.at("joint_count"), r = m.at("resolution");
  auto expect = [&](const Tensor<float>& t, const Shape& want, const char* file) {
    if (t.shape() != want) {
      throw FormatError((dir / file).string() + ": shape " + shape_str(t.shape()) +
                        " disagrees with manifest (expected " + shape_str(want) + ")");
    }
  };
  if (nj != ds.tree.joint_count()) {
    throw FormatError(manifest_path.string() + ": joint_count " + std::to_string(nj) + " disagrees with skeleton '" +
                      ds.config.skeleton + "'");
  }
  expect(ds.joint, with_leading(n, {2 * nj, r, r}), "heatmaps_joint.bin");
  expect(ds.limb, with_leading(n, {2 * (nj - 1), 2, r, r}), "heatmaps_limb.bin");
  expect(ds.poses, with_leading(n, {nj, 3}), "poses.bin");
  return ds;
}

}  // namespace etap
