#include "etap/skeleton.hpp"

#include <Eigen/Geometry>
#include <functional>
#include <queue>
#include <stdexcept>

namespace etap {

std::vector<std::pair<int, int>> SkeletonTree::limbs() const {
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 1; i < parent_.size(); ++i) out.emplace_back(parent_[i], static_cast<int>(i));
  return out;
}

std::vector<std::vector<int>> SkeletonTree::children() const {
  std::vector<std::vector<int>> out(parent_.size());
  for (std::size_t i = 1; i < parent_.size(); ++i) out[parent_[i]].push_back(static_cast<int>(i));
  return out;
}

bool SkeletonTree::is_ancestor_or_self(std::size_t a, std::size_t d) const {
  for (int j = static_cast<int>(d); j >= 0; j = parent_[j]) {
    if (static_cast<std::size_t>(j) == a) return true;
  }
  return false;
}

SkeletonTree build_skeleton(const SkeletonConfig& config) {
  const std::size_t n = config.parent.size();
  if (n < 2) throw std::invalid_argument("skeleton: need at least 2 joints, got " + std::to_string(n));
  if (config.offset.size() != n || config.range.size() != n || (!config.names.empty() && config.names.size() != n)) {
    throw std::invalid_argument("skeleton: names/offset/range sizes disagree with parent list");
  }
  int root = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const int p = config.parent[i];
    if (p == -1) {
      if (root != -1) throw std::invalid_argument("skeleton: more than one root");
      root = static_cast<int>(i);
    } else if (p < 0 || static_cast<std::size_t>(p) >= n) {
      throw std::invalid_argument("skeleton: joint " + std::to_string(i) + " has parent out of range");
    } else if (static_cast<std::size_t>(p) == i) {
      throw std::invalid_argument("skeleton: cyclic parent spec (joint " + std::to_string(i) + " is its own parent)");
    }
  }
  if (root == -1) throw std::invalid_argument("skeleton: cyclic parent spec (no root)");

  std::vector<std::vector<int>> kids(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (config.parent[i] >= 0) kids[config.parent[i]].push_back(static_cast<int>(i));
  }
  // Kahn's algorithm, smallest original index first: configs that are
  // already topologically indexed keep their order.
  std::vector<int> order;
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  ready.push(root);
  while (!ready.empty()) {
    int j = ready.top();
    ready.pop();
    order.push_back(j);
    for (int k : kids[j]) ready.push(k);
  }
  if (order.size() != n) throw std::invalid_argument("skeleton: cyclic parent spec (joints unreachable from root)");

  std::vector<int> new_index(n);
  for (std::size_t k = 0; k < n; ++k) new_index[order[k]] = static_cast<int>(k);

  SkeletonTree t;
  for (int old : order) {
    const int p = config.parent[old];
    t.parent_.push_back(p < 0 ? -1 : new_index[p]);
    t.names_.push_back(config.names.empty() ? "joint" + std::to_string(new_index[old]) : config.names[old]);
    t.offset_.push_back(config.offset[old]);
    t.range_.push_back(config.range[old]);
    if (p >= 0 && !(config.offset[old].norm() > 0)) {
      throw std::invalid_argument("skeleton: non-positive bone length at joint '" + t.names_.back() + "'");
    }
    for (int a = 0; a < 3; ++a) {
      if (!(config.range[old].lo[a] <= config.range[old].hi[a])) {
        throw std::invalid_argument("skeleton: empty angle range at joint '" + t.names_.back() + "'");
      }
    }
  }
  t.offset_[0] = Vec3::Zero();
  return t;
}

SkeletonConfig default_skeleton_config() {
  SkeletonConfig c;
  auto add = [&](std::string name, int parent, Vec3 offset, AngleRange r) {
    c.names.push_back(std::move(name));
    c.parent.push_back(parent);
    c.offset.push_back(offset);
    c.range.push_back(r);
  };
  const AngleRange none{};
  add("head", -1, Vec3::Zero(), none);
  add("neck", 0, {0, -12, 0}, {{-0.3, -0.5, -0.2}, {0.3, 0.5, 0.2}});
  add("pelvis", 1, {0, -50, 0}, {{-0.3, -0.3, -0.1}, {0.3, 0.3, 0.1}});
  add("l_shoulder", 1, {-18, -3, 0}, {{-0.3, -0.3, 0.4}, {0.3, 1.2, 1.4}});
  add("l_elbow", 3, {-28, 0, 0}, {{-0.3, 0.0, -0.3}, {0.3, 1.5, 0.3}});
  add("l_wrist", 4, {-26, 0, 0}, none);
  add("r_shoulder", 1, {18, -3, 0}, {{-0.3, -1.2, -1.4}, {0.3, 0.3, -0.4}});
  add("r_elbow", 6, {28, 0, 0}, {{-0.3, -1.5, -0.3}, {0.3, 0.0, 0.3}});
  add("r_wrist", 7, {26, 0, 0}, none);
  add("l_hip", 2, {-10, 0, 0}, {{-1.2, -0.3, -0.3}, {0.4, 0.3, 0.3}});
  add("l_knee", 9, {0, -45, 0}, {{0.0, -0.2, -0.1}, {1.5, 0.2, 0.1}});
  add("l_ankle", 10, {0, -42, 0}, none);
  add("r_hip", 2, {10, 0, 0}, {{-1.2, -0.3, -0.3}, {0.4, 0.3, 0.3}});
  add("r_knee", 12, {0, -45, 0}, {{0.0, -0.2, -0.1}, {1.5, 0.2, 0.1}});
  add("r_ankle", 13, {0, -42, 0}, none);
  return c;
}

SkeletonConfig chain_skeleton_config(std::size_t joints, double bone_length) {
  SkeletonConfig c;
  for (std::size_t i = 0; i < joints; ++i) {
    c.names.push_back("j" + std::to_string(i));
    c.parent.push_back(static_cast<int>(i) - 1);
    c.offset.push_back(i == 0 ? Vec3::Zero() : Vec3(0, -bone_length, 0));
    c.range.push_back(i == 0 ? AngleRange{} : AngleRange{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}});
  }
  return c;
}

Mat3 euler_xyz(double ax, double ay, double az) {
  using Eigen::AngleAxisd;
  return (AngleAxisd(az, Vec3::UnitZ()) * AngleAxisd(ay, Vec3::UnitY()) * AngleAxisd(ax, Vec3::UnitX()))
      .toRotationMatrix();
}

Pose3D forward_kinematics(const SkeletonTree& tree, const std::vector<Mat3>& local) {
  const std::size_t n = tree.joint_count();
  if (local.size() != n) throw std::invalid_argument("forward_kinematics: rotation count mismatch");
  Pose3D pos(n);
  std::vector<Mat3> global(n);
  pos[0] = Vec3::Zero();
  global[0] = local[0];
  for (std::size_t i = 1; i < n; ++i) {
    const int p = tree.parent(i);
    pos[i] = pos[p] + global[p] * tree.offset(i);
    global[i] = global[p] * local[i];
  }
  return pos;
}

Pose3D rest_pose(const SkeletonTree& tree) {
  return forward_kinematics(tree, std::vector<Mat3>(tree.joint_count(), Mat3::Identity()));
}

Pose3D sample_pose(const SkeletonTree& tree, Rng& rng) {
  std::vector<Mat3> local(tree.joint_count());
  for (std::size_t i = 0; i < tree.joint_count(); ++i) {
    const auto& r = tree.range(i);
    double a[3];
    for (int k = 0; k < 3; ++k) a[k] = rng.uniform(r.lo[k], r.hi[k]);
    local[i] = euler_xyz(a[0], a[1], a[2]);
  }
  return forward_kinematics(tree, local);
}

}  // namespace etap

namespace etap {

SkeletonConfig skeleton_preset(const std::string& name) {
  if (name == "humanoid15") return default_skeleton_config();
  if (name == "fork4") {
    SkeletonConfig c;
    const AngleRange swing{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
    c.names = {"head", "neck", "l_hand", "r_hand"};
    c.parent = {-1, 0, 1, 1};
    c.offset = {Vec3::Zero(), Vec3(0, -12, 0), Vec3(-20, -25, 10), Vec3(20, -25, 10)};
    c.range = {AngleRange{}, swing, swing, swing};
    return c;
  }
  if (name.rfind("chain", 0) == 0) {
    try {
      const int n = std::stoi(name.substr(5));
      if (n >= 2) return chain_skeleton_config(static_cast<std::size_t>(n));
    } catch (const std::exception&) {
    }
  }
  throw std::invalid_argument("unknown skeleton preset '" + name + "' (expected humanoid15, fork4 or chainN)");
}

}  // namespace etap
