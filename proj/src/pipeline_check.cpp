#include "etap/pipeline_check.hpp"

#include "etap/losses.hpp"
#include "etap/metrics.hpp"
#include "etap/training.hpp"

namespace etap {

PipelineCheckReport pipeline_grad_check(const PipelineCheckConfig& cfg) {
  if (cfg.seeds == 0 || cfg.norm_samples == 0) throw std::invalid_argument("grad check: seeds and samples must be positive");
  auto mc = model_preset(cfg.preset);
  mc.propagation = cfg.propagation;
  const auto tree = build_skeleton(skeleton_preset(cfg.skeleton));
  DatasetConfig dc;
  dc.skeleton = cfg.skeleton;
  dc.rig.resolution = mc.resolution;
  dc.render.sigma = 1.0;
  dc.samples = cfg.norm_samples;
  dc.seed = cfg.first_seed;
  const auto data = generate_dataset(dc);
  const auto norm = compute_output_norm(data, output_rows(mc, tree));

  PipelineCheckReport rep;
  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.first_seed + k;
    auto params = init_model_params<double>(mc, tree, seed);
    set_output_norm(params, norm.scale, norm.offset);
    const std::size_t idx = k % data.size();
    const auto hm = data.heatmaps(idx);
    const auto joint = hm.joint.cast<double>();
    const auto limb = hm.limb.cast<double>();
    const auto gt = to_tensor(data.pose(idx));
    const std::size_t nj = tree.joint_count();
    auto rows = [nj](auto pose) {
      if (pose.shape()[0] == nj) return pose;
      std::vector<std::size_t> r(nj);
      for (std::size_t i = 0; i < nj; ++i) r[i] = i;
      return gather_rows(pose, r);
    };
    ScalarFn<double> f = [&](ParamBinder<double>& b) {
      auto out = model_forward(b, mc, tree, joint, limb);
      return total_loss(rows(out.pose), b.tape().constant(gt), tree).value;
    };
    const auto joint_x = joint.cast<long double>();
    const auto limb_x = limb.cast<long double>();
    const auto gt_x = gt.cast<long double>();
    ScalarFn<long double> oracle = [&](ParamBinder<long double>& b) {
      auto out = model_forward(b, mc, tree, joint_x, limb_x);
      return total_loss(rows(out.pose), b.tape().constant(gt_x), tree).value;
    };
    GradCheckOptions opts;
    opts.step = cfg.step;
    opts.coords_per_tensor = cfg.coords_per_tensor;
    opts.seed = seed;
    opts.skip = is_frozen_param;
    opts.skip_kinks = cfg.skip_kinks;
    const auto r = grad_check_mixed<double, long double>(f, oracle, params, opts);
    rep.coords_checked += r.coords_checked;
    rep.kinks_skipped += r.kinks_skipped;
    if (k == 0 || r.max_rel_error > rep.max_rel_error) {
      rep.max_rel_error = r.max_rel_error;
      rep.worst_seed = seed;
    }
    rep.per_seed.push_back(r);
    if (cfg.pure64) {
      const auto p = grad_check<double>(f, params, opts);
      rep.pure_max_rel_error = std::max(rep.pure_max_rel_error, p.max_rel_error);
      rep.pure_per_seed.push_back(p);
    }
  }
  return rep;
}

nlohmann::json to_json(const PipelineCheckConfig& c) {
  return {{"preset", c.preset},     {"skeleton", c.skeleton},
          {"propagation", c.propagation}, {"seeds", c.seeds},
          {"first_seed", c.first_seed}, {"coords_per_tensor", c.coords_per_tensor},
          {"step", c.step},         {"norm_samples", c.norm_samples},
          {"pure64", c.pure64},
          {"skip_kinks", c.skip_kinks}};
}

}  // namespace etap
