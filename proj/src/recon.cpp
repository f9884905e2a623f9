#include "etap/recon.hpp"

#include <cstdio>
#include <fstream>

#include "etap/parallel.hpp"

namespace etap {

void ReconConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("recon config: " + m); };
  if (epochs == 0 || batch == 0) fail("epochs and batch must be positive");
  if (!(lr > 0)) fail("lr must be positive");
  if (warmup_epochs >= epochs) fail("warmup_epochs must be below epochs");
  if (!(loss.theta > 0)) fail("theta must be positive");
  if (collapse_epochs == 0) fail("collapse_epochs must be positive");
  if (workers == 0) fail("workers must be positive");
}

nlohmann::json to_json(const ReconConfig& c) {
  return {{"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"warmup_epochs", c.warmup_epochs},
          {"weight_decay", c.adamw.weight_decay},
          {"theta", c.loss.theta},
          {"w_r", c.loss.w_r},
          {"w_m", c.loss.w_m},
          {"hidden", c.decoder.hidden},
          {"base_channels", c.decoder.base_channels},
          {"mid_channels", c.decoder.mid_channels},
          {"seed", c.seed},
          {"workers", c.workers},
          {"collapse_epochs", c.collapse_epochs},
          {"collapse_max", c.collapse_max},
          {"max_restarts", c.max_restarts}};
}

ReconConfig recon_config_from_json(const nlohmann::json& j) {
  ReconConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
  c.loss.theta = j.value("theta", c.loss.theta);
  c.loss.w_r = j.value("w_r", c.loss.w_r);
  c.loss.w_m = j.value("w_m", c.loss.w_m);
  c.decoder.hidden = j.value("hidden", c.decoder.hidden);
  c.decoder.base_channels = j.value("base_channels", c.decoder.base_channels);
  c.decoder.mid_channels = j.value("mid_channels", c.decoder.mid_channels);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  c.collapse_epochs = j.value("collapse_epochs", c.collapse_epochs);
  c.collapse_max = j.value("collapse_max", c.collapse_max);
  c.max_restarts = j.value("max_restarts", c.max_restarts);
  return c;
}

Tensor<float> frozen_embeddings(const PoseModel& model, const Dataset& data, std::size_t workers) {
  if (data.size() == 0) throw std::invalid_argument("frozen_embeddings: empty dataset");
  std::vector<Tensor<float>> rows(data.size());
  parallel_ranges(data.size(), workers, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) {
      Tape<float> tape(false);
      ParamBinder<float> b(tape, model.params, false);
      const auto hm = data.heatmaps(i);
      rows[i] = model_forward(b, model.config, model.tree, hm.joint, hm.limb).embedding.value();
    }
  });
  const std::size_t e = rows[0].size();
  Tensor<float> out(Shape{data.size(), e});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].ptr(), rows[i].ptr() + e, out.ptr() + i * e);
  return out;
}

namespace {

Tensor<float> embedding_row(const Tensor<float>& emb, std::size_t i) {
  const std::size_t e = emb.dim(1);
  return Tensor<float>(Shape{1, e}, std::vector<float>(emb.ptr() + i * e, emb.ptr() + (i + 1) * e));
}

struct SampleResult {
  ReconStep step;
  double max_value = 0;
};

SampleResult decoder_sample(const ParamSet<float>& params, const ReconConfig& cfg, const Tensor<float>& emb,
                            const Dataset& data, std::size_t i, ParamSet<float>* grads) {
  Tape<float> tape(grads != nullptr);
  ParamBinder<float> b(tape, params, grads != nullptr);
  const auto target = tape.constant(data.heatmaps(i).joint);
  const auto recon = decode_heatmaps(b, cfg.decoder, tape.constant(embedding_row(emb, i)), target.shape()[0],
                                     data.resolution());
  const auto loss = recon_loss(target, recon, cfg.loss);
  SampleResult r;
  r.step = {loss.l_r, loss.l_m, loss.minmax_active};
  const auto& v = recon.value();
  r.max_value = *std::max_element(v.values().begin(), v.values().end());
  if (grads) {
    tape.backward(loss.value);
    b.accumulate_grads(*grads);
  }
  return r;
}

void check_inputs(const Tensor<float>& emb, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("reconstruction: empty dataset");
  if (emb.rank() != 2 || emb.dim(0) != data.size()) {
    throw ShapeError("reconstruction: embeddings " + shape_str(emb.shape()) + " for " + std::to_string(data.size()) +
                     " samples");
  }
}

}  // namespace

DecoderRun train_decoder(const Tensor<float>& embeddings, const Dataset& data, const ReconConfig& cfg) {
  cfg.validate();
  check_inputs(embeddings, data);
  const std::size_t n = data.size(), maps = data.joint.dim(1);
  const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  const Schedule sched{cfg.epochs * per_epoch, cfg.warmup_epochs * per_epoch, cfg.lr};
  const std::size_t workers = std::min(cfg.workers, cfg.batch);

  DecoderRun run;
  for (std::size_t attempt = 0;; ++attempt) {
    run = DecoderRun{};
    run.restarts = attempt;
    Rng init_rng = Rng::derive(cfg.seed ^ 0x6465636f646572ULL, attempt);
    add_decoder_params(run.params, cfg.decoder, embeddings.dim(1), maps, data.resolution(), init_rng);
    auto opt = init_opt_state(run.params);
    std::vector<ParamSet<float>> partial(workers, run.params.zeros_like());
    std::vector<std::vector<SampleResult>> results(workers);
    std::vector<std::size_t> order(n);
    std::size_t step = 0, low_epochs = 0;
    bool collapsed = false;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      Rng shuffle = Rng::derive(cfg.seed ^ (attempt << 32), epoch);
      shuffle.shuffle(order.begin(), order.end());
      double epoch_max = -std::numeric_limits<double>::infinity();
      for (std::size_t start = 0; start < n; start += cfg.batch) {
        const std::size_t count = std::min(cfg.batch, n - start);
        parallel_ranges(count, workers, [&](std::size_t lo, std::size_t hi, std::size_t w) {
          partial[w].set_zero();
          results[w].clear();
          for (std::size_t k = lo; k < hi; ++k)
            results[w].push_back(decoder_sample(run.params, cfg, embeddings, data, order[start + k], &partial[w]));
        });
        ParamSet<float> grads = run.params.zeros_like();
        for (std::size_t w = 0; w < std::min(workers, count); ++w) {
          grads.add_scaled(partial[w], 1.0f / static_cast<float>(count));
          for (const auto& r : results[w]) {
            epoch_max = std::max(epoch_max, r.max_value);
            if (cfg.keep_trace) run.trace.push_back(r.step);
          }
        }
        adamw_step(run.params, grads, opt, cfg.adamw, lr_at(step, sched));
        ++step;
      }
      run.epochs = epoch;
      run.epoch_max.push_back(epoch_max);
      low_epochs = epoch_max < cfg.collapse_max ? low_epochs + 1 : 0;
      if (low_epochs >= cfg.collapse_epochs && attempt < cfg.max_restarts) {
        collapsed = true;
        break;
      }
    }
    if (!collapsed) return run;
  }
}

double recon_mse(const ParamSet<float>& decoder, const ReconConfig& cfg, const Tensor<float>& embeddings,
                 const Dataset& data, std::size_t workers) {
  check_inputs(embeddings, data);
  std::vector<double> per_sample(data.size());
  parallel_ranges(data.size(), workers, [&](std::size_t lo, std::size_t hi, std::size_t) {
    for (std::size_t i = lo; i < hi; ++i) per_sample[i] = decoder_sample(decoder, cfg, embeddings, data, i, nullptr).step.l_r;
  });
  double s = 0;
  for (double v : per_sample) s += v;
  return s / static_cast<double>(data.size());
}

double zeros_mse_streaming(const Dataset& data) {
  double mean = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto hm = data.heatmaps(i);
    for (float v : hm.joint.values()) {
      ++count;
      mean += (static_cast<double>(v) * v - mean) / static_cast<double>(count);
    }
  }
  return mean;
}

double zeros_mse_batch(const Dataset& data) {
  long double s = 0;
  for (float v : data.joint.values()) s += static_cast<long double>(v) * v;
  return static_cast<double>(s / static_cast<long double>(data.joint.size()));
}

std::vector<ReconRow> run_reconstruction_experiment(const PoseModel& grid, const PoseModel& cnn, const Dataset& train,
                                                    const Dataset& test, const ReconConfig& cfg) {
  cfg.validate();
  if (grid.config.encoder != EncoderKind::kGridViT) throw std::invalid_argument("reconstruction: first model must use the grid vit encoder");
  if (cnn.config.encoder != EncoderKind::kCnn) throw std::invalid_argument("reconstruction: second model must use the cnn encoder");
  std::vector<ReconRow> rows;
  for (const auto* m : {&grid, &cnn}) {
    const auto tr = frozen_embeddings(*m, train, cfg.workers);
    const auto te = frozen_embeddings(*m, test, cfg.workers);
    const auto run = train_decoder(tr, train, cfg);
    rows.push_back({to_string(m->config.encoder), recon_mse(run.params, cfg, te, test, cfg.workers), run.epochs,
                    run.restarts});
  }
  rows.push_back({"zeros", zeros_mse_batch(test), 0, 0});
  return rows;
}

void write_recon_csv(const std::filesystem::path& path, const std::vector<ReconRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variant,mse,epochs,restarts\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.mse);
    out << r.variant << ',' << buf << ',' << r.epochs << ',' << r.restarts << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace etap
