#include "talign/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <stdexcept>

#include "talign/checkpoint.hpp"
#include "talign/errors.hpp"

namespace talign::train {
namespace {

// Shortest round-trippable decimal form.
std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct SampleLossNodes {
  ad::Tensor<float> rec;
  ad::Tensor<float> center;
  ad::Tensor<float> denoise;
  ad::Tensor<float> diffusion;
};

// Joint per-sample graph: regression forward, geometric losses, and the two
// diffusion-domain losses on one shared (t, eps) draw. `live` trains from the
// diffusion term; `detached` must be its current-weights snapshot and serves
// the contrastive term, which therefore reaches only the producer of the
// predicted transforms.
SampleLossNodes build_sample_loss(const prn::PRNModel<float>& model,
                                  const dtmd::NoiseEstimator<float>& live,
                                  const dtmd::NoiseEstimator<float>& detached,
                                  const data::Sample& sample, int t,
                                  const dtmd::MatrixState& noise,
                                  const dtmd::NoiseSchedule& sched, double scale) {
  auto fwd = model.forward(sample.input);
  auto geo = losses::geometry_loss_nodes(fwd.raw_rows, sample.input, sample.target);

  const auto identity = ad::Tensor<float>::constant({16}, prn::identity_flat16<float>());
  const float inv_scale = static_cast<float>(1.0 / scale);
  std::vector<ad::Tensor<float>> rows;
  rows.reserve(fwd.raw_rows.size());
  for (const auto& raw : fwd.raw_rows) {
    rows.push_back(ad::scale(ad::sub(raw, identity), inv_scale));
  }
  auto m_pre = ad::stack_rows(rows);
  const dtmd::MatrixState m_gt = dtmd::normalize_transforms(sample.target, scale);
  auto dn = dtmd::diffusion_loss_nodes(live, detached, m_pre, m_gt, t, noise, sched);

  return SampleLossNodes{geo.rec, geo.center, dn.denoise, dn.diffusion};
}

struct BatchGraph {
  ad::Tensor<float> total;
  losses::LossComponents components;  // batch means
};

BatchGraph build_batch(const prn::PRNModel<float>& model,
                       const dtmd::NoiseEstimator<float>& live,
                       const dtmd::NoiseEstimator<float>& detached,
                       const std::vector<data::Sample>& batch, const TrainConfig& cfg,
                       const dtmd::NoiseSchedule& sched, int stage, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

  const auto& w = cfg.weights;
  ad::Tensor<float> total;
  losses::LossComponents sums;
  for (const auto& sample : batch) {
    const int t =
        1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(sched.steps())));
    const dtmd::MatrixState noise = dtmd::sample_noise(sample.input.tooth_count(), rng);
    auto nodes =
        build_sample_loss(model, live, detached, sample, t, noise, sched, cfg.normalize_scale);

    sums.rec += static_cast<double>(nodes.rec.item());
    sums.center += static_cast<double>(nodes.center.item());
    sums.denoise += static_cast<double>(nodes.denoise.item());
    sums.diffusion += static_cast<double>(nodes.diffusion.item());

    auto sample_total =
        ad::add(nodes.rec, ad::scale(nodes.center, static_cast<float>(w.lambda_center)));
    sample_total = ad::add(
        sample_total, ad::scale(nodes.denoise, static_cast<float>(w.lambda_denoise)));
    if (stage == 1) {
      // Stage 2 freezes the estimator; its objective would be constant there,
      // so it stays out of the stage-2 total (it is still reported above).
      sample_total = ad::add(
          sample_total, ad::scale(nodes.diffusion, static_cast<float>(w.lambda_diffusion)));
    }
    total = total.defined() ? ad::add(total, sample_total) : sample_total;
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchGraph out;
  out.total = ad::scale(total, static_cast<float>(inv_b));
  out.components.rec = sums.rec * inv_b;
  out.components.center = sums.center * inv_b;
  out.components.denoise = sums.denoise * inv_b;
  out.components.diffusion = sums.diffusion * inv_b;

  const auto& c = out.components;
  if (!std::isfinite(c.rec) || !std::isfinite(c.center) || !std::isfinite(c.denoise) ||
      !std::isfinite(c.diffusion) || !std::isfinite(static_cast<double>(out.total.item()))) {
    throw NumericError("train_step: non-finite loss");
  }
  return out;
}

std::vector<std::vector<float>> snapshot_values(
    const std::vector<ad::Tensor<float>>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.values());
  return out;
}

void restore_values(std::vector<ad::Tensor<float>>& params,
                    const std::vector<std::vector<float>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_values() = saved[i];
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.epochs_stage1 < 1 || cfg.epochs_stage2 < 1) {
    throw std::invalid_argument("TrainConfig: both stages need at least one epoch");
  }
  if (cfg.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1 required");
  if (!(cfg.lr_prn > 0.0) || !std::isfinite(cfg.lr_prn) || !(cfg.lr_dtmd > 0.0) ||
      !std::isfinite(cfg.lr_dtmd)) {
    throw std::invalid_argument("TrainConfig: learning rates must be positive and finite");
  }
  if (!(cfg.augment_probability >= 0.0 && cfg.augment_probability <= 1.0)) {
    throw std::invalid_argument("TrainConfig: augment_probability must lie in [0, 1]");
  }
  if (cfg.validation_interval < 1) {
    throw std::invalid_argument("TrainConfig: validation_interval >= 1 required");
  }
  if (!(cfg.normalize_scale > 0.0) || !std::isfinite(cfg.normalize_scale)) {
    throw std::invalid_argument("TrainConfig: normalize_scale must be positive and finite");
  }
  if (cfg.schedule.steps < 1) {
    throw std::invalid_argument("TrainConfig: schedule needs at least one step");
  }
  if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0) {
    throw std::invalid_argument("TrainConfig: time_embed_dim must be even and >= 2");
  }
  losses::validate(cfg.weights);
  if (cfg.augment_probability > 0.0) {
    data::validate(cfg.augment, geom::kToothCount);
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view role) {
  // FNV-1a over the role, then two mixing rounds against the base seed.
  std::uint64_t h = 1469598103934665603ull;
  for (const char ch : role) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return mix64(base ^ mix64(h));
}

losses::LossComponents train_step_stage1(prn::PRNModel<float>& prn_model,
                                         dtmd::NoiseEstimator<float>& dtmd_model,
                                         const std::vector<data::Sample>& batch,
                                         const TrainConfig& cfg,
                                         const dtmd::NoiseSchedule& sched,
                                         ad::AdamState<float>& prn_state,
                                         ad::AdamState<float>& dtmd_state, Rng& rng) {
  const auto detached = dtmd_model.clone_detached();
  auto graph = build_batch(prn_model, dtmd_model, detached, batch, cfg, sched, 1, rng);

  prn_model.zero_grad();
  dtmd_model.zero_grad();
  ad::backward(graph.total);

  auto prn_params = prn_model.parameters();
  adam_update(std::span<ad::Tensor<float>>(prn_params), prn_state,
              static_cast<float>(cfg.lr_prn));
  auto dtmd_params = dtmd_model.parameters();
  adam_update(std::span<ad::Tensor<float>>(dtmd_params), dtmd_state,
              static_cast<float>(cfg.lr_dtmd));
  return graph.components;
}

losses::LossComponents train_step_stage2(prn::PRNModel<float>& prn_model,
                                         const dtmd::NoiseEstimator<float>& frozen_dtmd,
                                         const std::vector<data::Sample>& batch,
                                         const TrainConfig& cfg,
                                         const dtmd::NoiseSchedule& sched,
                                         ad::AdamState<float>& prn_state, Rng& rng) {
  const auto detached = frozen_dtmd.clone_detached();
  auto graph = build_batch(prn_model, frozen_dtmd, detached, batch, cfg, sched, 2, rng);

  prn_model.zero_grad();
  ad::backward(graph.total);

  auto prn_params = prn_model.parameters();
  adam_update(std::span<ad::Tensor<float>>(prn_params), prn_state,
              static_cast<float>(cfg.lr_prn));
  return graph.components;
}

TrainArtifacts train_staged(const std::vector<data::Sample>& train_set,
                            const std::vector<data::Sample>& val_set,
                            const TrainConfig& cfg,
                            const std::optional<std::filesystem::path>& artifacts_dir) {
  validate(cfg);
  if (train_set.empty()) throw std::invalid_argument("train_staged: empty training set");

  const auto sched = dtmd::build_schedule(cfg.schedule);

  prn::PRNConfig pcfg = cfg.prn;
  pcfg.seed = derive_seed(cfg.seed, "prn-init");
  prn::PRNModel<float> model(pcfg);

  dtmd::EstimatorConfig ecfg;
  ecfg.rows = train_set[0].input.tooth_count();
  ecfg.hidden = cfg.estimator_hidden;
  ecfg.time_embed_dim = cfg.time_embed_dim;
  ecfg.seed = derive_seed(cfg.seed, "dtmd-init");
  dtmd::NoiseEstimator<float> estimator(ecfg);

  Rng rng(derive_seed(cfg.seed, "train-loop"));
  ad::AdamState<float> prn_state;
  ad::AdamState<float> dtmd_state;

  const int total_epochs = cfg.epochs_stage1 + cfg.epochs_stage2;
  std::vector<EpochRecord> trace;
  trace.reserve(static_cast<std::size_t>(total_epochs));
  std::vector<std::uint8_t> stage1_snapshot;
  losses::MetricsReport final_validation;

  auto prn_params = model.parameters();
  auto dtmd_params = estimator.parameters();

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    const int stage = epoch <= cfg.epochs_stage1 ? 1 : 2;

    std::vector<std::vector<float>> prn_lastgood;
    std::vector<std::vector<float>> dtmd_lastgood;
    if (artifacts_dir) {
      prn_lastgood = snapshot_values(prn_params);
      dtmd_lastgood = snapshot_values(dtmd_params);
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);

    std::vector<data::Sample> epoch_samples;
    epoch_samples.reserve(order.size());
    for (const std::size_t idx : order) {
      const auto& base = train_set[idx];
      // The gate draw happens regardless of the probability so the stream
      // layout does not depend on config values.
      const double gate = rng.uniform01();
      if (gate < cfg.augment_probability) {
        if (rng.uniform01() < 0.5) {
          epoch_samples.push_back(data::augment_multi_rotation(base, cfg.augment, rng).sample);
        } else {
          epoch_samples.push_back(
              data::augment_single_translation(base, cfg.augment, rng).sample);
        }
      } else {
        epoch_samples.push_back(base);
      }
    }

    losses::LossComponents sums;
    try {
      for (std::size_t start = 0; start < epoch_samples.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop =
            std::min(epoch_samples.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const std::vector<data::Sample> batch(epoch_samples.begin() + static_cast<long>(start),
                                              epoch_samples.begin() + static_cast<long>(stop));
        const auto comps =
            stage == 1 ? train_step_stage1(model, estimator, batch, cfg, sched, prn_state,
                                           dtmd_state, rng)
                       : train_step_stage2(model, estimator, batch, cfg, sched, prn_state, rng);
        const auto b = static_cast<double>(batch.size());
        sums.rec += comps.rec * b;
        sums.center += comps.center * b;
        sums.denoise += comps.denoise * b;
        sums.diffusion += comps.diffusion * b;
      }
    } catch (const NumericError&) {
      if (artifacts_dir) {
        restore_values(prn_params, prn_lastgood);
        restore_values(dtmd_params, dtmd_lastgood);
        ckpt::save_prn(*artifacts_dir / "prn_lastgood.ckpt", model, prn_state.step);
        ckpt::save_dtmd(*artifacts_dir / "dtmd_lastgood.ckpt", estimator, cfg.schedule,
                        cfg.normalize_scale, dtmd_state.step);
      }
      throw;
    }

    EpochRecord row;
    row.epoch = epoch;
    row.stage = stage;
    const double inv_n = 1.0 / static_cast<double>(epoch_samples.size());
    row.l_rec = sums.rec * inv_n;
    row.l_center = sums.center * inv_n;
    row.l_denoise = sums.denoise * inv_n;
    row.l_diffusion = sums.diffusion * inv_n;

    if (!val_set.empty() &&
        (epoch % cfg.validation_interval == 0 || epoch == total_epochs)) {
      auto report = evaluate(model, val_set);
      row.validated = true;
      row.val_tre = report.tre_mean;
      row.val_aae = report.aae_mean;
      final_validation = std::move(report);
    }
    trace.push_back(row);

    if (epoch == cfg.epochs_stage1) {
      stage1_snapshot = ckpt::serialize_dtmd(estimator, cfg.schedule, cfg.normalize_scale,
                                             dtmd_state.step);
    }
  }

  TrainArtifacts artifacts{std::move(model),
                           std::move(estimator),
                           {},
                           {},
                           std::move(stage1_snapshot),
                           std::move(trace),
                           std::move(final_validation)};
  artifacts.prn_checkpoint = ckpt::serialize_prn(artifacts.prn, prn_state.step);
  artifacts.dtmd_checkpoint = ckpt::serialize_dtmd(artifacts.dtmd, cfg.schedule,
                                                   cfg.normalize_scale, dtmd_state.step);
  return artifacts;
}

losses::MetricsReport evaluate(const prn::PRNModel<float>& model,
                               const std::vector<data::Sample>& split) {
  std::vector<losses::SampleMetrics> rows;
  rows.reserve(split.size());
  for (const auto& sample : split) {
    const geom::TransformSet pred = model.regress(sample.input);
    const geom::Dentition pred_cloud = geom::apply_transforms(pred, sample.input);
    const geom::Dentition target_cloud = geom::apply_transforms(sample.target, sample.input);
    losses::SampleMetrics m;
    m.id = sample.id;
    m.tre = losses::tre(pred_cloud, target_cloud);
    m.aae = losses::aae(pred_cloud, target_cloud);
    rows.push_back(std::move(m));
  }
  return losses::MetricsReport::from_samples(std::move(rows));
}

std::string trace_to_csv(const std::vector<EpochRecord>& trace) {
  std::string out = "epoch,stage,l_rec,l_center,l_denoi,l_diffusion,val_tre,val_aae\n";
  for (const auto& r : trace) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.stage) + "," +
           format_double(r.l_rec) + "," + format_double(r.l_center) + "," +
           format_double(r.l_denoise) + "," + format_double(r.l_diffusion) + ",";
    if (r.validated) {
      out += format_double(r.val_tre) + "," + format_double(r.val_aae);
    } else {
      out += ",";
    }
    out += "\n";
  }
  return out;
}

}  // namespace talign::train
