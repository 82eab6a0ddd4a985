// Microbenchmarks for the hot paths: sample generation, the regression
// forward pass, the diffusion losses, one optimizer step, and the arch
// distance metric.
#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "talign/dataset.hpp"
#include "talign/dtmd.hpp"
#include "talign/losses.hpp"
#include "talign/prn.hpp"
#include "talign/training.hpp"

using namespace talign;

namespace {

data::Sample fixture_sample() { return data::generate_synthetic(1, 42)[0]; }

prn::PRNModel<float> make_prn(std::vector<int> enc, std::vector<int> dec) {
  prn::PRNConfig cfg;
  cfg.encoder_channels = std::move(enc);
  cfg.decoder_channels = std::move(dec);
  cfg.seed = 1;
  return prn::PRNModel<float>(cfg);
}

void BM_GenerateSample(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto samples = data::generate_synthetic(1, seed++);
    benchmark::DoNotOptimize(samples);
  }
}
BENCHMARK(BM_GenerateSample);

void BM_RegressReduced(benchmark::State& state) {
  const auto model = make_prn({16, 32, 64}, {64, 32, 16});
  const auto sample = fixture_sample();
  for (auto _ : state) {
    auto set = model.regress(sample.input);
    benchmark::DoNotOptimize(set);
  }
}
BENCHMARK(BM_RegressReduced);

void BM_RegressFull(benchmark::State& state) {
  const auto model = make_prn({64, 128, 1024}, {512, 256, 16});
  const auto sample = fixture_sample();
  for (auto _ : state) {
    auto set = model.regress(sample.input);
    benchmark::DoNotOptimize(set);
  }
}
BENCHMARK(BM_RegressFull)->Unit(benchmark::kMillisecond);

void BM_DiffusionLossBackward(benchmark::State& state) {
  dtmd::EstimatorConfig ecfg;
  ecfg.rows = geom::kToothCount;
  ecfg.hidden = {512, 512};
  ecfg.time_embed_dim = 64;
  ecfg.seed = 2;
  dtmd::NoiseEstimator<float> live(ecfg);
  const auto sched = dtmd::build_schedule(1000, 1e-4, 0.02);
  Rng rng(3);
  const dtmd::MatrixState m_gt = dtmd::sample_noise(ecfg.rows, rng);
  const dtmd::MatrixState noise = dtmd::sample_noise(ecfg.rows, rng);
  std::vector<float> flat(static_cast<std::size_t>(ecfg.rows) * 16);
  for (auto& v : flat) v = static_cast<float>(rng.normal());
  auto m_pre =
      ad::Tensor<float>::parameter({static_cast<std::size_t>(ecfg.rows), 16}, flat);

  for (auto _ : state) {
    const auto detached = live.clone_detached();
    auto nodes = dtmd::diffusion_loss_nodes(live, detached, m_pre, m_gt, 500, noise, sched);
    live.zero_grad();
    m_pre.zero_grad();
    ad::backward(ad::add(nodes.diffusion, nodes.denoise));
    benchmark::DoNotOptimize(nodes.diffusion.item());
  }
}
BENCHMARK(BM_DiffusionLossBackward);

void BM_TrainStepStage1(benchmark::State& state) {
  train::TrainConfig cfg;
  cfg.prn.encoder_channels = {16, 32, 64};
  cfg.prn.decoder_channels = {64, 32, 16};
  cfg.estimator_hidden = {64};
  cfg.time_embed_dim = 8;
  cfg.batch_size = 4;

  prn::PRNConfig pcfg = cfg.prn;
  pcfg.seed = 4;
  prn::PRNModel<float> model(pcfg);
  dtmd::EstimatorConfig ecfg;
  ecfg.rows = geom::kToothCount;
  ecfg.hidden = cfg.estimator_hidden;
  ecfg.time_embed_dim = cfg.time_embed_dim;
  ecfg.seed = 5;
  dtmd::NoiseEstimator<float> estimator(ecfg);

  const auto sched = dtmd::build_schedule(cfg.schedule);
  const auto batch = data::generate_synthetic(cfg.batch_size, 6);
  ad::AdamState<float> prn_state;
  ad::AdamState<float> dtmd_state;
  Rng rng(7);

  for (auto _ : state) {
    auto comps = train::train_step_stage1(model, estimator, batch, cfg, sched, prn_state,
                                          dtmd_state, rng);
    benchmark::DoNotOptimize(comps);
  }
}
BENCHMARK(BM_TrainStepStage1)->Unit(benchmark::kMillisecond);

void BM_ArchAlignmentError(benchmark::State& state) {
  const auto sample = fixture_sample();
  const geom::Dentition pred =
      geom::apply_transforms(geom::TransformSet::identities(), sample.input);
  const geom::Dentition target = geom::apply_transforms(sample.target, sample.input);
  for (auto _ : state) {
    benchmark::DoNotOptimize(losses::aae(pred, target));
  }
}
BENCHMARK(BM_ArchAlignmentError);

}  // namespace

BENCHMARK_MAIN();
