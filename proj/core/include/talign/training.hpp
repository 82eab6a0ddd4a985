#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "talign/dataset.hpp"
#include "talign/dtmd.hpp"
#include "talign/losses.hpp"
#include "talign/optimizer.hpp"
#include "talign/prn.hpp"

namespace talign::train {

struct TrainConfig {
  int epochs_stage1 = 200;
  int epochs_stage2 = 200;
  int batch_size = 4;
  double lr_prn = 0.01;
  double lr_dtmd = 0.005;
  losses::LossWeights weights;
  std::uint64_t seed = 0;

  // Per-sample chance each epoch of training on an augmented copy; the
  // augmentation kind (multi-rotation vs single-translation) is then a fair
  // coin.
  double augment_probability = 0.5;
  data::AugmentConfig augment;

  dtmd::ScheduleConfig schedule;
  double normalize_scale = 1.0;
  int validation_interval = 10;

  prn::PRNConfig prn;  // seed field is ignored; model seeds derive from `seed`
  std::vector<int> estimator_hidden{512, 512};
  int time_embed_dim = 64;
};

// Throws std::invalid_argument on non-positive epochs totals, batch < 1,
// bad probabilities, or invalid nested configs.
void validate(const TrainConfig& cfg);

// One row per epoch across both stages. Validation columns are filled only on
// epochs where the validation split was scored.
struct EpochRecord {
  int epoch = 0;  // 1-based, contiguous across stages
  int stage = 1;
  double l_rec = 0.0;
  double l_center = 0.0;
  double l_denoise = 0.0;
  double l_diffusion = 0.0;
  bool validated = false;
  double val_tre = 0.0;
  double val_aae = 0.0;
};

// header: epoch,stage,l_rec,l_center,l_denoi,l_diffusion,val_tre,val_aae
// (validation cells empty on epochs without a validation pass).
std::string trace_to_csv(const std::vector<EpochRecord>& trace);

struct TrainArtifacts {
  prn::PRNModel<float> prn;
  dtmd::NoiseEstimator<float> dtmd;
  std::vector<std::uint8_t> prn_checkpoint;
  std::vector<std::uint8_t> dtmd_checkpoint;
  // Serialized right at the stage boundary. Stage 2 never touches the
  // estimator, so the final checkpoint must stay byte-identical to this.
  std::vector<std::uint8_t> dtmd_stage1_snapshot;
  std::vector<EpochRecord> trace;
  // Metrics of the last validation pass; empty report when no validation ran.
  losses::MetricsReport final_validation;
};

// Stable seed derivation for the independent random streams (model init,
// training loop). Identical across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::string_view role);

// One optimizer step on one batch. Draws (t, eps) per sample from `rng`,
// builds the joint graph, backpropagates the batch-mean total, then updates
// the two models from their own optimizer states and learning rates.
// Returns batch-mean loss components. Throws NumericError on a non-finite
// total before any parameter is touched.
losses::LossComponents train_step_stage1(prn::PRNModel<float>& prn_model,
                                         dtmd::NoiseEstimator<float>& dtmd_model,
                                         const std::vector<data::Sample>& batch,
                                         const TrainConfig& cfg,
                                         const dtmd::NoiseSchedule& sched,
                                         ad::AdamState<float>& prn_state,
                                         ad::AdamState<float>& dtmd_state, Rng& rng);

// Stage 2: the estimator is read (the contrastive term still shapes the
// regression network) but its parameters receive no gradient and no update.
// The diffusion term is evaluated for the trace only.
losses::LossComponents train_step_stage2(prn::PRNModel<float>& prn_model,
                                         const dtmd::NoiseEstimator<float>& frozen_dtmd,
                                         const std::vector<data::Sample>& batch,
                                         const TrainConfig& cfg,
                                         const dtmd::NoiseSchedule& sched,
                                         ad::AdamState<float>& prn_state, Rng& rng);

// Full staged run: stage 1 jointly, snapshot the estimator, stage 2 with it
// frozen. Augments on the fly, validates every `validation_interval` epochs
// (and on the final epoch) when `val_set` is non-empty. When `artifacts_dir`
// is set and a step fails with NumericError, the models as of the start of
// the failing epoch are written there as prn_lastgood.ckpt /
// dtmd_lastgood.ckpt before the error is rethrown.
TrainArtifacts train_staged(const std::vector<data::Sample>& train_set,
                            const std::vector<data::Sample>& val_set,
                            const TrainConfig& cfg,
                            const std::optional<std::filesystem::path>& artifacts_dir = {});

// Scores the regression network alone: predicted transforms applied to the
// inputs against target-transformed inputs. No diffusion state is built.
losses::MetricsReport evaluate(const prn::PRNModel<float>& model,
                               const std::vector<data::Sample>& split);

}  // namespace talign::train
