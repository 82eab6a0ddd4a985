#pragma once

#include <string>
#include <vector>

#include "talign/geometry.hpp"
#include "talign/ops.hpp"
#include "talign/tensor.hpp"

namespace talign::losses {

struct LossWeights {
  double lambda_center = 0.1;     // centroid term
  double lambda_denoise = 0.01;   // contrastive denoising term
  double lambda_diffusion = 0.1;  // estimator training term
};

void validate(const LossWeights& w);

struct LossComponents {
  double rec = 0.0;
  double center = 0.0;
  double denoise = 0.0;
  double diffusion = 0.0;
};

// Stage 1: rec + l1*center + l2*denoise + l3*diffusion.
// Stage 2: the diffusion term is dropped (its model is frozen).
double total_loss(const LossComponents& c, const LossWeights& w, int stage);

// Mean per-point L1 distance between pred- and target-transformed input
// points, over valid teeth. Throws std::invalid_argument when no tooth is
// valid or set sizes disagree with the dentition.
double reconstruction_loss(const geom::TransformSet& pred, const geom::TransformSet& target,
                           const geom::Dentition& input);

// Mean per-tooth L1 distance between pred- and target-transformed centroids.
double centroid_loss(const geom::TransformSet& pred, const geom::TransformSet& target,
                     const geom::Dentition& input);

// Mean Euclidean distance over corresponding valid points (same tooth, same
// point index). Validity masks must agree.
double tre(const geom::Dentition& pred_cloud, const geom::Dentition& target_cloud);

// Arch-alignment error: degree-4 curve fitted to the target centroids, then
// the mean distance of the predicted centroids to it. Needs >= 5 valid teeth
// (InsufficientDataError otherwise).
double aae(const geom::Dentition& pred_cloud, const geom::Dentition& target_cloud);

struct SampleMetrics {
  std::string id;
  double tre = 0.0;
  double aae = 0.0;
};

// Mean and population std are taken over samples.
struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  double tre_mean = 0.0;
  double tre_std = 0.0;
  double aae_mean = 0.0;
  double aae_std = 0.0;

  static MetricsReport from_samples(std::vector<SampleMetrics> rows);
};

// Per-sample rows (id, tre, aae) plus the aggregate line.
std::string to_csv(const MetricsReport& report);
std::string to_json(const MetricsReport& report);

// ---- differentiable version for the training graph ----

template <typename T>
struct GeometryLossNodes {
  ad::Tensor<T> rec;
  ad::Tensor<T> center;
};

// Builds both geometric losses from per-tooth raw transform vectors (16
// values each, as produced by the regression network; entries 12..15 are
// ignored by point application). Targets are precomputed constants.
template <typename T>
GeometryLossNodes<T> geometry_loss_nodes(const std::vector<ad::Tensor<T>>& raw_rows,
                                         const geom::Dentition& input,
                                         const geom::TransformSet& target) {
  const int m = input.tooth_count();
  if (static_cast<int>(raw_rows.size()) != m || target.size() != m) {
    throw ShapeError("geometry_loss_nodes",
                     "[" + std::to_string(raw_rows.size()) + "] raw rows, [" +
                         std::to_string(target.size()) + "] targets",
                     "[" + std::to_string(m) + "] teeth");
  }

  std::size_t n_points = 0;
  ad::Tensor<T> rec_sum;
  ad::Tensor<T> center_sum;
  int m_valid = 0;
  for (int i = 0; i < m; ++i) {
    const auto s = static_cast<std::size_t>(i);
    if (!input.valid(i)) continue;
    const auto& pts = input.teeth[s].points;
    const auto p = static_cast<std::size_t>(pts.rows());
    n_points += p;
    ++m_valid;

    std::vector<T> flat(p * 3);
    for (std::size_t r = 0; r < p; ++r) {
      for (int c = 0; c < 3; ++c) {
        flat[r * 3 + static_cast<std::size_t>(c)] =
            static_cast<T>(pts(static_cast<Eigen::Index>(r), c));
      }
    }
    auto input_pts = ad::Tensor<T>::constant({p, 3}, std::move(flat));
    auto pred_pts = ad::transform_points(raw_rows[s], input_pts);

    const geom::PointCloud tgt =
        geom::apply_transform(target.transforms[s], input.teeth[s]);
    std::vector<T> tgt_flat(p * 3);
    for (std::size_t r = 0; r < p; ++r) {
      for (int c = 0; c < 3; ++c) {
        tgt_flat[r * 3 + static_cast<std::size_t>(c)] =
            static_cast<T>(tgt.points(static_cast<Eigen::Index>(r), c));
      }
    }
    auto target_pts = ad::Tensor<T>::constant({p, 3}, std::move(tgt_flat));

    auto diff = ad::sub(pred_pts, target_pts);
    auto tooth_rec = ad::sum_abs(diff);
    rec_sum = rec_sum.defined() ? ad::add(rec_sum, tooth_rec) : tooth_rec;

    auto centroid_diff =
        ad::sub(ad::mean_over_axis(pred_pts, 0), ad::mean_over_axis(target_pts, 0));
    auto tooth_center = ad::sum_abs(centroid_diff);
    center_sum = center_sum.defined() ? ad::add(center_sum, tooth_center) : tooth_center;
  }
  if (m_valid == 0) {
    throw std::invalid_argument("geometry_loss_nodes: no valid teeth");
  }

  GeometryLossNodes<T> out;
  out.rec = ad::scale(rec_sum, T(1) / static_cast<T>(n_points));
  out.center = ad::scale(center_sum, T(1) / static_cast<T>(m_valid));
  return out;
}

}  // namespace talign::losses
