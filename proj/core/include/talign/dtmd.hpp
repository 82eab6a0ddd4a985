#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "talign/geometry.hpp"
#include "talign/layers.hpp"
#include "talign/ops.hpp"
#include "talign/rng.hpp"
#include "talign/tensor.hpp"

namespace talign::dtmd {

// Noise schedule of the denoising chain: linear betas, cumulative-product
// gammas. gamma is strictly decreasing and stays in (0,1).
class NoiseSchedule {
 public:
  NoiseSchedule(int steps, double beta_min, double beta_max);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  // t is 1-based: beta(1) = beta_min, beta(steps) = beta_max.
  double beta(int t) const {
    check_t(t);
    return betas_[static_cast<std::size_t>(t - 1)];
  }
  double gamma(int t) const {
    check_t(t);
    return gammas_[static_cast<std::size_t>(t - 1)];
  }

 private:
  void check_t(int t) const;

  std::vector<double> betas_;
  std::vector<double> gammas_;
  double beta_min_ = 0;
  double beta_max_ = 0;
};

NoiseSchedule build_schedule(int steps, double beta_min, double beta_max);

struct ScheduleConfig {
  int steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

inline NoiseSchedule build_schedule(const ScheduleConfig& cfg) {
  return build_schedule(cfg.steps, cfg.beta_min, cfg.beta_max);
}

// Flattened transform set in the diffusion domain: row r holds tooth r's 4x4
// matrix, row-major, minus the flattened identity, divided by the
// normalization scale. Identity transforms (including every invalid slot)
// map to zero rows.
using MatrixState = Eigen::Matrix<double, Eigen::Dynamic, 16, Eigen::RowMajor>;

MatrixState normalize_transforms(const geom::TransformSet& set, double scale = 1.0);
geom::TransformSet denormalize_transforms(const MatrixState& state, double scale = 1.0);

// Standard normal draw of the same shape as a matrix state.
MatrixState sample_noise(int rows, Rng& rng);

// One-shot jump to step t: sqrt(gamma_t) * m0 + sqrt(1-gamma_t) * noise.
MatrixState forward_diffuse(const MatrixState& m0, int t, const MatrixState& noise,
                            const NoiseSchedule& sched);

// Sinusoidal position embedding of the step index, dim/2 sine + dim/2 cosine
// pairs on a geometric frequency ladder.
std::vector<double> time_embedding(int t, int dim);

struct EstimatorConfig {
  int rows = geom::kToothCount;  // transform slots per state
  std::vector<int> hidden{512, 512};
  int time_embed_dim = 64;
  std::uint64_t seed = 0;
};

// MLP noise estimator: flattened state concatenated with the time embedding,
// relu hidden layers, linear output reshaped back to [rows, 16].
template <typename T>
class NoiseEstimator {
 public:
  explicit NoiseEstimator(EstimatorConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.rows < 1 || cfg_.time_embed_dim < 2 || cfg_.time_embed_dim % 2 != 0) {
      throw std::invalid_argument(
          "NoiseEstimator: rows >= 1 and even time_embed_dim >= 2 required");
    }
    Rng rng(cfg_.seed);
    std::size_t in = static_cast<std::size_t>(cfg_.rows) * 16 +
                     static_cast<std::size_t>(cfg_.time_embed_dim);
    for (int h : cfg_.hidden) {
      layers_.push_back(nn::make_dense<T>(in, static_cast<std::size_t>(h), rng));
      in = static_cast<std::size_t>(h);
    }
    layers_.push_back(nn::make_dense<T>(in, static_cast<std::size_t>(cfg_.rows) * 16, rng));
  }

  const EstimatorConfig& config() const { return cfg_; }

  // Graph forward: state [rows, 16] -> estimate [rows, 16]. The time
  // embedding enters as a constant.
  ad::Tensor<T> forward_node(const ad::Tensor<T>& state, int t) const {
    if (state.rank() != 2 || state.shape()[0] != static_cast<std::size_t>(cfg_.rows) ||
        state.shape()[1] != 16) {
      throw ShapeError("NoiseEstimator: state", ad::shape_to_string(state.shape()),
                       "[" + std::to_string(cfg_.rows) + ",16]");
    }
    const auto emb = time_embedding(t, cfg_.time_embed_dim);
    const std::size_t emb_dim = emb.size();
    std::vector<T> emb_t(emb_dim);
    for (std::size_t i = 0; i < emb_dim; ++i) emb_t[i] = static_cast<T>(emb[i]);
    auto flat = ad::reshape(state, {static_cast<std::size_t>(cfg_.rows) * 16});
    auto joined = ad::concat(
        flat, ad::Tensor<T>::constant({emb_dim}, std::move(emb_t)), 0);
    auto out = nn::mlp_forward(layers_, joined);
    return ad::reshape(out, {static_cast<std::size_t>(cfg_.rows), 16});
  }

  // Value-level forward pass.
  MatrixState estimate(const MatrixState& mt, int t) const {
    std::vector<T> flat(static_cast<std::size_t>(mt.rows()) * 16);
    for (Eigen::Index r = 0; r < mt.rows(); ++r) {
      for (int c = 0; c < 16; ++c) {
        flat[static_cast<std::size_t>(r) * 16 + static_cast<std::size_t>(c)] =
            static_cast<T>(mt(r, c));
      }
    }
    auto state = ad::Tensor<T>::constant(
        {static_cast<std::size_t>(mt.rows()), 16}, std::move(flat));
    auto out = forward_node(state, t);
    MatrixState est(mt.rows(), 16);
    for (Eigen::Index r = 0; r < mt.rows(); ++r) {
      for (int c = 0; c < 16; ++c) {
        est(r, c) = static_cast<double>(
            out.values()[static_cast<std::size_t>(r) * 16 + static_cast<std::size_t>(c)]);
      }
    }
    return est;
  }

  // Gradient-free snapshot of the current weights. Branches that must read
  // the estimator without training it (the contrastive loss) forward through
  // the snapshot.
  NoiseEstimator clone_detached() const {
    NoiseEstimator copy(*this);
    copy.layers_.clear();
    for (const auto& l : layers_) copy.layers_.push_back(nn::detach_layer(l));
    return copy;
  }

  std::vector<ad::Tensor<T>> parameters() const {
    std::vector<ad::Tensor<T>> out;
    nn::collect_parameters(layers_, out);
    return out;
  }

  std::vector<std::pair<std::string, ad::Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, ad::Tensor<T>>> out;
    nn::collect_named_parameters("estimator", layers_, out);
    return out;
  }

  void zero_grad() {
    for (auto p : parameters()) p.zero_grad();
  }

 private:
  EstimatorConfig cfg_;
  std::vector<nn::DenseLayer<T>> layers_;
};

// Estimator as a plain function, so the value-level losses can be exercised
// with analytic stubs as well as real models.
using EstimatorFn = std::function<MatrixState(const MatrixState&, int)>;

template <typename T>
EstimatorFn as_fn(const NoiseEstimator<T>& e) {
  return [&e](const MatrixState& mt, int t) { return e.estimate(mt, t); };
}

// Denoising objective: t ~ U[1, steps], eps ~ N(0, I); mean squared error
// between eps and the estimate from the diffused ground-truth state,
// averaged over all entries.
double diffusion_loss(const EstimatorFn& estimator, const MatrixState& m_gt,
                      const NoiseSchedule& sched, Rng& rng);

// Contrastive estimate discrepancy: one shared (t, eps) diffuses both
// states; returns the mean absolute difference between the two estimates.
double contrastive_loss(const EstimatorFn& estimator, const MatrixState& m_gt,
                        const MatrixState& m_pre, const NoiseSchedule& sched, Rng& rng);

template <typename T>
double diffusion_loss(const NoiseEstimator<T>& e, const MatrixState& m_gt,
                      const NoiseSchedule& sched, Rng& rng) {
  return diffusion_loss(as_fn(e), m_gt, sched, rng);
}

template <typename T>
double contrastive_loss(const NoiseEstimator<T>& e, const MatrixState& m_gt,
                        const MatrixState& m_pre, const NoiseSchedule& sched, Rng& rng) {
  return contrastive_loss(as_fn(e), m_gt, m_pre, sched, rng);
}

// Differentiable training losses for one sample and one (t, eps) draw.
//
//   diffusion: mse(eps, live(diffuse(m_gt)))            -> trains
//   the estimator.
//   denoise:   mean|detached(diffuse(m_pre)) - target|  -> trains the
//   producer of m_pre; `target` is the detached-branch estimate of the
//   diffused ground truth, so no gradient reaches estimator parameters.
//
// `detached` must be a clone_detached() snapshot of `live` taken at the
// current weights: the contrastive term reads the snapshot, which makes the
// stop-gradient explicit in the graph itself.
template <typename T>
struct DtmdLossNodes {
  ad::Tensor<T> diffusion;
  ad::Tensor<T> denoise;
};

template <typename T>
DtmdLossNodes<T> diffusion_loss_nodes(const NoiseEstimator<T>& live,
                                      const NoiseEstimator<T>& detached,
                                      const ad::Tensor<T>& m_pre, const MatrixState& m_gt,
                                      int t, const MatrixState& noise,
                                      const NoiseSchedule& sched) {
  const auto rows = static_cast<std::size_t>(m_gt.rows());
  if (m_pre.rank() != 2 || m_pre.shape()[0] != rows || m_pre.shape()[1] != 16) {
    throw ShapeError("diffusion_loss_nodes: m_pre", ad::shape_to_string(m_pre.shape()),
                     "[" + std::to_string(rows) + ",16]");
  }
  if (noise.rows() != m_gt.rows()) {
    throw ShapeError("diffusion_loss_nodes: noise",
                     "[" + std::to_string(noise.rows()) + ",16]",
                     "[" + std::to_string(m_gt.rows()) + ",16]");
  }
  const double g = sched.gamma(t);
  const T s_signal = static_cast<T>(std::sqrt(g));
  const T s_noise = static_cast<T>(std::sqrt(1.0 - g));

  auto to_tensor = [rows](const MatrixState& m) {
    std::vector<T> flat(rows * 16);
    for (std::size_t r = 0; r < rows; ++r) {
      for (int c = 0; c < 16; ++c) {
        flat[r * 16 + static_cast<std::size_t>(c)] =
            static_cast<T>(m(static_cast<Eigen::Index>(r), c));
      }
    }
    return ad::Tensor<T>::constant({rows, 16}, std::move(flat));
  };

  auto noise_t = to_tensor(noise);
  auto m_gt_t = ad::add(ad::scale(to_tensor(m_gt), s_signal),
                        ad::scale(noise_t, s_noise));

  DtmdLossNodes<T> out;
  out.diffusion = ad::mean_square(ad::sub(noise_t, live.forward_node(m_gt_t, t)));

  auto target = detached.forward_node(m_gt_t, t);
  auto m_pre_t = ad::add(ad::scale(m_pre, s_signal), ad::scale(noise_t, s_noise));
  out.denoise = ad::mean_abs(ad::sub(detached.forward_node(m_pre_t, t), target));
  return out;
}

// Ancestral reverse-chain sampler, a diagnostic for inspecting what the
// estimator has learned; the alignment pipeline itself never calls it.
template <typename T>
MatrixState reverse_sample(const NoiseEstimator<T>& e, const NoiseSchedule& sched,
                           int rows, Rng& rng) {
  MatrixState x = sample_noise(rows, rng);
  for (int t = sched.steps(); t >= 1; --t) {
    const double b = sched.beta(t);
    const double g = sched.gamma(t);
    const MatrixState est = e.estimate(x, t);
    x = (x - (b / std::sqrt(1.0 - g)) * est) / std::sqrt(1.0 - b);
    if (t > 1) {
      const double g_prev = sched.gamma(t - 1);
      const double sigma = std::sqrt(b * (1.0 - g_prev) / (1.0 - g));
      x += sigma * sample_noise(rows, rng);
    }
  }
  return x;
}

}  // namespace talign::dtmd
