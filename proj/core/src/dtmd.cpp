#include "talign/dtmd.hpp"

#include <cmath>
#include <stdexcept>

#include "talign/errors.hpp"

namespace talign::dtmd {

NoiseSchedule::NoiseSchedule(int steps, double beta_min, double beta_max)
    : beta_min_(beta_min), beta_max_(beta_max) {
  if (steps < 1) {
    throw std::invalid_argument("NoiseSchedule: steps must be >= 1");
  }
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw std::invalid_argument(
        "NoiseSchedule: need 0 < beta_min <= beta_max < 1");
  }
  betas_.resize(static_cast<std::size_t>(steps));
  gammas_.resize(static_cast<std::size_t>(steps));
  double cum = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    const double b = beta_min + (beta_max - beta_min) * frac;
    betas_[static_cast<std::size_t>(i)] = b;
    cum *= (1.0 - b);
    gammas_[static_cast<std::size_t>(i)] = cum;
  }
}

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > steps()) {
    throw std::invalid_argument("NoiseSchedule: step " + std::to_string(t) +
                                " out of range [1, " + std::to_string(steps()) + "]");
  }
}

NoiseSchedule build_schedule(int steps, double beta_min, double beta_max) {
  return NoiseSchedule(steps, beta_min, beta_max);
}

MatrixState normalize_transforms(const geom::TransformSet& set, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("normalize_transforms: scale must be positive and finite");
  }
  MatrixState state(set.size(), 16);
  for (int i = 0; i < set.size(); ++i) {
    const auto& m = set.transforms[static_cast<std::size_t>(i)].matrix;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double identity = (r == c) ? 1.0 : 0.0;
        state(i, r * 4 + c) = (m(r, c) - identity) / scale;
      }
    }
  }
  return state;
}

geom::TransformSet denormalize_transforms(const MatrixState& state, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("denormalize_transforms: scale must be positive and finite");
  }
  geom::TransformSet set = geom::TransformSet::identities(static_cast<int>(state.rows()));
  for (Eigen::Index i = 0; i < state.rows(); ++i) {
    auto& m = set.transforms[static_cast<std::size_t>(i)].matrix;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double identity = (r == c) ? 1.0 : 0.0;
        m(r, c) = state(i, r * 4 + c) * scale + identity;
      }
    }
  }
  return set;
}

MatrixState sample_noise(int rows, Rng& rng) {
  if (rows < 1) {
    throw std::invalid_argument("sample_noise: rows must be >= 1");
  }
  MatrixState noise(rows, 16);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < 16; ++c) noise(r, c) = rng.normal();
  }
  return noise;
}

MatrixState forward_diffuse(const MatrixState& m0, int t, const MatrixState& noise,
                            const NoiseSchedule& sched) {
  if (noise.rows() != m0.rows()) {
    throw ShapeError("forward_diffuse: noise",
                     "[" + std::to_string(noise.rows()) + ",16]",
                     "[" + std::to_string(m0.rows()) + ",16]");
  }
  const double g = sched.gamma(t);  // validates t
  return std::sqrt(g) * m0 + std::sqrt(1.0 - g) * noise;
}

std::vector<double> time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw std::invalid_argument("time_embedding: dim must be even and >= 2");
  }
  // Geometric frequency ladder from 1 down to 1e-4, the classic positional
  // encoding; t stays injective for t < 10^4.
  std::vector<double> emb(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    emb[static_cast<std::size_t>(k)] = std::sin(t * freq);
    emb[static_cast<std::size_t>(half + k)] = std::cos(t * freq);
  }
  return emb;
}

double diffusion_loss(const EstimatorFn& estimator, const MatrixState& m_gt,
                      const NoiseSchedule& sched, Rng& rng) {
  const int t = 1 + static_cast<int>(rng.uniform_index(
                        static_cast<std::size_t>(sched.steps())));
  const MatrixState eps = sample_noise(static_cast<int>(m_gt.rows()), rng);
  const MatrixState mt = forward_diffuse(m_gt, t, eps, sched);
  const MatrixState est = estimator(mt, t);
  if (est.rows() != m_gt.rows()) {
    throw ShapeError("diffusion_loss: estimate",
                     "[" + std::to_string(est.rows()) + ",16]",
                     "[" + std::to_string(m_gt.rows()) + ",16]");
  }
  return (eps - est).squaredNorm() / static_cast<double>(eps.size());
}

double contrastive_loss(const EstimatorFn& estimator, const MatrixState& m_gt,
                        const MatrixState& m_pre, const NoiseSchedule& sched, Rng& rng) {
  if (m_pre.rows() != m_gt.rows()) {
    throw ShapeError("contrastive_loss: m_pre",
                     "[" + std::to_string(m_pre.rows()) + ",16]",
                     "[" + std::to_string(m_gt.rows()) + ",16]");
  }
  const int t = 1 + static_cast<int>(rng.uniform_index(
                        static_cast<std::size_t>(sched.steps())));
  const MatrixState eps = sample_noise(static_cast<int>(m_gt.rows()), rng);
  const MatrixState est_gt = estimator(forward_diffuse(m_gt, t, eps, sched), t);
  const MatrixState est_pre = estimator(forward_diffuse(m_pre, t, eps, sched), t);
  return (est_gt - est_pre).cwiseAbs().sum() / static_cast<double>(est_gt.size());
}

}  // namespace talign::dtmd
