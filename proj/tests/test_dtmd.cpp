#include "talign/dtmd.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "talign/errors.hpp"
#include "talign/geometry.hpp"
#include "talign/ops.hpp"
#include "talign/rng.hpp"

using namespace talign;

namespace {

dtmd::MatrixState random_state(int rows, Rng& rng, double scale = 0.3) {
  dtmd::MatrixState m(rows, 16);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < 16; ++c) m(r, c) = scale * rng.normal();
  }
  return m;
}

dtmd::EstimatorConfig small_estimator(std::uint64_t seed) {
  dtmd::EstimatorConfig cfg;
  cfg.rows = 2;
  cfg.hidden = {8};
  cfg.time_embed_dim = 4;
  cfg.seed = seed;
  return cfg;
}

geom::TransformSet random_transforms(int n, Rng& rng) {
  auto set = geom::TransformSet::identities(n);
  for (auto& t : set.transforms) {
    const geom::Vec3 angles(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                            rng.uniform(-0.4, 0.4));
    const geom::Vec3 shift(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                           rng.uniform(-2.0, 2.0));
    t = geom::make_transform(geom::euler_to_rotation(angles), shift);
  }
  return set;
}

}  // namespace

TEST_SUITE("dtmd") {

TEST_CASE("single-step schedule keeps half the signal") {
  const dtmd::NoiseSchedule sched(1, 0.5, 0.5);
  CHECK(sched.steps() == 1);
  CHECK(sched.beta(1) == 0.5);
  CHECK(sched.gamma(1) == 0.5);
}

TEST_CASE("constant betas give the closed-form gamma") {
  const double b = 0.03;
  const dtmd::NoiseSchedule sched(10, b, b);
  for (int t = 1; t <= 10; ++t) {
    CHECK(sched.gamma(t) == doctest::Approx(std::pow(1.0 - b, t)).epsilon(1e-12));
  }
}

TEST_CASE("default schedule: linear betas, vanishing terminal gamma") {
  const auto sched = dtmd::build_schedule(dtmd::ScheduleConfig{});
  REQUIRE(sched.steps() == 1000);
  CHECK(sched.beta(1) == 1e-4);
  CHECK(sched.beta(1000) == 0.02);

  // Interior betas interpolate linearly between the endpoints.
  const double want500 = 1e-4 + (0.02 - 1e-4) * 499.0 / 999.0;
  CHECK(sched.beta(500) == doctest::Approx(want500).epsilon(1e-12));

  double prev = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double g = sched.gamma(t);
    CHECK(g > 0.0);
    CHECK(g < prev);  // strictly decreasing
    prev = g;
  }
  CHECK(sched.gamma(1000) < 1e-4);
}

TEST_CASE("schedule rejects invalid parameters") {
  CHECK_THROWS_AS(dtmd::NoiseSchedule(0, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(dtmd::NoiseSchedule(10, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(dtmd::NoiseSchedule(10, 0.03, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(dtmd::NoiseSchedule(10, 1e-4, 1.0), std::invalid_argument);

  const dtmd::NoiseSchedule sched(10, 1e-4, 0.02);
  CHECK_THROWS_AS((void)sched.beta(0), std::invalid_argument);
  CHECK_THROWS_AS((void)sched.gamma(11), std::invalid_argument);
}

TEST_CASE("identity transforms normalize to the zero state") {
  const auto state = dtmd::normalize_transforms(geom::TransformSet::identities(5), 2.0);
  REQUIRE(state.rows() == 5);
  CHECK(state.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a pure translation touches exactly the translation entries") {
  auto set = geom::TransformSet::identities(1);
  set.transforms[0] =
      geom::make_transform(geom::Mat3::Identity(), geom::Vec3(1.5, -2.0, 0.25));
  const auto state = dtmd::normalize_transforms(set, 0.5);

  CHECK(state(0, 3) == 3.0);    // 1.5 / 0.5
  CHECK(state(0, 7) == -4.0);
  CHECK(state(0, 11) == 0.5);
  for (int c = 0; c < 16; ++c) {
    if (c == 3 || c == 7 || c == 11) continue;
    CHECK(state(0, c) == 0.0);
  }
}

TEST_CASE("normalize/denormalize round-trips transforms") {
  Rng rng(1);
  const auto set = random_transforms(6, rng);
  for (double scale : {1.0, 0.25, 3.0}) {
    const auto back = dtmd::denormalize_transforms(
        dtmd::normalize_transforms(set, scale), scale);
    for (int i = 0; i < set.size(); ++i) {
      const double diff = (back.transforms[static_cast<std::size_t>(i)].matrix -
                           set.transforms[static_cast<std::size_t>(i)].matrix)
                              .cwiseAbs()
                              .maxCoeff();
      CHECK(diff <= 1e-12);
    }
  }
}

TEST_CASE("normalization scale must be positive and finite") {
  const auto set = geom::TransformSet::identities(2);
  const dtmd::MatrixState state = dtmd::MatrixState::Zero(2, 16);
  for (double bad : {0.0, -1.0, std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::infinity()}) {
    CHECK_THROWS_AS((void)dtmd::normalize_transforms(set, bad), std::invalid_argument);
    CHECK_THROWS_AS((void)dtmd::denormalize_transforms(state, bad),
                    std::invalid_argument);
  }
}

TEST_CASE("forward diffusion matches its definition") {
  Rng rng(2);
  const auto m0 = random_state(3, rng);
  const auto noise = random_state(3, rng, 1.0);
  const dtmd::NoiseSchedule sched(10, 1e-3, 0.05);

  for (int t : {1, 5, 10}) {
    const auto mt = dtmd::forward_diffuse(m0, t, noise, sched);
    const double g = sched.gamma(t);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 16; ++c) {
        const double want = std::sqrt(g) * m0(r, c) + std::sqrt(1.0 - g) * noise(r, c);
        CHECK(mt(r, c) == doctest::Approx(want).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("forward diffusion edge cases") {
  Rng rng(3);
  const auto noise = random_state(2, rng, 1.0);

  SUBCASE("tiny beta keeps the signal") {
    const dtmd::NoiseSchedule sched(10, 1e-9, 1e-9);
    const auto m0 = random_state(2, rng);
    const auto mt = dtmd::forward_diffuse(m0, 1, noise, sched);
    CHECK((mt - m0).cwiseAbs().maxCoeff() <= 1e-3);
  }
  SUBCASE("zero signal leaves pure scaled noise") {
    const dtmd::NoiseSchedule sched(4, 0.1, 0.1);
    const dtmd::MatrixState zero = dtmd::MatrixState::Zero(2, 16);
    const auto mt = dtmd::forward_diffuse(zero, 2, noise, sched);
    const double sn = std::sqrt(1.0 - sched.gamma(2));
    // One rounding apart at most: the library may contract the a*x + b*y
    // form into fused multiply-adds.
    CHECK((mt - sn * noise).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("shape and step validation") {
    const dtmd::NoiseSchedule sched(4, 0.1, 0.1);
    const dtmd::MatrixState m0 = dtmd::MatrixState::Zero(3, 16);
    CHECK_THROWS_AS((void)dtmd::forward_diffuse(m0, 2, noise, sched), ShapeError);
    const dtmd::MatrixState ok = dtmd::MatrixState::Zero(2, 16);
    CHECK_THROWS_AS((void)dtmd::forward_diffuse(ok, 5, noise, sched),
                    std::invalid_argument);
  }
}

TEST_CASE("diffused states concentrate at the predicted moments") {
  // Light statistical check; the acceptance harness runs the strict version.
  Rng rng(4);
  dtmd::MatrixState m0(1, 16);
  for (int c = 0; c < 16; ++c) m0(0, c) = 0.5;
  const auto sched = dtmd::build_schedule(dtmd::ScheduleConfig{});

  const int t = 500, trials = 4000;
  const double g = sched.gamma(t);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < trials; ++i) {
    const auto mt = dtmd::forward_diffuse(m0, t, dtmd::sample_noise(1, rng), sched);
    for (int c = 0; c < 16; ++c) {
      sum += mt(0, c);
      sum_sq += mt(0, c) * mt(0, c);
    }
  }
  const double n = trials * 16.0;
  const double mean = sum / n;
  const double stddev = std::sqrt(sum_sq / n - mean * mean);
  CHECK(std::abs(mean - std::sqrt(g) * 0.5) <= 4.0 * std::sqrt((1.0 - g) / n));
  CHECK(std::abs(stddev - std::sqrt(1.0 - g)) <= 0.03 * std::sqrt(1.0 - g));
}

TEST_CASE("noise draws are unit gaussians, deterministic per seed") {
  Rng bad(0);
  CHECK_THROWS_AS((void)dtmd::sample_noise(0, bad), std::invalid_argument);

  Rng a(5), b(5);
  CHECK(dtmd::sample_noise(3, a) == dtmd::sample_noise(3, b));

  Rng rng(6);
  double sum = 0.0, sum_sq = 0.0;
  const int rows = 2000;
  const auto big = dtmd::sample_noise(rows, rng);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < 16; ++c) {
      sum += big(r, c);
      sum_sq += big(r, c) * big(r, c);
    }
  }
  const double n = rows * 16.0;
  const double mean = sum / n;
  const double stddev = std::sqrt(sum_sq / n - mean * mean);
  CHECK(std::abs(mean) <= 0.05);
  CHECK(std::abs(stddev - 1.0) <= 0.05);
}

TEST_CASE("time embedding follows the sinusoidal ladder") {
  const auto emb = dtmd::time_embedding(7, 8);
  REQUIRE(emb.size() == 8);
  for (int k = 0; k < 4; ++k) {
    const double freq = std::pow(10000.0, -k / 4.0);
    CHECK(emb[static_cast<std::size_t>(k)] == doctest::Approx(std::sin(7 * freq)));
    CHECK(emb[static_cast<std::size_t>(4 + k)] == doctest::Approx(std::cos(7 * freq)));
  }
  for (double v : emb) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  CHECK(dtmd::time_embedding(7, 8) == emb);                 // deterministic
  CHECK(dtmd::time_embedding(8, 8) != emb);                 // t-sensitive
  CHECK_THROWS_AS((void)dtmd::time_embedding(1, 7), std::invalid_argument);
  CHECK_THROWS_AS((void)dtmd::time_embedding(1, 0), std::invalid_argument);
}

TEST_CASE("estimator configuration guards") {
  dtmd::EstimatorConfig cfg = small_estimator(0);
  cfg.rows = 0;
  CHECK_THROWS_AS(dtmd::NoiseEstimator<float>{cfg}, std::invalid_argument);
  cfg = small_estimator(0);
  cfg.time_embed_dim = 5;
  CHECK_THROWS_AS(dtmd::NoiseEstimator<float>{cfg}, std::invalid_argument);

  const dtmd::NoiseEstimator<float> e(small_estimator(0));
  CHECK_THROWS_AS((void)e.forward_node(ad::Tensor<float>::zeros({3, 16}), 1),
                  ShapeError);
}

TEST_CASE("estimator is a pure function of seed and input") {
  const dtmd::NoiseEstimator<float> a(small_estimator(9));
  const dtmd::NoiseEstimator<float> b(small_estimator(9));

  Rng rng(7);
  const auto state = random_state(2, rng);
  const auto ea = a.estimate(state, 3);
  const auto eb = b.estimate(state, 3);
  CHECK(ea == eb);
  CHECK(ea.allFinite());
  CHECK(a.estimate(state, 4) != ea);  // time embedding feeds through
}

TEST_CASE("zeroed estimator weights produce a zero estimate") {
  dtmd::NoiseEstimator<float> e(small_estimator(11));
  for (auto& p : e.parameters()) {
    std::fill(p.mutable_values().begin(), p.mutable_values().end(), 0.0f);
  }
  Rng rng(8);
  const auto est = e.estimate(random_state(2, rng), 5);
  CHECK(est.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("diffusion loss vanishes for an oracle estimator") {
  Rng seed_rng(9);
  const auto m_gt = random_state(2, seed_rng);
  const auto sched = dtmd::build_schedule({100, 1e-4, 0.02});

  // The oracle inverts the diffusion: eps = (mt - sqrt(g) m_gt)/sqrt(1-g).
  dtmd::EstimatorFn oracle_fn = [&](const dtmd::MatrixState& mt, int t) {
    const double g = sched.gamma(t);
    return ((mt - std::sqrt(g) * m_gt) / std::sqrt(1.0 - g)).eval();
  };

  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    CHECK(dtmd::diffusion_loss(oracle_fn, m_gt, sched, rng) <= 1e-20);
  }
}

TEST_CASE("diffusion loss of a zero estimator concentrates at one") {
  Rng seed_rng(11);
  const auto m_gt = random_state(2, seed_rng, 0.1);
  const auto sched = dtmd::build_schedule(dtmd::ScheduleConfig{});
  dtmd::EstimatorFn zero_fn = [](const dtmd::MatrixState& mt, int) {
    return dtmd::MatrixState::Zero(mt.rows(), 16).eval();
  };

  // loss = |eps|^2/n plus a gamma-weighted signal term of order |m_gt|^2.
  Rng rng(12);
  double acc = 0.0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) acc += dtmd::diffusion_loss(zero_fn, m_gt, sched, rng);
  acc /= trials;
  CHECK(acc > 0.0);
  CHECK(std::abs(acc - 1.0) <= 0.05);
}

TEST_CASE("diffusion loss is never negative") {
  Rng rng(13);
  const auto m_gt = random_state(2, rng);
  const auto sched = dtmd::build_schedule({50, 1e-3, 0.05});
  const dtmd::NoiseEstimator<float> e(small_estimator(13));
  for (int i = 0; i < 25; ++i) {
    CHECK(dtmd::diffusion_loss(e, m_gt, sched, rng) >= 0.0);
  }
}

TEST_CASE("contrastive loss of identical states is exactly zero") {
  Rng seed_rng(14);
  const auto m = random_state(2, seed_rng);
  const auto sched = dtmd::build_schedule({50, 1e-3, 0.05});
  const dtmd::NoiseEstimator<float> e(small_estimator(15));

  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    CHECK(dtmd::contrastive_loss(e, m, m, sched, rng) == 0.0);
  }
}

TEST_CASE("contrastive loss is symmetric in its two states") {
  Rng seed_rng(15);
  const auto a = random_state(2, seed_rng);
  const auto b = random_state(2, seed_rng);
  const auto sched = dtmd::build_schedule({50, 1e-3, 0.05});
  const dtmd::NoiseEstimator<float> e(small_estimator(17));

  Rng r1(3), r2(3);  // same draw stream for both orders
  CHECK(dtmd::contrastive_loss(e, a, b, sched, r1) ==
        dtmd::contrastive_loss(e, b, a, sched, r2));
}

TEST_CASE("contrastive loss with a linear stub hits the closed form") {
  Rng seed_rng(16);
  const auto m_gt = random_state(3, seed_rng);
  const auto m_pre = random_state(3, seed_rng);

  dtmd::MatrixState amp(3, 16);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 16; ++c) amp(r, c) = 0.5 + 0.1 * (r + c);
  }
  dtmd::EstimatorFn linear_fn = [&](const dtmd::MatrixState& mt, int) {
    return (amp.cwiseProduct(mt)).eval();
  };

  // One-step schedule pins t = 1 and gamma = 1 - beta; the shared noise
  // cancels, leaving sqrt(gamma) |amp (m_gt - m_pre)|.
  const dtmd::NoiseSchedule sched(1, 0.5, 0.5);
  const double want =
      std::sqrt(0.5) * (amp.cwiseProduct(m_gt - m_pre)).cwiseAbs().sum() / (3.0 * 16.0);

  Rng rng(17);
  CHECK(dtmd::contrastive_loss(linear_fn, m_gt, m_pre, sched, rng) ==
        doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("contrastive loss checks state shapes") {
  const auto sched = dtmd::build_schedule({10, 1e-3, 0.05});
  dtmd::EstimatorFn id_fn = [](const dtmd::MatrixState& mt, int) { return mt; };
  Rng rng(18);
  const dtmd::MatrixState a = dtmd::MatrixState::Zero(2, 16);
  const dtmd::MatrixState b = dtmd::MatrixState::Zero(3, 16);
  CHECK_THROWS_AS((void)dtmd::contrastive_loss(id_fn, a, b, sched, rng), ShapeError);
}

TEST_CASE("graph losses agree with the value-level definitions") {
  Rng rng(19);
  const auto m_gt = random_state(2, rng);
  const auto noise = random_state(2, rng, 1.0);
  const int t = 7;
  const auto sched = dtmd::build_schedule({20, 1e-3, 0.05});

  dtmd::EstimatorConfig cfg = small_estimator(19);
  const dtmd::NoiseEstimator<double> live(cfg);
  const auto detached = live.clone_detached();

  // m_pre enters as a constant so only values are compared here.
  const auto m_pre_state = random_state(2, rng);
  std::vector<double> flat(2 * 16);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 16; ++c) flat[static_cast<std::size_t>(r * 16 + c)] = m_pre_state(r, c);
  }
  auto m_pre = ad::Tensor<double>::constant({2, 16}, flat);

  const auto nodes = dtmd::diffusion_loss_nodes(live, detached, m_pre, m_gt, t, noise, sched);

  const auto mt_gt = dtmd::forward_diffuse(m_gt, t, noise, sched);
  const auto mt_pre = dtmd::forward_diffuse(m_pre_state, t, noise, sched);
  const auto est_gt = live.estimate(mt_gt, t);
  const auto est_pre = live.estimate(mt_pre, t);

  const double want_diffusion = (noise - est_gt).squaredNorm() / 32.0;
  const double want_denoise = (est_pre - est_gt).cwiseAbs().sum() / 32.0;
  CHECK(nodes.diffusion.item() == doctest::Approx(want_diffusion).epsilon(1e-12));
  CHECK(nodes.denoise.item() == doctest::Approx(want_denoise).epsilon(1e-12));
}

TEST_CASE("the contrastive branch never reaches estimator parameters") {
  Rng rng(20);
  const auto m_gt = random_state(2, rng);
  const auto noise = random_state(2, rng, 1.0);
  const auto sched = dtmd::build_schedule({20, 1e-3, 0.05});

  dtmd::NoiseEstimator<float> live(small_estimator(21));
  const auto detached = live.clone_detached();

  std::vector<float> flat(2 * 16);
  Rng prng(21);
  for (auto& v : flat) v = static_cast<float>(0.2 * prng.normal());
  auto m_pre = ad::Tensor<float>::parameter({2, 16}, flat);

  const auto nodes =
      dtmd::diffusion_loss_nodes(live, detached, m_pre, m_gt, 5, noise, sched);

  SUBCASE("denoise gradient: zero on the estimator, live on the producer") {
    ad::backward(nodes.denoise);
    for (const auto& p : live.parameters()) {
      // Exactly zero: either never allocated or never written.
      for (float g : p.grad()) CHECK(g == 0.0f);
    }
    REQUIRE(m_pre.grad().size() == 32);
    bool any = false;
    for (float g : m_pre.grad()) any |= (g != 0.0f);
    CHECK(any);
  }

  SUBCASE("diffusion gradient: live on the estimator, none on the producer") {
    ad::backward(nodes.diffusion);
    bool any = false;
    for (const auto& p : live.parameters()) {
      for (float g : p.grad()) any |= (g != 0.0f);
    }
    CHECK(any);
    CHECK(m_pre.grad().empty());
  }
}

TEST_CASE("loss node shape guards") {
  Rng rng(22);
  const auto m_gt = random_state(2, rng);
  const auto noise = random_state(2, rng, 1.0);
  const auto bad_noise = random_state(3, rng, 1.0);
  const auto sched = dtmd::build_schedule({10, 1e-3, 0.05});
  const dtmd::NoiseEstimator<float> live(small_estimator(23));
  const auto detached = live.clone_detached();

  auto bad_pre = ad::Tensor<float>::zeros({3, 16});
  CHECK_THROWS_AS((void)dtmd::diffusion_loss_nodes(live, detached, bad_pre, m_gt, 1,
                                                   noise, sched),
                  ShapeError);
  auto ok_pre = ad::Tensor<float>::zeros({2, 16});
  CHECK_THROWS_AS((void)dtmd::diffusion_loss_nodes(live, detached, ok_pre, m_gt, 1,
                                                   bad_noise, sched),
                  ShapeError);
}

TEST_CASE("reverse sampling is finite and seed-deterministic") {
  const auto sched = dtmd::build_schedule({5, 1e-3, 0.05});
  const dtmd::NoiseEstimator<float> e(small_estimator(25));

  Rng a(23), b(23);
  const auto xa = dtmd::reverse_sample(e, sched, 2, a);
  const auto xb = dtmd::reverse_sample(e, sched, 2, b);
  REQUIRE(xa.rows() == 2);
  CHECK(xa.allFinite());
  CHECK(xa == xb);
}

}  // TEST_SUITE
