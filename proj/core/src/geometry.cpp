#include "talign/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "talign/errors.hpp"

namespace talign::geom {

Dentition Dentition::empty_arch(int tooth_count, int points_per_tooth) {
  Dentition d;
  d.teeth.assign(static_cast<std::size_t>(tooth_count),
                 PointCloud::zeros(points_per_tooth));
  d.validity.assign(static_cast<std::size_t>(tooth_count), 0);
  return d;
}

RigidTransform make_transform(const Mat3& rotation, const Vec3& displacement) {
  if (!rotation.allFinite() || !displacement.allFinite()) {
    throw std::invalid_argument("make_transform: non-finite input");
  }
  RigidTransform t;
  t.matrix.setIdentity();
  t.matrix.block<3, 3>(0, 0) = rotation;
  t.matrix.block<3, 1>(0, 3) = displacement;
  return t;
}

PointCloud apply_transform(const RigidTransform& t, const PointCloud& cloud) {
  if (cloud.empty()) {
    throw std::invalid_argument("apply_transform: empty point cloud");
  }
  const Mat3 r = t.rotation();
  const Vec3 d = t.displacement();
  PointCloud out;
  out.points = cloud.points * r.transpose();
  out.points.rowwise() += d.transpose();
  return out;
}

Dentition apply_transforms(const TransformSet& set, const Dentition& d) {
  if (set.size() != d.tooth_count()) {
    throw ShapeError("apply_transforms",
                     "[" + std::to_string(set.size()) + "] transforms",
                     "[" + std::to_string(d.tooth_count()) + "] teeth");
  }
  Dentition out = d;
  for (int i = 0; i < d.tooth_count(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    if (!d.teeth[s].empty()) {
      out.teeth[s] = apply_transform(set.transforms[s], d.teeth[s]);
    }
  }
  return out;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform t;
  t.matrix = a.matrix * b.matrix;
  return t;
}

RigidTransform invert(const RigidTransform& t) {
  const Mat3 r = t.rotation();
  const double dev = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(dev <= 1e-4)) {
    throw NumericError(
        "invert: rotation block is not orthonormal (max deviation " +
        std::to_string(dev) + ")");
  }
  RigidTransform inv;
  inv.matrix.setIdentity();
  inv.matrix.block<3, 3>(0, 0) = r.transpose();
  inv.matrix.block<3, 1>(0, 3) = -(r.transpose() * t.displacement());
  return inv;
}

Mat3 euler_to_rotation(const Vec3& angles) {
  const double ca = std::cos(angles[0]), sa = std::sin(angles[0]);
  const double cb = std::cos(angles[1]), sb = std::sin(angles[1]);
  const double cc = std::cos(angles[2]), sc = std::sin(angles[2]);
  Mat3 rx, ry, rz;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  ry << cb, 0, sb, 0, 1, 0, -sb, 0, cb;
  rz << cc, -sc, 0, sc, cc, 0, 0, 0, 1;
  return rx * ry * rz;
}

Vec3 rotation_to_euler(const Mat3& r) {
  // With R = Rx(a)Ry(b)Rz(c): r02 = sin b, r01 = -cos b sin c,
  // r00 = cos b cos c, r12 = -sin a cos b, r22 = cos a cos b.
  const double sb = std::clamp(r(0, 2), -1.0, 1.0);
  if (std::abs(sb) > 1.0 - 1e-6) {
    // Gimbal lock: only a -+ c is determined. Put everything into a.
    const double b = sb > 0 ? std::asin(1.0) : std::asin(-1.0);
    const double a = std::atan2(sb * r(1, 0), r(1, 1));
    return Vec3(a, b, 0.0);
  }
  const double b = std::asin(sb);
  const double a = std::atan2(-r(1, 2), r(2, 2));
  const double c = std::atan2(-r(0, 1), r(0, 0));
  return Vec3(a, b, c);
}

Vec3 centroid(const PointCloud& cloud) {
  if (cloud.empty()) {
    throw std::invalid_argument("centroid: empty point cloud");
  }
  return cloud.points.colwise().mean().transpose();
}

ArchCurve fit_arch_curve(const std::vector<Vec3>& centroids,
                         const std::vector<std::uint8_t>& validity) {
  if (centroids.size() != validity.size()) {
    throw ShapeError("fit_arch_curve",
                     "[" + std::to_string(centroids.size()) + "] centroids",
                     "[" + std::to_string(validity.size()) + "] validity flags");
  }
  std::vector<Vec3> kept;
  kept.reserve(centroids.size());
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    if (validity[i]) kept.push_back(centroids[i]);
  }
  if (kept.size() < 5) {
    throw InsufficientDataError(
        "fit_arch_curve: need at least 5 valid centroids, have " +
        std::to_string(kept.size()));
  }

  const auto n = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd vand(n, 5);
  Eigen::VectorXd y(n);
  double x_min = kept[0][0], x_max = kept[0][0];
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = kept[static_cast<std::size_t>(i)][0];
    double p = 1.0;
    for (int k = 0; k < 5; ++k) {
      vand(i, k) = p;
      p *= x;
    }
    y(i) = kept[static_cast<std::size_t>(i)][1];
    x_min = std::min(x_min, x);
    x_max = std::max(x_max, x);
  }

  const Eigen::VectorXd coeffs = vand.colPivHouseholderQr().solve(y);
  ArchCurve curve;
  for (int k = 0; k < 5; ++k) curve.coefficients[static_cast<std::size_t>(k)] = coeffs(k);
  curve.x_min = x_min;
  curve.x_max = x_max;
  return curve;
}

namespace {

double sq_dist_to_curve(double px, double py, double x, const ArchCurve& c) {
  const double dx = x - px;
  const double dy = c.evaluate(x) - py;
  return dx * dx + dy * dy;
}

}  // namespace

double point_to_curve_distance(const Vec3& p, const ArchCurve& curve) {
  if (!(curve.x_max >= curve.x_min)) {
    throw std::invalid_argument("point_to_curve_distance: empty curve range");
  }
  const double px = p[0], py = p[1];
  if (curve.x_max == curve.x_min) {
    return std::sqrt(sq_dist_to_curve(px, py, curve.x_min, curve));
  }

  // Dense scan to bracket the global minimum, then golden-section refinement
  // inside the bracketing cell pair.
  constexpr int kSamples = 1024;
  const double step = (curve.x_max - curve.x_min) / (kSamples - 1);
  int best = 0;
  double best_d = sq_dist_to_curve(px, py, curve.x_min, curve);
  for (int i = 1; i < kSamples; ++i) {
    const double d = sq_dist_to_curve(px, py, curve.x_min + step * i, curve);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }

  double lo = curve.x_min + step * std::max(best - 1, 0);
  double hi = curve.x_min + step * std::min(best + 1, kSamples - 1);
  constexpr double kInvPhi = 0.61803398874989484820;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = sq_dist_to_curve(px, py, x1, curve);
  double f2 = sq_dist_to_curve(px, py, x2, curve);
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo)); ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = sq_dist_to_curve(px, py, x1, curve);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = sq_dist_to_curve(px, py, x2, curve);
    }
  }
  const double mid = 0.5 * (lo + hi);
  const double refined = sq_dist_to_curve(px, py, mid, curve);
  return std::sqrt(std::min(refined, best_d));
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

PointMatrix round_f32(const PointMatrix& m) {
  return m.unaryExpr([](double v) { return round_f32(v); });
}

Mat4 round_f32(const Mat4& m) {
  return m.unaryExpr([](double v) { return round_f32(v); });
}

}  // namespace talign::geom
