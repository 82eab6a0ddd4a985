#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

namespace talign::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Full dentition layout: 16 upper + 16 lower slots, fixed-size point sets.
// Coordinates are arch units; one unit corresponds to one millimetre of the
// synthetic arch.
inline constexpr int kToothCount = 32;
inline constexpr int kPointsPerTooth = 128;

// One point set, a row per point.
struct PointCloud {
  PointMatrix points;

  PointCloud() = default;
  explicit PointCloud(PointMatrix p) : points(std::move(p)) {}

  Eigen::Index size() const { return points.rows(); }
  bool empty() const { return points.rows() == 0; }

  static PointCloud zeros(Eigen::Index n) {
    return PointCloud(PointMatrix::Zero(n, 3));
  }
};

// Rigid motion stored as a 4x4 homogeneous matrix: rotation in the upper-left
// 3x3 block, displacement in the upper-right column. The last row is
// [0,0,0,1] for every transform produced by this module; point application
// only ever reads the top three rows, so a caller-supplied bottom row cannot
// leak into coordinates.
struct RigidTransform {
  Mat4 matrix = Mat4::Identity();

  Mat3 rotation() const { return matrix.block<3, 3>(0, 0); }
  Vec3 displacement() const { return matrix.block<3, 1>(0, 3); }

  static RigidTransform identity() { return RigidTransform{}; }
};

// A tooth slot is "valid" when the tooth is present in the scan. Invalid
// slots keep an all-zero point block so downstream shapes stay fixed.
struct Dentition {
  std::vector<PointCloud> teeth;
  std::vector<std::uint8_t> validity;  // 1 = present

  int tooth_count() const { return static_cast<int>(teeth.size()); }
  bool valid(int i) const { return validity[static_cast<std::size_t>(i)] != 0; }

  int valid_count() const {
    int n = 0;
    for (auto v : validity) n += (v != 0);
    return n;
  }

  static Dentition empty_arch(int tooth_count = kToothCount,
                              int points_per_tooth = kPointsPerTooth);
};

// One transform per tooth slot. Invalid slots hold the identity.
struct TransformSet {
  std::vector<RigidTransform> transforms;

  int size() const { return static_cast<int>(transforms.size()); }

  static TransformSet identities(int n = kToothCount) {
    TransformSet s;
    s.transforms.assign(static_cast<std::size_t>(n), RigidTransform::identity());
    return s;
  }
};

// Degree-4 polynomial y = f(x) fitted to the occlusal-plane projection of the
// tooth centroids, plus the x-range of the centroids it was fitted to.
struct ArchCurve {
  std::array<double, 5> coefficients{};  // ascending powers
  double x_min = 0.0;
  double x_max = 0.0;

  double evaluate(double x) const {
    // Horner form.
    double y = coefficients[4];
    for (int k = 3; k >= 0; --k) y = y * x + coefficients[static_cast<std::size_t>(k)];
    return y;
  }
};

// Builds a rigid transform from a rotation block and a displacement.
// Throws std::invalid_argument on non-finite input.
RigidTransform make_transform(const Mat3& rotation, const Vec3& displacement);

// Applies t to every point: each point is augmented to (p,1), multiplied, and
// the first three components returned. Throws std::invalid_argument on an
// empty cloud.
PointCloud apply_transform(const RigidTransform& t, const PointCloud& cloud);

// Applies transforms slot-wise. Sizes must agree; invalid slots pass their
// (all-zero) blocks through the identity unchanged.
Dentition apply_transforms(const TransformSet& set, const Dentition& d);

// compose(a, b): apply b first, then a. Matrix product a*b.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

// Exact rigid inverse (R^T, -R^T d). Throws NumericError when the rotation
// block is not orthonormal within 1e-4.
RigidTransform invert(const RigidTransform& t);

// Intrinsic X-then-Y-then-Z Euler angles, radians: R = Rx(a) * Ry(b) * Rz(c).
Mat3 euler_to_rotation(const Vec3& angles);

// Inverse of euler_to_rotation. Near gimbal lock (|r02| -> 1) the x/z split
// is not unique; the z angle is set to 0 and the x angle absorbs the rest, so
// euler_to_rotation(rotation_to_euler(R)) always reproduces R.
Vec3 rotation_to_euler(const Mat3& r);

// Arithmetic mean of the points. Throws std::invalid_argument on an empty
// cloud.
Vec3 centroid(const PointCloud& cloud);

// Least-squares degree-4 fit of y over x after projecting valid centroids to
// the z=0 plane. Requires at least 5 valid centroids, else
// InsufficientDataError.
ArchCurve fit_arch_curve(const std::vector<Vec3>& centroids,
                         const std::vector<std::uint8_t>& validity);

// Distance from the z=0 projection of p to the curve segment over
// [x_min, x_max]: 1024 dense samples followed by local refinement of the
// bracketing interval.
double point_to_curve_distance(const Vec3& p, const ArchCurve& curve);

// Rounds every coordinate through IEEE binary32. The on-disk sample format
// stores binary32, so generator outputs pass through this to make encoding
// lossless.
double round_f32(double v);
PointMatrix round_f32(const PointMatrix& m);
Mat4 round_f32(const Mat4& m);

}  // namespace talign::geom
