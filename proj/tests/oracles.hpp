#pragma once

// Reference implementations the tests check the library against. Everything
// here is deliberately naive (plain loops, schoolbook algorithms) and shares
// no code path with the library beyond container types.

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "talign/geometry.hpp"

namespace oracle {

using talign::geom::Dentition;
using talign::geom::Mat4;
using talign::geom::TransformSet;
using talign::geom::Vec3;

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
  Mat4 out;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a(r, k) * b(k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

inline Vec3 apply_point(const Mat4& m, const Vec3& p) {
  const double h[4] = {p(0), p(1), p(2), 1.0};
  double out[4];
  for (int r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) acc += m(r, k) * h[k];
    out[r] = acc;
  }
  return Vec3(out[0], out[1], out[2]);
}

// General Gauss-Jordan inverse with partial pivoting; knows nothing about
// rigid structure.
inline Mat4 mat4_inverse_gauss(Mat4 m) {
  Mat4 inv = Mat4::Identity();
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r) {
      if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
    }
    if (std::abs(m(pivot, col)) < 1e-12) throw std::runtime_error("singular matrix");
    if (pivot != col) {
      m.row(pivot).swap(m.row(col));
      inv.row(pivot).swap(inv.row(col));
    }
    const double d = m(col, col);
    for (int c = 0; c < 4; ++c) {
      m(col, c) /= d;
      inv(col, c) /= d;
    }
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = m(r, col);
      for (int c = 0; c < 4; ++c) {
        m(r, c) -= f * m(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }
  return inv;
}

// Solves the dense linear system a*x = b by Gaussian elimination with partial
// pivoting (small n only).
inline std::vector<double> solve_dense(std::vector<std::vector<double>> a,
                                       std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-12) throw std::runtime_error("singular system");
    std::swap(a[pivot], a[col]);
    std::swap(b[pivot], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a[i][c] * x[c];
    x[i] = acc / a[i][i];
  }
  return x;
}

// Degree-4 least squares via explicit normal equations.
inline std::array<double, 5> polyfit4_normal_equations(const std::vector<double>& xs,
                                                       const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  std::vector<std::vector<double>> ata(5, std::vector<double>(5, 0.0));
  std::vector<double> aty(5, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double pow_cache[9];
    pow_cache[0] = 1.0;
    for (int k = 1; k < 9; ++k) pow_cache[k] = pow_cache[k - 1] * xs[i];
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 5; ++c) ata[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] += pow_cache[r + c];
      aty[static_cast<std::size_t>(r)] += pow_cache[r] * ys[i];
    }
  }
  const auto sol = solve_dense(ata, aty);
  return {sol[0], sol[1], sol[2], sol[3], sol[4]};
}

inline double poly_eval(const std::array<double, 5>& c, double x) {
  return c[0] + x * (c[1] + x * (c[2] + x * (c[3] + x * c[4])));
}

// Brute-force minimum distance from (px, py) to the curve over [x0, x1].
inline double dense_curve_distance(double px, double py, const std::array<double, 5>& c,
                                   double x0, double x1, int samples = 1000000) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= samples; ++i) {
    const double x = x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(samples);
    const double dx = x - px;
    const double dy = poly_eval(c, x) - py;
    best = std::min(best, std::sqrt(dx * dx + dy * dy));
  }
  return best;
}

// ---- loss loops (Eq.-level definitions written out directly) ----

inline double loop_reconstruction(const TransformSet& pred, const TransformSet& target,
                                  const Dentition& input) {
  double sum = 0.0;
  long n_points = 0;
  for (int i = 0; i < input.tooth_count(); ++i) {
    if (!input.valid(i)) continue;
    const auto& pts = input.teeth[static_cast<std::size_t>(i)].points;
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      const Vec3 p(pts(r, 0), pts(r, 1), pts(r, 2));
      const Vec3 a = apply_point(pred.transforms[static_cast<std::size_t>(i)].matrix, p);
      const Vec3 b = apply_point(target.transforms[static_cast<std::size_t>(i)].matrix, p);
      sum += std::abs(a(0) - b(0)) + std::abs(a(1) - b(1)) + std::abs(a(2) - b(2));
      ++n_points;
    }
  }
  return sum / static_cast<double>(n_points);
}

inline double loop_centroid(const TransformSet& pred, const TransformSet& target,
                            const Dentition& input) {
  double sum = 0.0;
  int m_valid = 0;
  for (int i = 0; i < input.tooth_count(); ++i) {
    if (!input.valid(i)) continue;
    const auto& pts = input.teeth[static_cast<std::size_t>(i)].points;
    Vec3 ca(0, 0, 0), cb(0, 0, 0);
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      const Vec3 p(pts(r, 0), pts(r, 1), pts(r, 2));
      ca += apply_point(pred.transforms[static_cast<std::size_t>(i)].matrix, p);
      cb += apply_point(target.transforms[static_cast<std::size_t>(i)].matrix, p);
    }
    ca /= static_cast<double>(pts.rows());
    cb /= static_cast<double>(pts.rows());
    sum += std::abs(ca(0) - cb(0)) + std::abs(ca(1) - cb(1)) + std::abs(ca(2) - cb(2));
    ++m_valid;
  }
  return sum / static_cast<double>(m_valid);
}

inline double loop_tre(const Dentition& pred, const Dentition& target) {
  double sum = 0.0;
  long n = 0;
  for (int i = 0; i < pred.tooth_count(); ++i) {
    if (!pred.valid(i)) continue;
    const auto& a = pred.teeth[static_cast<std::size_t>(i)].points;
    const auto& b = target.teeth[static_cast<std::size_t>(i)].points;
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double dx = a(r, 0) - b(r, 0);
      const double dy = a(r, 1) - b(r, 1);
      const double dz = a(r, 2) - b(r, 2);
      sum += std::sqrt(dx * dx + dy * dy + dz * dz);
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

// ---- plain-vector network pieces ----

inline std::vector<double> linear_vec(const std::vector<std::vector<double>>& w,
                                      const std::vector<double>& b,
                                      const std::vector<double>& x) {
  std::vector<double> out(b);
  for (std::size_t o = 0; o < b.size(); ++o) {
    for (std::size_t i = 0; i < x.size(); ++i) out[o] += w[i][o] * x[i];
  }
  return out;
}

inline std::vector<double> relu_vec(std::vector<double> x) {
  for (auto& v : x) v = v > 0.0 ? v : 0.0;
  return x;
}

// Textbook bias-corrected Adam on a plain vector, for descent comparisons.
struct ScriptedAdam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;

  void update(std::vector<double>& x, const std::vector<double>& g, double lr) {
    if (m.empty()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
    }
  }
};

}  // namespace oracle
