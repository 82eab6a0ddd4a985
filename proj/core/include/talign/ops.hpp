#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "talign/tensor.hpp"

// Differentiable primitives. Forward values are computed eagerly; each op
// registers a closure that scatters the output gradient into its parents.
// Matrix products go through Eigen so the training loop runs at GEMM speed.

namespace talign::ad {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(op, shape_to_string(a.shape()), shape_to_string(b.shape()));
  }
}

// outer/axis/inner decomposition used by the axis-wise ops.
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw std::invalid_argument("axis " + std::to_string(axis) +
                                " out of range for shape " + shape_to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    if (an->needs_grad) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->needs_grad) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& n) {
    if (an->needs_grad) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->needs_grad) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {x}, [xn, factor](Node<T>& n) {
    if (!xn->needs_grad) return;
    for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += factor * n.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  }
  auto xn = x.node();
  return make_op<T>(x.shape(), std::move(out), {x}, [xn](Node<T>& n) {
    if (!xn->needs_grad) return;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      if (xn->values[i] > T(0)) xn->grad[i] += n.grad[i];
    }
  });
}

// ---- reductions to a scalar ----

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> reduce_scalar(const Tensor<T>& x, Fwd fwd, Bwd bwd) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += fwd(x.values()[i]);
  auto xn = x.node();
  return make_op<T>(Shape{}, {acc}, {x}, [xn, bwd](Node<T>& n) {
    if (!xn->needs_grad) return;
    const T g = n.grad[0];
    for (std::size_t i = 0; i < xn->values.size(); ++i) {
      xn->grad[i] += g * bwd(xn->values[i]);
    }
  });
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  return detail::reduce_scalar(
      x, [](T v) { return v; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  return scale(sum(x), inv);
}

// L1 reductions. The absolute value's subgradient at 0 is taken as 0.
template <typename T>
Tensor<T> sum_abs(const Tensor<T>& x) {
  return detail::reduce_scalar(
      x, [](T v) { return v < T(0) ? -v : v; },
      [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> mean_abs(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  return scale(sum_abs(x), inv);
}

template <typename T>
Tensor<T> sum_square(const Tensor<T>& x) {
  return detail::reduce_scalar(
      x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <typename T>
Tensor<T> mean_square(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  return scale(sum_square(x), inv);
}

// ---- axis-wise ops ----

// Maximum over one axis. Ties resolve to the lowest index, which pins the
// backward scatter: the gradient is one-hot at the winning element.
template <typename T>
Tensor<T> max_over_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.axis == 0) {
    throw std::invalid_argument("max_over_axis: reduced axis is empty");
  }
  Shape out_shape;
  for (std::size_t i = 0; i < x.shape().size(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[i]);
  }
  std::vector<T> out(s.outer * s.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
  const auto& v = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = 0;
      T best_v = v[(o * s.axis) * s.inner + in];
      for (std::size_t k = 1; k < s.axis; ++k) {
        const T cand = v[(o * s.axis + k) * s.inner + in];
        if (cand > best_v) {
          best_v = cand;
          best = k;
        }
      }
      out[o * s.inner + in] = best_v;
      (*argmax)[o * s.inner + in] = best;
    }
  }
  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(out), {x},
                    [xn, s, argmax](Node<T>& n) {
                      if (!xn->needs_grad) return;
                      for (std::size_t o = 0; o < s.outer; ++o) {
                        for (std::size_t in = 0; in < s.inner; ++in) {
                          const std::size_t k = (*argmax)[o * s.inner + in];
                          xn->grad[(o * s.axis + k) * s.inner + in] +=
                              n.grad[o * s.inner + in];
                        }
                      }
                    });
}

template <typename T>
Tensor<T> mean_over_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  if (s.axis == 0) {
    throw std::invalid_argument("mean_over_axis: reduced axis is empty");
  }
  Shape out_shape;
  for (std::size_t i = 0; i < x.shape().size(); ++i) {
    if (i != axis) out_shape.push_back(x.shape()[i]);
  }
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto& v = x.values();
  const T inv = T(1) / static_cast<T>(s.axis);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.axis; ++k) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        out[o * s.inner + in] += v[(o * s.axis + k) * s.inner + in];
      }
    }
  }
  for (auto& e : out) e *= inv;
  auto xn = x.node();
  return make_op<T>(std::move(out_shape), std::move(out), {x},
                    [xn, s, inv](Node<T>& n) {
                      if (!xn->needs_grad) return;
                      for (std::size_t o = 0; o < s.outer; ++o) {
                        for (std::size_t k = 0; k < s.axis; ++k) {
                          for (std::size_t in = 0; in < s.inner; ++in) {
                            xn->grad[(o * s.axis + k) * s.inner + in] +=
                                inv * n.grad[o * s.inner + in];
                          }
                        }
                      }
                    });
}

// Row-blockwise maximum: input [M*P, C] viewed as M segments of P rows each,
// output [M, C]. Equivalent to max_over_axis per segment; batching the
// segments keeps the preceding shared-weight layers as single matrix
// products.
template <typename T>
Tensor<T> segment_max(const Tensor<T>& x, std::size_t segments) {
  if (x.rank() != 2) {
    throw ShapeError("segment_max", shape_to_string(x.shape()), "[rows,cols]");
  }
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (segments == 0 || rows % segments != 0) {
    throw ShapeError("segment_max: rows not divisible by segment count",
                     shape_to_string(x.shape()),
                     "[k*" + std::to_string(segments) + ",cols]");
  }
  const std::size_t p = rows / segments;
  std::vector<T> out(segments * cols);
  auto argmax = std::make_shared<std::vector<std::size_t>>(segments * cols);
  const auto& v = x.values();
  for (std::size_t m = 0; m < segments; ++m) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = 0;
      T best_v = v[(m * p) * cols + c];
      for (std::size_t k = 1; k < p; ++k) {
        const T cand = v[(m * p + k) * cols + c];
        if (cand > best_v) {
          best_v = cand;
          best = k;
        }
      }
      out[m * cols + c] = best_v;
      (*argmax)[m * cols + c] = best;
    }
  }
  auto xn = x.node();
  return make_op<T>(Shape{segments, cols}, std::move(out), {x},
                    [xn, segments, p, cols, argmax](Node<T>& n) {
                      if (!xn->needs_grad) return;
                      for (std::size_t m = 0; m < segments; ++m) {
                        for (std::size_t c = 0; c < cols; ++c) {
                          const std::size_t k = (*argmax)[m * cols + c];
                          xn->grad[(m * p + k) * cols + c] += n.grad[m * cols + c];
                        }
                      }
                    });
}

// ---- shape ops ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape", shape_to_string(x.shape()), shape_to_string(shape));
  }
  auto xn = x.node();
  return make_op<T>(std::move(shape), x.values(), {x}, [xn](Node<T>& n) {
    if (!xn->needs_grad) return;
    for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  if (a.rank() != b.rank()) {
    throw ShapeError("concat", shape_to_string(a.shape()), shape_to_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.shape()[i] != b.shape()[i]) {
      throw ShapeError("concat", shape_to_string(a.shape()), shape_to_string(b.shape()));
    }
  }
  const auto sa = detail::split_axis(a.shape(), axis);
  const auto sb = detail::split_axis(b.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = sa.axis + sb.axis;

  const std::size_t block_a = sa.axis * sa.inner;
  const std::size_t block_b = sb.axis * sb.inner;
  std::vector<T> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < sa.outer; ++o) {
    T* dst = out.data() + o * (block_a + block_b);
    const T* pa = a.values().data() + o * block_a;
    const T* pb = b.values().data() + o * block_b;
    std::copy(pa, pa + block_a, dst);
    std::copy(pb, pb + block_b, dst + block_a);
  }
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out_shape), std::move(out), {a, b},
                    [an, bn, sa, block_a, block_b](Node<T>& n) {
                      for (std::size_t o = 0; o < sa.outer; ++o) {
                        const T* src = n.grad.data() + o * (block_a + block_b);
                        if (an->needs_grad) {
                          T* ga = an->grad.data() + o * block_a;
                          for (std::size_t i = 0; i < block_a; ++i) ga[i] += src[i];
                        }
                        if (bn->needs_grad) {
                          T* gb = bn->grad.data() + o * block_b;
                          for (std::size_t i = 0; i < block_b; ++i) gb[i] += src[block_a + i];
                        }
                      }
                    });
}

// Stacks M rank-1 tensors of equal length into an [M, C] matrix.
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) {
    throw std::invalid_argument("stack_rows: need at least one row");
  }
  const std::size_t cols = rows[0].size();
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != cols) {
      throw ShapeError("stack_rows", shape_to_string(r.shape()),
                       "[" + std::to_string(cols) + "]");
    }
  }
  std::vector<T> out;
  out.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  std::vector<std::shared_ptr<Node<T>>> pnodes;
  pnodes.reserve(rows.size());
  for (const auto& r : rows) pnodes.push_back(r.node());
  return make_op<T>(Shape{rows.size(), cols}, std::move(out), rows,
                    [pnodes, cols](Node<T>& n) {
                      for (std::size_t r = 0; r < pnodes.size(); ++r) {
                        auto& p = pnodes[r];
                        if (!p->needs_grad) continue;
                        const T* src = n.grad.data() + r * cols;
                        for (std::size_t c = 0; c < cols; ++c) p->grad[c] += src[c];
                      }
                    });
}

template <typename T>
Tensor<T> slice_row(const Tensor<T>& x, std::size_t row) {
  if (x.rank() != 2) {
    throw ShapeError("slice_row", shape_to_string(x.shape()), "[rows,cols]");
  }
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (row >= rows) {
    throw std::invalid_argument("slice_row: row " + std::to_string(row) +
                                " out of range for shape " + shape_to_string(x.shape()));
  }
  std::vector<T> out(x.values().begin() + static_cast<std::ptrdiff_t>(row * cols),
                     x.values().begin() + static_cast<std::ptrdiff_t>((row + 1) * cols));
  auto xn = x.node();
  return make_op<T>(Shape{cols}, std::move(out), {x}, [xn, row, cols](Node<T>& n) {
    if (!xn->needs_grad) return;
    T* dst = xn->grad.data() + row * cols;
    for (std::size_t c = 0; c < cols; ++c) dst[c] += n.grad[c];
  });
}

// Repeats a rank-1 tensor as M identical rows. Gradient sums over the rows.
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& x, std::size_t count) {
  if (x.rank() != 1) {
    throw ShapeError("tile_rows", shape_to_string(x.shape()), "[cols]");
  }
  if (count == 0) {
    throw std::invalid_argument("tile_rows: count must be positive");
  }
  const std::size_t cols = x.size();
  std::vector<T> out;
  out.reserve(count * cols);
  for (std::size_t r = 0; r < count; ++r) {
    out.insert(out.end(), x.values().begin(), x.values().end());
  }
  auto xn = x.node();
  return make_op<T>(Shape{count, cols}, std::move(out), {x},
                    [xn, count, cols](Node<T>& n) {
                      if (!xn->needs_grad) return;
                      for (std::size_t r = 0; r < count; ++r) {
                        const T* src = n.grad.data() + r * cols;
                        for (std::size_t c = 0; c < cols; ++c) xn->grad[c] += src[c];
                      }
                    });
}

// ---- linear algebra ----

// Affine map y = x W + b with x either [R, in] or [in], W [in, out], b [out].
// Both directions are Eigen matrix products.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2) {
    throw ShapeError("linear: weight", shape_to_string(w.shape()), "[in,out]");
  }
  const std::size_t in = w.shape()[0], out_dim = w.shape()[1];
  if (b.rank() != 1 || b.shape()[0] != out_dim) {
    throw ShapeError("linear: bias", shape_to_string(b.shape()),
                     "[" + std::to_string(out_dim) + "]");
  }
  const bool vector_input = (x.rank() == 1);
  std::size_t rows;
  if (vector_input) {
    if (x.shape()[0] != in) {
      throw ShapeError("linear: input", shape_to_string(x.shape()),
                       "[" + std::to_string(in) + "]");
    }
    rows = 1;
  } else {
    if (x.rank() != 2 || x.shape()[1] != in) {
      throw ShapeError("linear: input", shape_to_string(x.shape()),
                       "[rows," + std::to_string(in) + "]");
    }
    rows = x.shape()[0];
  }

  using Map = Eigen::Map<const RowMat<T>>;
  using MutMap = Eigen::Map<RowMat<T>>;
  Map xm(x.values().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(in));
  Map wm(w.values().data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out_dim));

  std::vector<T> out(rows * out_dim);
  MutMap ym(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out_dim));
  ym.noalias() = xm * wm;
  for (std::size_t r = 0; r < rows; ++r) {
    T* dst = out.data() + r * out_dim;
    for (std::size_t c = 0; c < out_dim; ++c) dst[c] += b.values()[c];
  }

  Shape out_shape = vector_input ? Shape{out_dim} : Shape{rows, out_dim};
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op<T>(std::move(out_shape), std::move(out), {x, w, b},
                    [xn, wn, bn, rows, in, out_dim](Node<T>& n) {
                      Map gy(n.grad.data(), static_cast<Eigen::Index>(rows),
                             static_cast<Eigen::Index>(out_dim));
                      if (xn->needs_grad) {
                        Map wm(wn->values.data(), static_cast<Eigen::Index>(in),
                               static_cast<Eigen::Index>(out_dim));
                        MutMap gx(xn->grad.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(in));
                        gx.noalias() += gy * wm.transpose();
                      }
                      if (wn->needs_grad) {
                        Map xm(xn->values.data(), static_cast<Eigen::Index>(rows),
                               static_cast<Eigen::Index>(in));
                        MutMap gw(wn->grad.data(), static_cast<Eigen::Index>(in),
                                  static_cast<Eigen::Index>(out_dim));
                        gw.noalias() += xm.transpose() * gy;
                      }
                      if (bn->needs_grad) {
                        for (std::size_t r = 0; r < rows; ++r) {
                          const T* src = n.grad.data() + r * out_dim;
                          for (std::size_t c = 0; c < out_dim; ++c) bn->grad[c] += src[c];
                        }
                      }
                    });
}

// Applies a flattened 4x4 transform (row-major, entries t[0..15]) to an
// [N, 3] point block: y[n,j] = sum_k t[4j+k] p[n,k] + t[4j+3], j < 3. Only
// the top three matrix rows influence the output, so gradients never reach
// t[12..15].
template <typename T>
Tensor<T> transform_points(const Tensor<T>& t16, const Tensor<T>& points) {
  if (t16.rank() != 1 || t16.shape()[0] != 16) {
    throw ShapeError("transform_points: transform", shape_to_string(t16.shape()), "[16]");
  }
  if (points.rank() != 2 || points.shape()[1] != 3) {
    throw ShapeError("transform_points: points", shape_to_string(points.shape()), "[n,3]");
  }
  const std::size_t n_pts = points.shape()[0];
  const auto& t = t16.values();
  const auto& p = points.values();
  std::vector<T> out(n_pts * 3);
  for (std::size_t n = 0; n < n_pts; ++n) {
    const T* pp = p.data() + n * 3;
    T* yy = out.data() + n * 3;
    for (std::size_t j = 0; j < 3; ++j) {
      yy[j] = t[4 * j] * pp[0] + t[4 * j + 1] * pp[1] + t[4 * j + 2] * pp[2] + t[4 * j + 3];
    }
  }
  auto tn = t16.node(), pn = points.node();
  return make_op<T>(Shape{n_pts, 3}, std::move(out), {t16, points},
                    [tn, pn, n_pts](Node<T>& n) {
                      if (tn->needs_grad) {
                        for (std::size_t i = 0; i < n_pts; ++i) {
                          const T* pp = pn->values.data() + i * 3;
                          const T* gy = n.grad.data() + i * 3;
                          for (std::size_t j = 0; j < 3; ++j) {
                            tn->grad[4 * j] += gy[j] * pp[0];
                            tn->grad[4 * j + 1] += gy[j] * pp[1];
                            tn->grad[4 * j + 2] += gy[j] * pp[2];
                            tn->grad[4 * j + 3] += gy[j];
                          }
                        }
                      }
                      if (pn->needs_grad) {
                        const T* t = tn->values.data();
                        for (std::size_t i = 0; i < n_pts; ++i) {
                          const T* gy = n.grad.data() + i * 3;
                          T* gp = pn->grad.data() + i * 3;
                          for (std::size_t j = 0; j < 3; ++j) {
                            gp[0] += gy[j] * t[4 * j];
                            gp[1] += gy[j] * t[4 * j + 1];
                            gp[2] += gy[j] * t[4 * j + 2];
                          }
                        }
                      }
                    });
}

}  // namespace talign::ad
