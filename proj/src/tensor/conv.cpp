// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "graph.hpp"

namespace smt {

using detail::grad_of;
using detail::make_output;

std::int64_t conv_output_size(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

// Geometry of a strided cubic-kernel correlation from `in` to `out`.
struct ConvGeom {
  std::int64_t channels = 0;
  std::array<std::int64_t, 3> in{}, out{};
  std::int64_t k = 1, stride = 1, pad = 0;

  std::int64_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_volume() const { return out[0] * out[1] * out[2]; }
  std::int64_t col_rows() const { return channels * k * k * k; }
  bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Output positions o along one axis whose input o*s - p + k lies in [0, in).
struct ValidRange {
  std::int64_t lo = 0, hi = 0;
};

inline ValidRange valid_range(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t s, std::int64_t p) {
  // smallest o with o*s >= p - k, largest o with o*s <= in - 1 + p - k
  const auto lo_num = p - k;
  std::int64_t lo = lo_num <= 0 ? 0 : (lo_num + s - 1) / s;
  const auto hi_num = in - 1 + p - k;
  std::int64_t hi = hi_num < 0 ? 0 : hi_num / s + 1;
  return {std::min(lo, out), std::max(std::min(hi, out), std::min(lo, out))};
}

// col[(c, kz, ky, kx), (oz, oy, ox)] = x[c, oz*s - p + kz, ...] (0 outside).
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const auto ov = g.out_volume();
  for (std::int64_t c = 0; c < g.channels; ++c)
    for (std::int64_t kz = 0; kz < g.k; ++kz)
      for (std::int64_t ky = 0; ky < g.k; ++ky)
        for (std::int64_t kx = 0; kx < g.k; ++kx) {
          T* dst = col + (((c * g.k + kz) * g.k + ky) * g.k + kx) * ov;
          const auto rx = valid_range(g.in[2], g.out[2], kx, g.stride, g.pad);
          for (std::int64_t oz = 0; oz < g.out[0]; ++oz) {
            const auto iz = oz * g.stride - g.pad + kz;
            for (std::int64_t oy = 0; oy < g.out[1]; ++oy) {
              const auto iy = oy * g.stride - g.pad + ky;
              T* row = dst + (oz * g.out[1] + oy) * g.out[2];
              if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
                std::fill(row, row + g.out[2], T(0));
                continue;
              }
              const T* src = x + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2] - g.pad + kx;
              std::fill(row, row + rx.lo, T(0));
              if (g.stride == 1) {
                std::copy(src + rx.lo, src + rx.hi, row + rx.lo);
              } else {
                for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) row[ox] = src[ox * g.stride];
              }
              std::fill(row + rx.hi, row + g.out[2], T(0));
            }
          }
        }
}

// Adjoint of im2col: accumulates columns back into x.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const auto ov = g.out_volume();
  for (std::int64_t c = 0; c < g.channels; ++c)
    for (std::int64_t kz = 0; kz < g.k; ++kz)
      for (std::int64_t ky = 0; ky < g.k; ++ky)
        for (std::int64_t kx = 0; kx < g.k; ++kx) {
          const T* src = col + (((c * g.k + kz) * g.k + ky) * g.k + kx) * ov;
          const auto rx = valid_range(g.in[2], g.out[2], kx, g.stride, g.pad);
          for (std::int64_t oz = 0; oz < g.out[0]; ++oz) {
            const auto iz = oz * g.stride - g.pad + kz;
            if (iz < 0 || iz >= g.in[0]) continue;
            for (std::int64_t oy = 0; oy < g.out[1]; ++oy) {
              const auto iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in[1]) continue;
              const T* row = src + (oz * g.out[1] + oy) * g.out[2];
              T* dst = x + ((c * g.in[0] + iz) * g.in[1] + iy) * g.in[2] - g.pad + kx;
              for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox * g.stride] += row[ox];
            }
          }
        }
}

// Returns a pointer to the column matrix of x, materializing it in `buffer`
// unless the convolution is pointwise (then x already is the column matrix).
// Column matrices reach tens of MB; reusing one buffer per thread avoids
// paying page faults on every call.
template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

template <typename T>
const T* columns(const T* x, const ConvGeom& g, std::vector<T>& buffer) {
  if (g.is_pointwise()) return x;
  buffer.resize(static_cast<std::size_t>(g.col_rows() * g.out_volume()));
  im2col(x, g, buffer.data());
  return buffer.data();
}

void check_volume(const Shape& s, const char* what) {
  if (s.size() != 4) throw DimensionError(std::string(what) + " expects [C, D, H, W], got " + shape_str(s));
}

void check_kernel(const Shape& w, const char* what) {
  if (w.size() != 5 || w[2] != w[3] || w[3] != w[4]) {
    throw DimensionError(std::string(what) + " expects a cubic kernel [*, *, k, k, k], got " + shape_str(w));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv3dOptions opt) {
  check_volume(x.shape(), "conv3d");
  check_kernel(w.shape(), "conv3d");
  if (opt.stride < 1 || opt.padding < 0) throw DimensionError("conv3d: stride must be >= 1, padding >= 0");
  const auto cin = x.dim(0), cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) {
    throw DimensionError("conv3d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()));
  }
  if (b.defined() && b.numel() != cout) throw DimensionError("conv3d bias must have " + std::to_string(cout) + " entries");
  ConvGeom g;
  g.channels = cin;
  g.k = k;
  g.stride = opt.stride;
  g.pad = opt.padding;
  for (int a = 0; a < 3; ++a) {
    g.in[a] = x.shape()[static_cast<std::size_t>(a + 1)];
    if (g.in[a] + 2 * g.pad < k) {
      throw DimensionError("conv3d kernel " + std::to_string(k) + " larger than padded input " +
                           shape_str(x.shape()));
    }
    g.out[a] = conv_output_size(g.in[a], k, g.stride, g.pad);
  }
  const auto ov = g.out_volume();
  auto& buffer = scratch<T>();
  const T* col = columns(x.data().data(), g, buffer);
  std::vector<T> out(static_cast<std::size_t>(cout * ov));
  MapR<T> y(out.data(), cout, ov);
  y.noalias() = CMapR<T>(w.data().data(), cout, g.col_rows()) * CMapR<T>(col, g.col_rows(), ov);
  if (b.defined()) {
    for (std::int64_t c = 0; c < cout; ++c) y.row(c).array() += b.data()[static_cast<std::size_t>(c)];
  }
  Shape out_shape{cout, g.out[0], g.out[1], g.out[2]};
  return make_output<T>(out_shape, std::move(out), {x, w, b}, "conv3d", [&] {
    return [ix = x.impl(), iw = w.impl(), ib = b.defined() ? b.impl() : nullptr, g, cout](const TensorImpl<T>& o) {
      const auto ov = g.out_volume();
      CMapR<T> gy(o.grad.data(), cout, ov);
      auto* gw = grad_of(iw);
      auto* gb = ib ? grad_of(ib) : nullptr;
      auto* gx = grad_of(ix);
      if (gb) {
        for (std::int64_t c = 0; c < cout; ++c) (*gb)[c] += gy.row(c).sum();
      }
      if (gw) {
        auto& buffer = scratch<T>();
        const T* col = columns(ix->data.data(), g, buffer);
        MapR<T>(gw->data(), cout, g.col_rows()).noalias() += gy * CMapR<T>(col, g.col_rows(), ov).transpose();
      }
      if (gx) {
        const auto wmat = CMapR<T>(iw->data.data(), cout, g.col_rows());
        if (g.is_pointwise()) {
          MapR<T>(gx->data(), g.col_rows(), ov).noalias() += wmat.transpose() * gy;
        } else if (g.stride == 1 && 2 * g.pad == g.k - 1 && cout <= g.channels) {
          // Same-size conv: the input gradient is a correlation of gy with the
          // spatially flipped, channel-transposed kernel.
          const auto k3 = g.k * g.k * g.k;
          MatR<T> flipped(g.channels, cout * k3);
          for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t ci = 0; ci < g.channels; ++ci)
              for (std::int64_t t = 0; t < k3; ++t) flipped(ci, co * k3 + t) = wmat(co, ci * k3 + (k3 - 1 - t));
          ConvGeom back = g;
          back.channels = cout;
          auto& buffer = scratch<T>();
          const T* gcol = columns(o.grad.data(), back, buffer);
          MapR<T>(gx->data(), g.channels, ov).noalias() += flipped * CMapR<T>(gcol, back.col_rows(), ov);
        } else {
          MatR<T> gcol = wmat.transpose() * gy;
          col2im(gcol.data(), g, gx->data());
        }
      }
    };
  });
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv3dOptions opt) {
  check_volume(x.shape(), "conv_transpose3d");
  check_kernel(w.shape(), "conv_transpose3d");
  if (opt.stride < 1 || opt.padding < 0) {
    throw DimensionError("conv_transpose3d: stride must be >= 1, padding >= 0");
  }
  const auto cin = x.dim(0), cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != cin) {
    throw DimensionError("conv_transpose3d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()));
  }
  if (b.defined() && b.numel() != cout) {
    throw DimensionError("conv_transpose3d bias must have " + std::to_string(cout) + " entries");
  }
  // Geometry of the forward correlation this op is the adjoint of: it maps
  // the (larger) output volume onto x's spatial grid.
  ConvGeom g;
  g.channels = cout;
  g.k = k;
  g.stride = opt.stride;
  g.pad = opt.padding;
  for (int a = 0; a < 3; ++a) {
    g.out[a] = x.shape()[static_cast<std::size_t>(a + 1)];
    g.in[a] = (g.out[a] - 1) * g.stride - 2 * g.pad + k;
    if (g.in[a] <= 0) throw DimensionError("conv_transpose3d produces an empty output for " + shape_str(x.shape()));
  }
  const auto xv = g.out_volume();
  MatR<T> cols = CMapR<T>(w.data().data(), cin, g.col_rows()).transpose() * CMapR<T>(x.data().data(), cin, xv);
  std::vector<T> out(static_cast<std::size_t>(cout * g.in_volume()), T(0));
  col2im(cols.data(), g, out.data());
  if (b.defined()) {
    const auto iv = g.in_volume();
    for (std::int64_t c = 0; c < cout; ++c)
      for (std::int64_t v = 0; v < iv; ++v) out[c * iv + v] += b.data()[static_cast<std::size_t>(c)];
  }
  Shape out_shape{cout, g.in[0], g.in[1], g.in[2]};
  return make_output<T>(out_shape, std::move(out), {x, w, b}, "conv_transpose3d", [&] {
    return [ix = x.impl(), iw = w.impl(), ib = b.defined() ? b.impl() : nullptr, g, cin, cout](const TensorImpl<T>& o) {
      const auto xv = g.out_volume();
      const auto iv = g.in_volume();
      auto* gx = grad_of(ix);
      auto* gw = grad_of(iw);
      auto* gb = ib ? grad_of(ib) : nullptr;
      if (gb) {
        for (std::int64_t c = 0; c < cout; ++c) {
          T acc = 0;
          for (std::int64_t v = 0; v < iv; ++v) acc += o.grad[c * iv + v];
          (*gb)[c] += acc;
        }
      }
      if (!gx && !gw) return;
      auto& buffer = scratch<T>();
      const T* gcol = columns(o.grad.data(), g, buffer);
      CMapR<T> gc(gcol, g.col_rows(), xv);
      if (gx) MapR<T>(gx->data(), cin, xv).noalias() += CMapR<T>(iw->data.data(), cin, g.col_rows()) * gc;
      if (gw) MapR<T>(gw->data(), cin, g.col_rows()).noalias() += CMapR<T>(ix->data.data(), cin, xv) * gc.transpose();
    };
  });
}

namespace {

struct AxisTaps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps axis_taps(std::int64_t in, std::int64_t out, double step) {
  AxisTaps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  for (std::int64_t i = 0; i < out; ++i) {
    double src = static_cast<double>(i) * step;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    auto lo = static_cast<std::int64_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const auto hi = std::min(lo + 1, in - 1);
    t.lo[static_cast<std::size_t>(i)] = lo;
    t.hi[static_cast<std::size_t>(i)] = hi;
    t.frac[static_cast<std::size_t>(i)] = src - static_cast<double>(lo);
  }
  return t;
}

template <typename T, typename F>
void for_each_tap(const std::array<AxisTaps, 3>& taps, const std::array<std::int64_t, 3>& in,
                  const std::array<std::int64_t, 3>& out, F&& f) {
  for (std::int64_t z = 0; z < out[0]; ++z)
    for (std::int64_t y = 0; y < out[1]; ++y)
      for (std::int64_t x = 0; x < out[2]; ++x) {
        const auto o = (z * out[1] + y) * out[2] + x;
        const std::int64_t zs[2] = {taps[0].lo[z], taps[0].hi[z]};
        const std::int64_t ys[2] = {taps[1].lo[y], taps[1].hi[y]};
        const std::int64_t xs[2] = {taps[2].lo[x], taps[2].hi[x]};
        const double wz[2] = {1 - taps[0].frac[z], taps[0].frac[z]};
        const double wy[2] = {1 - taps[1].frac[y], taps[1].frac[y]};
        const double wx[2] = {1 - taps[2].frac[x], taps[2].frac[x]};
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
              const double wgt = wz[a] * wy[b] * wx[c];
              if (wgt == 0.0) continue;
              f(o, (zs[a] * in[1] + ys[b]) * in[2] + xs[c], static_cast<T>(wgt));
            }
      }
}

}  // namespace

template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& x, std::array<std::int64_t, 3> out_dims, std::array<double, 3> src_step) {
  check_volume(x.shape(), "trilinear_resize");
  std::array<std::int64_t, 3> in{x.dim(1), x.dim(2), x.dim(3)};
  for (int a = 0; a < 3; ++a) {
    if (in[a] < 1 || out_dims[a] < 1) throw DimensionError("trilinear_resize needs non-empty extents");
  }
  std::array<AxisTaps, 3> taps{axis_taps(in[0], out_dims[0], src_step[0]), axis_taps(in[1], out_dims[1], src_step[1]),
                               axis_taps(in[2], out_dims[2], src_step[2])};
  const auto channels = x.dim(0);
  const auto iv = in[0] * in[1] * in[2];
  const auto ov = out_dims[0] * out_dims[1] * out_dims[2];
  std::vector<T> out(static_cast<std::size_t>(channels * ov), T(0));
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* src = x.data().data() + c * iv;
    T* dst = out.data() + c * ov;
    for_each_tap<T>(taps, in, out_dims, [&](std::int64_t o, std::int64_t i, T w) { dst[o] += w * src[i]; });
  }
  Shape out_shape{channels, out_dims[0], out_dims[1], out_dims[2]};
  return make_output<T>(out_shape, std::move(out), {x}, "trilinear_resize", [&] {
    return [ix = x.impl(), taps, in, out_dims, channels, iv, ov](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::int64_t c = 0; c < channels; ++c) {
        const T* go = o.grad.data() + c * ov;
        T* gi = g.data() + c * iv;
        for_each_tap<T>(taps, in, out_dims, [&](std::int64_t oi, std::int64_t ii, T w) { gi[ii] += w * go[oi]; });
      }
    };
  });
}

#define SMT_INST(T)                                                                                 \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv3dOptions);   \
  template Tensor<T> conv_transpose3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                      Conv3dOptions);                                               \
  template Tensor<T> trilinear_resize(const Tensor<T>&, std::array<std::int64_t, 3>, std::array<double, 3>);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
