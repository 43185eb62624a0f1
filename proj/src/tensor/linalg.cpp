// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Core>
#include <cmath>

#include "smt/faults.hpp"
#include "graph.hpp"

namespace smt {

using detail::grad_of;
using detail::make_output;

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto i = a.dim(-2), k = a.dim(-1);
  const auto k2 = b.dim(-2), j = b.dim(-1);
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool shared_b = batch_b.empty();
  if (k != k2 || (!shared_b && batch_a != batch_b)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto batch = shape_numel(batch_a);
  Shape out_shape = batch_a;
  out_shape.push_back(i);
  out_shape.push_back(j);
  std::vector<T> out(static_cast<std::size_t>(batch * i * j));
  if (shared_b) {
    // Fold the batch into the row dimension: one GEMM.
    MapR<T>(out.data(), batch * i, j).noalias() = CMapR<T>(a.data().data(), batch * i, k) *
                                                  CMapR<T>(b.data().data(), k, j);
  } else {
    for (std::int64_t n = 0; n < batch; ++n) {
      MapR<T>(out.data() + n * i * j, i, j).noalias() =
          CMapR<T>(a.data().data() + n * i * k, i, k) * CMapR<T>(b.data().data() + n * k * j, k, j);
    }
  }
  return make_output<T>(out_shape, std::move(out), {a, b}, "matmul", [&] {
    return [ia = a.impl(), ib = b.impl(), batch, i, k, j, shared_b](const TensorImpl<T>& o) {
      auto* ga = grad_of(ia);
      auto* gb = grad_of(ib);
      if (shared_b) {
        CMapR<T> g(o.grad.data(), batch * i, j);
        if (ga) MapR<T>(ga->data(), batch * i, k).noalias() += g * CMapR<T>(ib->data.data(), k, j).transpose();
        if (gb) MapR<T>(gb->data(), k, j).noalias() += CMapR<T>(ia->data.data(), batch * i, k).transpose() * g;
        return;
      }
      for (std::int64_t n = 0; n < batch; ++n) {
        CMapR<T> g(o.grad.data() + n * i * j, i, j);
        if (ga) {
          MapR<T>(ga->data() + n * i * k, i, k).noalias() +=
              g * CMapR<T>(ib->data.data() + n * k * j, k, j).transpose();
        }
        if (gb) {
          MapR<T>(gb->data() + n * k * j, k, j).noalias() +=
              CMapR<T>(ia->data.data() + n * i * k, i, k).transpose() * g;
        }
      }
    };
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int a = detail::normalize_axis(axis, x.ndim(), x.shape());
  const auto sp = detail::split_axis(x.shape(), a);
  std::vector<T> y(x.data().size());
  const T* in = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.n * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t k = 0; k < sp.n; ++k) mx = std::max(mx, in[base + k * sp.inner]);
      T total = 0;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T e = std::exp(in[base + k * sp.inner] - mx);
        y[base + k * sp.inner] = e;
        total += e;
      }
      const T inv = active_fault() == Fault::unnormalized_softmax ? T(1) : T(1) / total;
      for (std::int64_t k = 0; k < sp.n; ++k) y[base + k * sp.inner] *= inv;
    }
  return make_output<T>(x.shape(), std::move(y), {x}, "softmax", [&] {
    return [ix = x.impl(), sp](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      const T* yy = o.data.data();
      const T* go = o.grad.data();
      for (std::int64_t oo = 0; oo < sp.outer; ++oo)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const auto base = oo * sp.n * sp.inner + i;
          T dot = 0;
          for (std::int64_t k = 0; k < sp.n; ++k) dot += go[base + k * sp.inner] * yy[base + k * sp.inner];
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const auto idx = base + k * sp.inner;
            g[idx] += yy[idx] * (go[idx] - dot);
          }
        }
    };
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  const int a = detail::normalize_axis(axis, x.ndim(), x.shape());
  const auto sp = detail::split_axis(x.shape(), a);
  std::vector<T> y(x.data().size());
  const T* in = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.n * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t k = 0; k < sp.n; ++k) mx = std::max(mx, in[base + k * sp.inner]);
      T total = 0;
      for (std::int64_t k = 0; k < sp.n; ++k) total += std::exp(in[base + k * sp.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::int64_t k = 0; k < sp.n; ++k) y[base + k * sp.inner] = in[base + k * sp.inner] - lse;
    }
  return make_output<T>(x.shape(), std::move(y), {x}, "log_softmax", [&] {
    return [ix = x.impl(), sp](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      const T* yy = o.data.data();
      const T* go = o.grad.data();
      for (std::int64_t oo = 0; oo < sp.outer; ++oo)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const auto base = oo * sp.n * sp.inner + i;
          T total = 0;
          for (std::int64_t k = 0; k < sp.n; ++k) total += go[base + k * sp.inner];
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const auto idx = base + k * sp.inner;
            g[idx] += go[idx] - std::exp(yy[idx]) * total;
          }
        }
    };
  });
}

namespace {

// Normalizes `rows` groups of `width` contiguous values (or strided channel
// groups for instance norm). Returns normalized values and per-group rstd.
template <typename T>
void normalize_groups(const T* in, T* xhat, T* rstd, std::int64_t groups, std::int64_t width, double eps) {
  for (std::int64_t r = 0; r < groups; ++r) {
    const T* row = in + r * width;
    double m = 0;
    for (std::int64_t c = 0; c < width; ++c) m += row[c];
    m /= static_cast<double>(width);
    double v = 0;
    for (std::int64_t c = 0; c < width; ++c) {
      const double d = row[c] - m;
      v += d * d;
    }
    v /= static_cast<double>(width);
    const double rs = 1.0 / std::sqrt(v + eps);
    rstd[r] = static_cast<T>(rs);
    for (std::int64_t c = 0; c < width; ++c) xhat[r * width + c] = static_cast<T>((row[c] - m) * rs);
  }
}

// d/dx of xhat given upstream d/dxhat (population-variance convention).
template <typename T>
void normalize_groups_backward(const T* gxhat, const T* xhat, const T* rstd, T* gx, std::int64_t groups,
                               std::int64_t width) {
  for (std::int64_t r = 0; r < groups; ++r) {
    const T* gh = gxhat + r * width;
    const T* xh = xhat + r * width;
    double mg = 0, mgx = 0;
    for (std::int64_t c = 0; c < width; ++c) {
      mg += gh[c];
      mgx += static_cast<double>(gh[c]) * xh[c];
    }
    mg /= static_cast<double>(width);
    mgx /= static_cast<double>(width);
    for (std::int64_t c = 0; c < width; ++c) {
      gx[r * width + c] += static_cast<T>(rstd[r] * (gh[c] - mg - xh[c] * mgx));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  if (x.ndim() == 0) throw DimensionError("layer_norm on a scalar");
  const auto width = x.dim(-1);
  if (width == 0) throw DimensionError("layer_norm over a zero-size axis: " + shape_str(x.shape()));
  const bool affine = gamma.defined();
  if (affine && (gamma.numel() != width || !beta.defined() || beta.numel() != width)) {
    throw DimensionError("layer_norm gamma/beta must have " + std::to_string(width) + " entries");
  }
  const auto groups = x.numel() / width;
  std::vector<T> xhat(x.data().size());
  std::vector<T> rstd(static_cast<std::size_t>(groups));
  normalize_groups(x.data().data(), xhat.data(), rstd.data(), groups, width, kLayerNormEps);
  std::vector<T> y(xhat);
  if (affine) {
    const T* gm = gamma.data().data();
    const T* bt = beta.data().data();
    for (std::int64_t r = 0; r < groups; ++r)
      for (std::int64_t c = 0; c < width; ++c) y[r * width + c] = y[r * width + c] * gm[c] + bt[c];
  }
  std::vector<Tensor<T>> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_output<T>(x.shape(), std::move(y), inputs, "layer_norm", [&] {
    return [ix = x.impl(), ig = affine ? gamma.impl() : nullptr, ib = affine ? beta.impl() : nullptr,
            xhat = std::move(xhat), rstd = std::move(rstd), groups, width](const TensorImpl<T>& o) {
      const T* go = o.grad.data();
      if (ig) {
        auto* gg = grad_of(ig);
        auto* gb = grad_of(ib);
        for (std::int64_t r = 0; r < groups; ++r)
          for (std::int64_t c = 0; c < width; ++c) {
            if (gg) (*gg)[c] += go[r * width + c] * xhat[r * width + c];
            if (gb) (*gb)[c] += go[r * width + c];
          }
      }
      if (!ix->requires_grad) return;
      std::vector<T> gxhat(go, go + groups * width);
      if (ig) {
        const T* gm = ig->data.data();
        for (std::int64_t r = 0; r < groups; ++r)
          for (std::int64_t c = 0; c < width; ++c) gxhat[r * width + c] *= gm[c];
      }
      normalize_groups_backward(gxhat.data(), xhat.data(), rstd.data(), ix->ensure_grad().data(), groups, width);
    };
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x) {
  return layer_norm(x, Tensor<T>{}, Tensor<T>{});
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  if (x.ndim() < 2) throw DimensionError("instance_norm expects [C, ...], got " + shape_str(x.shape()));
  const auto channels = x.dim(0);
  const auto width = channels == 0 ? 0 : x.numel() / channels;
  if (width == 0) throw DimensionError("instance_norm over empty spatial extent");
  std::vector<T> xhat(x.data().size());
  std::vector<T> rstd(static_cast<std::size_t>(channels));
  normalize_groups(x.data().data(), xhat.data(), rstd.data(), channels, width, static_cast<double>(eps));
  std::vector<T> y(xhat);
  return make_output<T>(x.shape(), std::move(y), {x}, "instance_norm", [&] {
    return [ix = x.impl(), xhat = std::move(xhat), rstd = std::move(rstd), channels, width](const TensorImpl<T>& o) {
      normalize_groups_backward(o.grad.data(), xhat.data(), rstd.data(), ix->ensure_grad().data(), channels, width);
    };
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, int axis, T eps) {
  const int a = detail::normalize_axis(axis, x.ndim(), x.shape());
  const auto sp = detail::split_axis(x.shape(), a);
  std::vector<T> y(x.data().size());
  std::vector<T> inv(static_cast<std::size_t>(sp.outer * sp.inner));
  const T* in = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.n * sp.inner + i;
      T ss = 0;
      for (std::int64_t k = 0; k < sp.n; ++k) ss += in[base + k * sp.inner] * in[base + k * sp.inner];
      const T r = T(1) / std::sqrt(ss + eps);
      inv[o * sp.inner + i] = r;
      for (std::int64_t k = 0; k < sp.n; ++k) y[base + k * sp.inner] = in[base + k * sp.inner] * r;
    }
  return make_output<T>(x.shape(), std::move(y), {x}, "l2_normalize", [&] {
    return [ix = x.impl(), inv = std::move(inv), sp](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::int64_t oo = 0; oo < sp.outer; ++oo)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const auto base = oo * sp.n * sp.inner + i;
          T dot = 0;
          for (std::int64_t k = 0; k < sp.n; ++k) dot += o.grad[base + k * sp.inner] * o.data[base + k * sp.inner];
          const T r = inv[oo * sp.inner + i];
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const auto idx = base + k * sp.inner;
            g[idx] += r * (o.grad[idx] - o.data[idx] * dot);
          }
        }
    };
  });
}

#define SMT_INST(T)                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> softmax(const Tensor<T>&, int);                               \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> layer_norm(const Tensor<T>&);                                 \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                           \
  template Tensor<T> l2_normalize(const Tensor<T>&, int, T);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
