// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "graph.hpp"

namespace smt {

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const auto da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const auto db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

namespace {

using detail::grad_of;
using detail::make_output;

// Element strides of `s` aligned to `out`, zero along broadcast axes.
Index aligned_strides(const Shape& s, const Shape& out) {
  Index strides(out.size(), 0);
  std::int64_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t src = s.size() - 1 - k;
    const std::size_t dst = out.size() - 1 - k;
    strides[dst] = s[src] == 1 ? 0 : stride;
    stride *= s[src];
  }
  return strides;
}

template <typename F>
void for_each_broadcast(const Shape& out, const Index& sa, const Index& sb, F&& f) {
  const std::int64_t total = shape_numel(out);
  if (total == 0) return;
  const std::size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  Index counter(rank, 0);
  std::int64_t ia = 0, ib = 0;
  const std::int64_t last = out[rank - 1];
  const std::int64_t la = sa[rank - 1], lb = sb[rank - 1];
  for (std::int64_t i = 0; i < total; i += last) {
    for (std::int64_t j = 0; j < last; ++j) f(i + j, ia + j * la, ib + j * lb);
    // advance all but the innermost axis
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      ia += sa[d];
      ib += sb[d];
      if (counter[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

enum class BinOp { add, sub, mul, div };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op, const char* name) {
  const Shape out_shape = a.shape() == b.shape() ? a.shape() : broadcast_shapes(a.shape(), b.shape());
  const auto sa = aligned_strides(a.shape(), out_shape);
  const auto sb = aligned_strides(b.shape(), out_shape);
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  const bool same = a.shape() == b.shape();
  auto apply = [&](auto&& fn) {
    if (same) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i], pb[i]);
    } else {
      for_each_broadcast(out_shape, sa, sb,
                         [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { out[i] = fn(pa[ia], pb[ib]); });
    }
  };
  switch (op) {
    case BinOp::add: apply([](T x, T y) { return x + y; }); break;
    case BinOp::sub: apply([](T x, T y) { return x - y; }); break;
    case BinOp::mul: apply([](T x, T y) { return x * y; }); break;
    case BinOp::div: apply([](T x, T y) { return x / y; }); break;
  }
  return make_output<T>(out_shape, std::move(out), {a, b}, name, [&] {
    return [ia_ = a.impl(), ib_ = b.impl(), out_shape, sa, sb, op](const TensorImpl<T>& o) {
      auto* ga = grad_of(ia_);
      auto* gb = grad_of(ib_);
      const T* g = o.grad.data();
      const T* xa = ia_->data.data();
      const T* xb = ib_->data.data();
      for_each_broadcast(out_shape, sa, sb, [&](std::int64_t i, std::int64_t a_i, std::int64_t b_i) {
        const T gi = g[i];
        switch (op) {
          case BinOp::add:
            if (ga) (*ga)[a_i] += gi;
            if (gb) (*gb)[b_i] += gi;
            break;
          case BinOp::sub:
            if (ga) (*ga)[a_i] += gi;
            if (gb) (*gb)[b_i] -= gi;
            break;
          case BinOp::mul:
            if (ga) (*ga)[a_i] += gi * xb[b_i];
            if (gb) (*gb)[b_i] += gi * xa[a_i];
            break;
          case BinOp::div:
            if (ga) (*ga)[a_i] += gi / xb[b_i];
            if (gb) (*gb)[b_i] -= gi * xa[a_i] / (xb[b_i] * xb[b_i]);
            break;
        }
      });
    };
  });
}

// y = f(x), dy/dx computed from (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, D dfdx) {
  const auto& in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_output<T>(x.shape(), std::move(out), {x}, name, [&] {
    return [ix = x.impl(), dfdx](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * dfdx(ix->data[i], o.data[i]);
    };
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinOp::add, "add"); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinOp::sub, "sub"); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinOp::mul, "mul"); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinOp::div, "div"); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary(x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary(x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary(x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, "gelu",
      [](T v) { return static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2))); },
      [](T v, T) {
        const double xv = v;
        const double cdf = 0.5 * (1.0 + std::erf(xv * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv * xv);
        return static_cast<T>(cdf + xv * pdf);
      });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary(
      x, "leaky_relu", [slope](T v) { return v > T(0) ? v : v * slope; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_output<T>(Shape{}, {acc}, {x}, "sum", [&] {
    return [ix = x.impl()](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      const T go = o.grad[0];
      for (auto& v : g) v += go;
    };
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim) {
  const int a = detail::normalize_axis(axis, x.ndim(), x.shape());
  const auto sp = detail::split_axis(x.shape(), a);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(a)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + a);
  }
  std::vector<T> out(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
  const T* in = x.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t k = 0; k < sp.n; ++k) {
      const T* row = in + (o * sp.n + k) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  return make_output<T>(out_shape, std::move(out), {x}, "sum_axis", [&] {
    return [ix = x.impl(), sp](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::int64_t oo = 0; oo < sp.outer; ++oo)
        for (std::int64_t k = 0; k < sp.n; ++k)
          for (std::int64_t i = 0; i < sp.inner; ++i)
            g[(oo * sp.n + k) * sp.inner + i] += o.grad[oo * sp.inner + i];
    };
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim) {
  const auto n = x.dim(axis);
  if (n == 0) throw DimensionError("mean over zero-size axis");
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(n));
}

#define SMT_INST(T)                                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> scale(const Tensor<T>&, T);                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                     \
  template Tensor<T> neg(const Tensor<T>&);                               \
  template Tensor<T> exp(const Tensor<T>&);                               \
  template Tensor<T> log(const Tensor<T>&);                               \
  template Tensor<T> sqrt(const Tensor<T>&);                              \
  template Tensor<T> gelu(const Tensor<T>&);                              \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                     \
  template Tensor<T> sum(const Tensor<T>&);                               \
  template Tensor<T> sum(const Tensor<T>&, int, bool);                    \
  template Tensor<T> mean(const Tensor<T>&);                              \
  template Tensor<T> mean(const Tensor<T>&, int, bool);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
