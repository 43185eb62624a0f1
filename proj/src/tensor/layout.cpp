// SPDX-License-Identifier: Apache-2.0
#include <numeric>

#include "graph.hpp"

namespace smt {

using detail::grad_of;
using detail::make_output;

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_output<T>(std::move(shape), std::move(out), {x}, "reshape", [&] {
    return [ix = x.impl()](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    };
  });
}

namespace {

// For each output flat index, the source flat index under `perm`.
Index permutation_map(const Shape& in, const std::vector<int>& perm) {
  const std::size_t rank = in.size();
  Index in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * in[d];
  Shape out(rank);
  Index src_stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out[d] = in[static_cast<std::size_t>(perm[d])];
    src_stride[d] = in_strides[static_cast<std::size_t>(perm[d])];
  }
  const auto total = shape_numel(in);
  Index map(static_cast<std::size_t>(total));
  if (total == 0) return map;
  Index counter(rank, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    map[static_cast<std::size_t>(i)] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      src += src_stride[d];
      if (counter[d] < out[d]) break;
      src -= src_stride[d] * out[d];
      counter[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  const std::size_t rank = x.ndim();
  if (perm.size() != rank) throw DimensionError("permutation rank mismatch for " + shape_str(x.shape()));
  std::vector<int> check(perm);
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < rank; ++i) {
    if (check[i] != static_cast<int>(i)) throw DimensionError("invalid permutation for " + shape_str(x.shape()));
  }
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) out_shape[d] = x.shape()[static_cast<std::size_t>(perm[d])];
  auto map = permutation_map(x.shape(), perm);
  std::vector<T> out(map.size());
  const T* in = x.data().data();
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = in[map[i]];
  return make_output<T>(out_shape, std::move(out), {x}, "permute", [&] {
    return [ix = x.impl(), map = std::move(map)](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += o.grad[i];
    };
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int a, int b) {
  const auto rank = x.ndim();
  const int na = detail::normalize_axis(a, rank, x.shape());
  const int nb = detail::normalize_axis(b, rank, x.shape());
  std::vector<int> perm(rank);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(na)], perm[static_cast<std::size_t>(nb)]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = xs.front().shape();
  const int a = detail::normalize_axis(axis, ref.size(), ref);
  Shape out_shape = ref;
  out_shape[static_cast<std::size_t>(a)] = 0;
  for (const auto& t : xs) {
    if (t.ndim() != ref.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (static_cast<int>(d) != a && t.shape()[d] != ref[d]) {
        throw DimensionError("concat shape mismatch: " + shape_str(ref) + " vs " + shape_str(t.shape()));
      }
    }
    out_shape[static_cast<std::size_t>(a)] += t.shape()[static_cast<std::size_t>(a)];
  }
  const auto sp = detail::split_axis(out_shape, a);
  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const auto n = t.shape()[static_cast<std::size_t>(a)];
    const auto block = n * sp.inner;
    const T* src = t.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, out.data() + (o * sp.n + off) * sp.inner);
    }
    off += n;
  }
  return make_output<T>(out_shape, std::move(out), xs, "concat", [&] {
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& t : xs) impls.push_back(t.impl());
    return [impls, offsets, sp, a](const TensorImpl<T>& o) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        auto* g = grad_of(impls[k]);
        if (!g) continue;
        const auto n = impls[k]->shape[static_cast<std::size_t>(a)];
        const auto block = n * sp.inner;
        for (std::int64_t oo = 0; oo < sp.outer; ++oo) {
          const T* src = o.grad.data() + (oo * sp.n + offsets[k]) * sp.inner;
          T* dst = g->data() + oo * block;
          for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    };
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length) {
  const int a = detail::normalize_axis(axis, x.ndim(), x.shape());
  const auto sp = detail::split_axis(x.shape(), a);
  if (start < 0 || length < 0 || start + length > sp.n) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = length;
  std::vector<T> out(static_cast<std::size_t>(sp.outer * length * sp.inner));
  const T* in = x.data().data();
  const auto block = length * sp.inner;
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    const T* src = in + (o * sp.n + start) * sp.inner;
    std::copy(src, src + block, out.data() + o * block);
  }
  return make_output<T>(out_shape, std::move(out), {x}, "slice", [&] {
    return [ix = x.impl(), sp, start, block](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::int64_t oo = 0; oo < sp.outer; ++oo) {
        T* dst = g.data() + (oo * sp.n + start) * sp.inner;
        const T* src = o.grad.data() + oo * block;
        for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
      }
    };
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, const Index& index, Shape out_shape) {
  if (shape_numel(out_shape) != static_cast<std::int64_t>(index.size())) {
    throw DimensionError("gather index length does not match output shape " + shape_str(out_shape));
  }
  const auto n = x.numel();
  std::vector<T> out(index.size());
  const T* in = x.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto s = index[i];
    if (s >= n) throw DimensionError("gather index out of range for " + shape_str(x.shape()));
    out[i] = s < 0 ? T(0) : in[s];
  }
  return make_output<T>(std::move(out_shape), std::move(out), {x}, "gather", [&] {
    return [ix = x.impl(), index](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t i = 0; i < index.size(); ++i)
        if (index[i] >= 0) g[index[i]] += o.grad[i];
    };
  });
}

template <typename T>
Tensor<T> scatter(const Tensor<T>& x, const Index& index, Shape out_shape) {
  if (x.numel() != static_cast<std::int64_t>(index.size())) {
    throw DimensionError("scatter index length does not match input " + shape_str(x.shape()));
  }
  const auto n = shape_numel(out_shape);
  std::vector<T> out(static_cast<std::size_t>(n), T(0));
  const T* in = x.data().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto d = index[i];
    if (d >= n) throw DimensionError("scatter index out of range for " + shape_str(out_shape));
    if (d >= 0) out[d] += in[i];
  }
  return make_output<T>(std::move(out_shape), std::move(out), {x}, "scatter", [&] {
    return [ix = x.impl(), index](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t i = 0; i < index.size(); ++i)
        if (index[i] >= 0) g[i] += o.grad[index[i]];
    };
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const Index& index) {
  if (x.ndim() < 1) throw DimensionError("gather_rows needs rank >= 1");
  const auto rows = x.shape()[0];
  const auto width = rows == 0 ? 0 : x.numel() / rows;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(index.size());
  std::vector<T> out(index.size() * static_cast<std::size_t>(width), T(0));
  const T* in = x.data().data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto s = index[r];
    if (s >= rows) throw DimensionError("gather_rows index out of range for " + shape_str(x.shape()));
    if (s >= 0) std::copy(in + s * width, in + (s + 1) * width, out.data() + r * width);
  }
  return make_output<T>(out_shape, std::move(out), {x}, "gather_rows", [&] {
    return [ix = x.impl(), index, width](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0) continue;
        T* dst = g.data() + index[r] * width;
        const T* src = o.grad.data() + r * width;
        for (std::int64_t i = 0; i < width; ++i) dst[i] += src[i];
      }
    };
  });
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& x, const Index& index, std::int64_t rows) {
  if (x.ndim() < 1 || x.shape()[0] != static_cast<std::int64_t>(index.size())) {
    throw DimensionError("scatter_rows index length does not match " + shape_str(x.shape()));
  }
  const auto width = index.empty() ? 0 : x.numel() / x.shape()[0];
  Shape out_shape = x.shape();
  out_shape[0] = rows;
  std::vector<T> out(static_cast<std::size_t>(rows * width), T(0));
  const T* in = x.data().data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto d = index[r];
    if (d >= rows) throw DimensionError("scatter_rows index out of range");
    if (d < 0) continue;
    T* dst = out.data() + d * width;
    const T* src = in + r * width;
    for (std::int64_t i = 0; i < width; ++i) dst[i] += src[i];
  }
  return make_output<T>(out_shape, std::move(out), {x}, "scatter_rows", [&] {
    return [ix = x.impl(), index, width](const TensorImpl<T>& o) {
      auto& g = ix->ensure_grad();
      for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0) continue;
        const T* src = o.grad.data() + index[r] * width;
        T* dst = g.data() + r * width;
        for (std::int64_t i = 0; i < width; ++i) dst[i] += src[i];
      }
    };
  });
}

#define SMT_INST(T)                                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                               \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);             \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                          \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                     \
  template Tensor<T> slice(const Tensor<T>&, int, std::int64_t, std::int64_t);       \
  template Tensor<T> gather(const Tensor<T>&, const Index&, Shape);                  \
  template Tensor<T> scatter(const Tensor<T>&, const Index&, Shape);                 \
  template Tensor<T> gather_rows(const Tensor<T>&, const Index&);                    \
  template Tensor<T> scatter_rows(const Tensor<T>&, const Index&, std::int64_t);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
