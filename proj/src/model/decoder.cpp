// SPDX-License-Identifier: Apache-2.0
#include "smt/decoder.hpp"

#include <string>

#include "../tensor/graph.hpp"

namespace smt {

template <typename T>
ResBlockParams<T> ResBlockParams<T>::init(std::int64_t in, std::int64_t out, std::mt19937_64& rng) {
  ResBlockParams r;
  r.conv1 = ConvParams<T>::init(out, in, 3, false, rng);
  r.conv2 = ConvParams<T>::init(out, out, 3, false, rng);
  if (in != out) r.shortcut = ConvParams<T>::init(out, in, 1, false, rng);
  return r;
}

template <typename T>
Tensor<T> ResBlockParams<T>::operator()(const Tensor<T>& x) const {
  const Conv3dOptions same{1, 1};
  auto h = leaky_relu(instance_norm(conv3d(x, conv1.weight, conv1.bias, same)));
  h = instance_norm(conv3d(h, conv2.weight, conv2.bias, same));
  auto res = shortcut ? instance_norm(conv3d(x, shortcut->weight, shortcut->bias)) : x;
  return leaky_relu(add(h, res));
}

template <typename T>
void ResBlockParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  conv1.visit(join_name(prefix, "conv1"), v);
  conv2.visit(join_name(prefix, "conv2"), v);
  if (shortcut) shortcut->visit(join_name(prefix, "shortcut"), v);
}

template <typename T>
UpBlockParams<T> UpBlockParams<T>::init(std::int64_t in, std::int64_t out, std::mt19937_64& rng) {
  UpBlockParams u;
  // Transposed-conv weights are [in, out, k, k, k]; fan-in is taken over dim 1.
  u.up = ConvParams<T>::init(in, out, 2, false, rng);
  u.block = ResBlockParams<T>::init(2 * out, out, rng);
  return u;
}

template <typename T>
Tensor<T> UpBlockParams<T>::operator()(const Tensor<T>& x, const Tensor<T>& skip) const {
  auto up_x = conv_transpose3d(x, up.weight, up.bias, {2, 0});
  if (up_x.shape() != skip.shape()) {
    throw ConfigError("decoder skip " + shape_str(skip.shape()) + " does not match upsampled " +
                      shape_str(up_x.shape()));
  }
  return block(concat(std::vector<Tensor<T>>{up_x, skip}, 0));
}

template <typename T>
void UpBlockParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  up.visit(join_name(prefix, "up"), v);
  block.visit(join_name(prefix, "block"), v);
}

template <typename T>
DecoderParams<T> DecoderParams<T>::init(const SwinSMTConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto fs = cfg.embed_dim;
  DecoderParams d;
  d.enc_input = ResBlockParams<T>::init(cfg.in_channels, fs, rng);
  d.enc_stem = ResBlockParams<T>::init(fs, fs, rng);
  d.enc_stage1 = ResBlockParams<T>::init(2 * fs, 2 * fs, rng);
  d.enc_stage2 = ResBlockParams<T>::init(4 * fs, 4 * fs, rng);
  d.enc_bottleneck = ResBlockParams<T>::init(16 * fs, 16 * fs, rng);
  d.up[0] = UpBlockParams<T>::init(16 * fs, 8 * fs, rng);
  d.up[1] = UpBlockParams<T>::init(8 * fs, 4 * fs, rng);
  d.up[2] = UpBlockParams<T>::init(4 * fs, 2 * fs, rng);
  d.up[3] = UpBlockParams<T>::init(2 * fs, fs, rng);
  d.up[4] = UpBlockParams<T>::init(fs, fs, rng);
  d.head = ConvParams<T>::init(cfg.out_channels(), fs, 1, true, rng);
  return d;
}

template <typename T>
void DecoderParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  enc_input.visit(join_name(prefix, "enc_input"), v);
  enc_stem.visit(join_name(prefix, "enc_stem"), v);
  enc_stage1.visit(join_name(prefix, "enc_stage1"), v);
  enc_stage2.visit(join_name(prefix, "enc_stage2"), v);
  enc_bottleneck.visit(join_name(prefix, "enc_bottleneck"), v);
  for (std::size_t i = 0; i < up.size(); ++i) up[i].visit(join_name(prefix, "up." + std::to_string(i)), v);
  head.visit(join_name(prefix, "head"), v);
}

template <typename T>
Tensor<T> segmentation_head(const Tensor<T>& x, const ConvParams<T>& head) {
  if (head.weight.ndim() != 5 || head.weight.dim(2) != 1) throw ConfigError("segmentation head must be a 1x1x1 conv");
  return conv3d(x, head.weight, head.bias);
}

template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& x, const EncoderFeatures<T>& f, const DecoderParams<T>& d) {
  const auto& m = f.maps;
  const auto fs = d.enc_stem.conv1.weight.dim(1);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i].defined() || m[i].ndim() != 4 || m[i].dim(0) != (fs << i) || m[i].dim(1) * (2 << i) != x.dim(1)) {
      throw ConfigError("encoder feature " + std::to_string(i) + " has unexpected shape " +
                        (m[i].defined() ? shape_str(m[i].shape()) : std::string("(undefined)")));
    }
  }
  auto skip_input = d.enc_input(x);
  auto skip_stem = d.enc_stem(m[0]);
  auto skip_s1 = d.enc_stage1(m[1]);
  auto skip_s2 = d.enc_stage2(m[2]);
  auto h = d.enc_bottleneck(m[4]);
  h = d.up[0](h, m[3]);
  h = d.up[1](h, skip_s2);
  h = d.up[2](h, skip_s1);
  h = d.up[3](h, skip_stem);
  h = d.up[4](h, skip_input);
  return segmentation_head(h, d.head);
}

#define SMT_INST(T)                                                                                  \
  template struct ResBlockParams<T>;                                                                 \
  template struct UpBlockParams<T>;                                                                  \
  template struct DecoderParams<T>;                                                                  \
  template Tensor<T> segmentation_head(const Tensor<T>&, const ConvParams<T>&);                      \
  template Tensor<T> decoder_forward(const Tensor<T>&, const EncoderFeatures<T>&, const DecoderParams<T>&);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
