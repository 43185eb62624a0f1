// SPDX-License-Identifier: Apache-2.0
//
// Convolutional decoder: residual conv blocks on the raw input and on each
// encoder feature map, transposed-conv upsampling with skip concatenation,
// and a 1×1×1 segmentation head.
#pragma once

#include <array>
#include <optional>
#include <random>

#include "smt/config.hpp"
#include "smt/layers.hpp"
#include "smt/swin.hpp"

namespace smt {

// conv3 -> IN -> lrelu -> conv3 -> IN, plus a 1×1 conv + IN shortcut when the
// channel count changes, then lrelu. Convolutions carry no bias and the
// instance norms no affine terms.
template <typename T>
struct ResBlockParams {
  ConvParams<T> conv1, conv2;
  std::optional<ConvParams<T>> shortcut;

  static ResBlockParams init(std::int64_t in, std::int64_t out, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

// Stride-2 transposed conv (in -> out), concat with the skip, res block (2·out -> out).
template <typename T>
struct UpBlockParams {
  ConvParams<T> up;  // weight [in, out, 2, 2, 2]
  ResBlockParams<T> block;

  static UpBlockParams init(std::int64_t in, std::int64_t out, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& skip) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

template <typename T>
struct DecoderParams {
  // Encoder-side blocks: raw input, stem output, stages 1-2, bottleneck.
  ResBlockParams<T> enc_input, enc_stem, enc_stage1, enc_stage2, enc_bottleneck;
  // Up blocks from the bottleneck (index 0) to full resolution (index 4).
  std::array<UpBlockParams<T>, 5> up;
  ConvParams<T> head;  // [K+1, d₀, 1, 1, 1] with bias

  static DecoderParams init(const SwinSMTConfig& cfg, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

// x [C, p, p, p] and the encoder pyramid -> logits [K+1, p, p, p].
template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& x, const EncoderFeatures<T>& features, const DecoderParams<T>& params);

// Per-voxel linear map: x [c, D, H, W] -> [K+1, D, H, W].
template <typename T> Tensor<T> segmentation_head(const Tensor<T>& x, const ConvParams<T>& head);

}  // namespace smt
