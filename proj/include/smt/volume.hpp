// SPDX-License-Identifier: Apache-2.0
//
// Scalar 3D volumes with physical spacing, CT preprocessing and the SVOL
// container.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "smt/errors.hpp"
#include "smt/losses.hpp"
#include "smt/tensor.hpp"

namespace smt {

enum class VolumeKind { intensity, label };

using Dims3 = std::array<std::int64_t, 3>;
using Spacing3 = std::array<double, 3>;

// Row-major, last axis fastest. Label volumes store class ids as exact floats.
struct VolumeGrid {
  Dims3 dims{0, 0, 0};
  Spacing3 spacing{1.0, 1.0, 1.0};
  VolumeKind kind = VolumeKind::intensity;
  std::vector<float> data;

  VolumeGrid() = default;
  VolumeGrid(Dims3 d, Spacing3 s, VolumeKind k, float fill = 0.0f);

  std::int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  std::int64_t index(std::int64_t i, std::int64_t j, std::int64_t k) const { return (i * dims[1] + j) * dims[2] + k; }
  float& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data[static_cast<std::size_t>(index(i, j, k))]; }
  float at(std::int64_t i, std::int64_t j, std::int64_t k) const { return data[static_cast<std::size_t>(index(i, j, k))]; }

  // Throws DataError on non-positive spacing, size mismatch or non-integral labels.
  void validate() const;
  bool operator==(const VolumeGrid&) const = default;
};

VolumeGrid label_volume(const Dims3& dims, const Spacing3& spacing, const Labels& labels);
Labels to_labels(const VolumeGrid& v);
// [1, d0, d1, d2]
template <typename T> Tensor<T> to_tensor(const VolumeGrid& v);

inline constexpr double kHuMin = -1024.0;
inline constexpr double kHuMax = 1024.0;

// (clamp(x, -1024, 1024) + 1024) / 2048. One-way: input must be in HU. A
// volume that already lies inside [0, 1] triggers a warning on std::clog.
VolumeGrid hu_clip_scale(const VolumeGrid& v);

// New dims round(old * spacing / target); trilinear for intensity, nearest
// for labels. Voxel centres are aligned, edges clamp.
VolumeGrid resample_isotropic(const VolumeGrid& v, double target = 1.5);

enum class SvolErrorCode { bad_magic, bad_header, truncated_payload, size_mismatch, io };

class SvolError : public FormatError {
 public:
  SvolError(SvolErrorCode code, const std::string& what) : FormatError(what), code_(code) {}
  SvolErrorCode code() const { return code_; }

 private:
  SvolErrorCode code_;
};

// Header: "SVOL1 <d0> <d1> <d2> <s0> <s1> <s2> <f32|u16> <intensity|label>\n",
// then little-endian payload. Intensities are written as f32, labels as u16.
std::string encode_svol(const VolumeGrid& v);
VolumeGrid decode_svol(const std::string& bytes);
void write_svol(const std::string& path, const VolumeGrid& v);
VolumeGrid read_svol(const std::string& path);

}  // namespace smt
