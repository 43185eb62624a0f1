// SPDX-License-Identifier: Apache-2.0
//
// Synthetic torso-like phantoms, patch cropping and training augmentation.
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "smt/volume.hpp"

namespace smt {

// Coordinates are in voxels along (axis0, axis1, axis2); voxel i has its
// centre at i + 0.5. Axis 0 runs head to feet, axis 1 front to back.
struct Ellipsoid {
  std::array<double, 3> center, semi;
};

// Circular cylinder along axis 0 spanning the whole volume.
struct Tube {
  double c1, c2, radius;
};

// Elliptic annulus (radii relative to the body ellipse) cut into slabs along
// axis 0. A sector of half-angle `gap` around the back is left out.
struct RibSlabs {
  double inner, outer, gap;
  std::int64_t period, thickness, phase;
};

// Axis-aligned box [lo, hi) in axes 1, 2, repeated along axis 0.
struct BlockStack {
  std::int64_t lo1, hi1, lo2, hi2;
  std::int64_t period, height, phase;
};

using Shape3 = std::variant<Ellipsoid, Tube, RibSlabs, BlockStack>;

struct HuRange {
  double lo, hi;
};

struct ShapeSpec {
  int label;
  Shape3 shape;
  int material;  // index into PhantomSpec::materials; shapes sharing one get the same HU
};

struct PhantomSpec {
  std::int64_t side = 64;
  double spacing = 1.5;
  // Elliptic body cylinder along axis 0 (semi-axes in axes 1, 2); air outside.
  double body_semi1 = 0, body_semi2 = 0;
  double air_hu = -1000.0;
  HuRange background{-120.0, -80.0};
  std::vector<HuRange> materials;
  std::vector<ShapeSpec> shapes;  // later shapes overwrite earlier ones
  int num_classes = 4;
  double noise_sigma = 20.0;
  std::uint64_t seed = 0;

  // Organs (1), vessels (2), ribs (3), vertebrae (4) with seeded jitter.
  static PhantomSpec standard(std::int64_t side, std::uint64_t seed);
  void validate() const;
};

struct Phantom {
  VolumeGrid image;   // pseudo-HU
  VolumeGrid labels;  // 0 .. num_classes
};

Phantom generate_phantom(const PhantomSpec& spec);

bool shape_contains(const PhantomSpec& spec, const Shape3& s, std::int64_t i, std::int64_t j, std::int64_t k);
// Continuous volume of the shape in voxel units, clipped to the volume along axis 0.
double analytic_volume(const PhantomSpec& spec, const Shape3& s);

struct Patch {
  VolumeGrid image, labels;
};

// Cube of side p at `origin`; parts outside the volume are 0 / background.
Patch crop_patch(const VolumeGrid& image, const VolumeGrid& labels, const Dims3& origin, std::int64_t p);

// Origin uniform over valid positions (volume padded symmetrically up to p);
// with probability foreground_prob the crop is centred on a random foreground voxel.
Dims3 sample_crop_origin(const VolumeGrid& labels, std::int64_t p, std::mt19937_64& rng, double foreground_prob = 0.5);
Patch random_crop_patch(const VolumeGrid& image, const VolumeGrid& labels, std::int64_t p, std::mt19937_64& rng,
                        double foreground_prob = 0.5);

struct AugmentConfig {
  double shift = 0.1;                 // intensity shift U(-shift, shift)
  double scale_lo = 0.9, scale_hi = 1.1;
  bool rotate = true;                 // random quarter turns in a random plane
  double zoom_lo = 0.9, zoom_hi = 1.1;
};

struct AugmentParams {
  double shift = 0.0, scale = 1.0;
  int plane = 0;  // 0: axes (1,2), 1: axes (0,2), 2: axes (0,1)
  int quarter_turns = 0;
  double zoom = 1.0;
};

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentConfig& cfg = {});
// Scale/shift/clamp intensities, rotate both volumes, then zoom about the
// centre (trilinear / nearest) keeping the side length.
Patch apply_augment(const Patch& in, const AugmentParams& a);
Patch augment(const Patch& in, std::mt19937_64& rng, const AugmentConfig& cfg = {});

}  // namespace smt
