// SPDX-License-Identifier: Apache-2.0
#include "smt/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace smt {

namespace {

template <class... F>
struct Overload : F... {
  using F::operator()...;
};
template <class... F>
Overload(F...) -> Overload<F...>;

bool in_period(std::int64_t i, std::int64_t period, std::int64_t width, std::int64_t phase) {
  const auto m = ((i + phase) % period + period) % period;
  return m < width;
}

std::int64_t period_count(std::int64_t side, std::int64_t period, std::int64_t width, std::int64_t phase) {
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < side; ++i) n += in_period(i, period, width, phase);
  return n;
}

}  // namespace

PhantomSpec PhantomSpec::standard(std::int64_t side, std::uint64_t seed) {
  if (side < 16) throw ConfigError("standard phantom needs side >= 16");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jit(-1.0, 1.0);
  const double s = static_cast<double>(side), c = s / 2;
  auto scaled = [&](double v) { return v * (1.0 + 0.05 * jit(rng)); };

  PhantomSpec p;
  p.side = side;
  p.seed = seed;
  p.body_semi1 = 0.40 * s;
  p.body_semi2 = 0.46 * s;
  // 0, 1: organs; 2: vessels; 3: bone shared by ribs and vertebrae
  p.materials = {{100, 200}, {100, 200}, {300, 400}, {700, 900}};

  // Layout in voxels at 64^3, scaled with the side.
  const double u = s / 64.0;
  auto at = [&](double v) { return c + v * u; };
  p.shapes.push_back({1, Ellipsoid{{at(2.0 * jit(rng)), at(-8.5 + jit(rng)), at(-10.0 + jit(rng))},
                                   {scaled(12.0 * u), scaled(6.5 * u), scaled(7.0 * u)}},
                      0});
  p.shapes.push_back({1, Ellipsoid{{at(6.0 + 2.0 * jit(rng)), at(-8.0 + jit(rng)), at(11.0 + jit(rng))},
                                   {scaled(9.0 * u), scaled(6.0 * u), scaled(6.5 * u)}},
                      1});
  // Tube axes sit on voxel centres, which keeps the lattice disc area close to pi r^2.
  auto snapped = [&](double v) { return std::floor(at(v)) + 0.5; };
  p.shapes.push_back({2, Tube{snapped(4.5), snapped(-7.5), 0.069 * s}, 2});
  p.shapes.push_back({2, Tube{snapped(3.5), snapped(6.5), 0.059 * s}, 2});

  const auto period = std::max<std::int64_t>(4, side / 8);
  std::uniform_int_distribution<std::int64_t> phase(0, period - 1);
  p.shapes.push_back({3, RibSlabs{0.80, 0.92, 0.45, period, std::max<std::int64_t>(1, (3 * period) / 8), phase(rng)}, 3});
  p.shapes.push_back({4,
                      BlockStack{std::llround(at(10)), std::llround(at(19)), std::llround(at(-5)), std::llround(at(5)), period, std::max<std::int64_t>(1, (3 * period) / 4),
                                 phase(rng)},
                      3});
  return p;
}

void PhantomSpec::validate() const {
  if (side < 1) throw ConfigError("phantom side must be >= 1");
  if (!(spacing > 0.0)) throw ConfigError("phantom spacing must be > 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("phantom noise sigma must be >= 0");
  if (body_semi1 < 0 || body_semi2 < 0) throw ConfigError("body semi-axes must be >= 0");
  for (const auto& m : materials) {
    if (!(m.lo <= m.hi)) throw ConfigError("material HU range is empty");
  }
  for (const auto& sh : shapes) {
    if (sh.label < 1 || sh.label > num_classes) throw ConfigError("shape label " + std::to_string(sh.label) + " out of range");
    if (sh.material < 0 || sh.material >= static_cast<int>(materials.size())) throw ConfigError("shape material out of range");
    const bool ok = std::visit(
        Overload{[](const Ellipsoid& e) { return e.semi[0] > 0 && e.semi[1] > 0 && e.semi[2] > 0; },
                 [](const Tube& t) { return t.radius > 0; },
                 [this](const RibSlabs& r) {
                   return body_semi1 > 0 && body_semi2 > 0 && r.inner >= 0 && r.outer > r.inner && r.gap >= 0 &&
                          r.gap < std::numbers::pi && r.period > 0 && r.thickness > 0 && r.thickness <= r.period;
                 },
                 [](const BlockStack& b) {
                   return b.hi1 > b.lo1 && b.hi2 > b.lo2 && b.period > 0 && b.height > 0 && b.height <= b.period;
                 }},
        sh.shape);
    if (!ok) throw ConfigError("degenerate phantom shape for label " + std::to_string(sh.label));
  }
}

bool shape_contains(const PhantomSpec& spec, const Shape3& s, std::int64_t i, std::int64_t j, std::int64_t k) {
  const double x0 = static_cast<double>(i) + 0.5, x1 = static_cast<double>(j) + 0.5, x2 = static_cast<double>(k) + 0.5;
  const double c = static_cast<double>(spec.side) / 2;
  return std::visit(
      Overload{[&](const Ellipsoid& e) {
                 const double a = (x0 - e.center[0]) / e.semi[0], b = (x1 - e.center[1]) / e.semi[1],
                              d = (x2 - e.center[2]) / e.semi[2];
                 return a * a + b * b + d * d <= 1.0;
               },
               [&](const Tube& t) {
                 const double a = x1 - t.c1, b = x2 - t.c2;
                 return a * a + b * b <= t.radius * t.radius;
               },
               [&](const RibSlabs& r) {
                 if (!in_period(i, r.period, r.thickness, r.phase)) return false;
                 const double u = (x1 - c) / spec.body_semi1, v = (x2 - c) / spec.body_semi2;
                 const double rad = std::sqrt(u * u + v * v);
                 if (rad < r.inner || rad >= r.outer) return false;
                 return std::abs(std::atan2(u, v) - std::numbers::pi / 2) >= r.gap;
               },
               [&](const BlockStack& b) {
                 return j >= b.lo1 && j < b.hi1 && k >= b.lo2 && k < b.hi2 && in_period(i, b.period, b.height, b.phase);
               }},
      s);
}

double analytic_volume(const PhantomSpec& spec, const Shape3& s) {
  const double side = static_cast<double>(spec.side);
  return std::visit(
      Overload{[](const Ellipsoid& e) { return 4.0 / 3.0 * std::numbers::pi * e.semi[0] * e.semi[1] * e.semi[2]; },
               [&](const Tube& t) { return std::numbers::pi * t.radius * t.radius * side; },
               [&](const RibSlabs& r) {
                 const double area = spec.body_semi1 * spec.body_semi2 * (r.outer * r.outer - r.inner * r.inner) *
                                     (std::numbers::pi - r.gap);
                 return area * static_cast<double>(period_count(spec.side, r.period, r.thickness, r.phase));
               },
               [&](const BlockStack& b) {
                 return static_cast<double>((b.hi1 - b.lo1) * (b.hi2 - b.lo2) *
                                            period_count(spec.side, b.period, b.height, b.phase));
               }},
      s);
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto n = spec.side;
  const Spacing3 sp{spec.spacing, spec.spacing, spec.spacing};
  Phantom ph{VolumeGrid({n, n, n}, sp, VolumeKind::intensity), VolumeGrid({n, n, n}, sp, VolumeKind::label)};

  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  auto draw = [&](const HuRange& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
  const double fat = draw(spec.background);
  std::vector<double> hu;
  for (const auto& m : spec.materials) hu.push_back(draw(m));

  const bool body = spec.body_semi1 > 0 && spec.body_semi2 > 0;
  const double c = static_cast<double>(n) / 2;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t k = 0; k < n; ++k) {
        double v = fat;
        if (body) {
          const double u = (static_cast<double>(j) + 0.5 - c) / spec.body_semi1;
          const double w = (static_cast<double>(k) + 0.5 - c) / spec.body_semi2;
          if (u * u + w * w > 1.0) v = spec.air_hu;
        }
        float label = 0.0f;
        for (const auto& sh : spec.shapes) {
          if (shape_contains(spec, sh.shape, i, j, k)) {
            label = static_cast<float>(sh.label);
            v = hu[static_cast<std::size_t>(sh.material)];
          }
        }
        ph.image.at(i, j, k) = static_cast<float>(v);
        ph.labels.at(i, j, k) = label;
      }

  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : ph.image.data) v = static_cast<float>(v + noise(rng));
  }
  return ph;
}

Patch crop_patch(const VolumeGrid& image, const VolumeGrid& labels, const Dims3& origin, std::int64_t p) {
  if (p < 1) throw ConfigError("patch side must be >= 1");
  if (image.dims != labels.dims) throw DimensionError("image and label volumes differ in shape");
  Patch out{VolumeGrid({p, p, p}, image.spacing, VolumeKind::intensity),
            VolumeGrid({p, p, p}, labels.spacing, VolumeKind::label)};
  const auto& d = image.dims;
  for (std::int64_t i = 0; i < p; ++i) {
    const auto si = origin[0] + i;
    if (si < 0 || si >= d[0]) continue;
    for (std::int64_t j = 0; j < p; ++j) {
      const auto sj = origin[1] + j;
      if (sj < 0 || sj >= d[1]) continue;
      for (std::int64_t k = 0; k < p; ++k) {
        const auto sk = origin[2] + k;
        if (sk < 0 || sk >= d[2]) continue;
        out.image.at(i, j, k) = image.at(si, sj, sk);
        out.labels.at(i, j, k) = labels.at(si, sj, sk);
      }
    }
  }
  return out;
}

Dims3 sample_crop_origin(const VolumeGrid& labels, std::int64_t p, std::mt19937_64& rng, double foreground_prob) {
  if (p < 1) throw ConfigError("patch side must be >= 1");
  if (!(foreground_prob >= 0.0 && foreground_prob <= 1.0)) throw ConfigError("foreground probability must lie in [0, 1]");
  const auto& d = labels.dims;
  Dims3 lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[a] = d[a] >= p ? 0 : -((p - d[a]) / 2);
    hi[a] = d[a] >= p ? d[a] - p : lo[a];
  }
  const bool biased = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < foreground_prob;
  if (biased) {
    std::int64_t count = 0;
    for (float v : labels.data) count += v > 0.0f;
    if (count > 0) {
      auto pick = std::uniform_int_distribution<std::int64_t>(0, count - 1)(rng);
      std::int64_t flat = 0;
      for (;; ++flat) {
        if (labels.data[static_cast<std::size_t>(flat)] > 0.0f && pick-- == 0) break;
      }
      const Dims3 v{flat / (d[1] * d[2]), (flat / d[2]) % d[1], flat % d[2]};
      Dims3 o;
      for (int a = 0; a < 3; ++a) o[a] = std::clamp(v[a] - p / 2, lo[a], hi[a]);
      return o;
    }
  }
  Dims3 o;
  for (int a = 0; a < 3; ++a) o[a] = std::uniform_int_distribution<std::int64_t>(lo[a], hi[a])(rng);
  return o;
}

Patch random_crop_patch(const VolumeGrid& image, const VolumeGrid& labels, std::int64_t p, std::mt19937_64& rng,
                        double foreground_prob) {
  if (image.dims != labels.dims) throw DimensionError("image and label volumes differ in shape");
  return crop_patch(image, labels, sample_crop_origin(labels, p, rng, foreground_prob), p);
}

AugmentParams sample_augment(std::mt19937_64& rng, const AugmentConfig& cfg) {
  auto u = [&](double lo, double hi) { return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng); };
  AugmentParams a;
  a.shift = u(-cfg.shift, cfg.shift);
  a.scale = u(cfg.scale_lo, cfg.scale_hi);
  if (cfg.rotate) {
    a.plane = static_cast<int>(std::uniform_int_distribution<int>(0, 2)(rng));
    a.quarter_turns = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
  }
  a.zoom = u(cfg.zoom_lo, cfg.zoom_hi);
  return a;
}

namespace {

// One quarter turn in the plane of axes (a, b): out[.., i_a, i_b] = in[.., n-1-i_b, i_a].
VolumeGrid quarter_turn(const VolumeGrid& v, int a, int b) {
  if (v.dims[a] != v.dims[b]) throw DimensionError("rotation plane must be square");
  VolumeGrid out = v;
  const auto n = v.dims[a];
  std::array<std::int64_t, 3> idx{}, src{};
  for (idx[0] = 0; idx[0] < v.dims[0]; ++idx[0])
    for (idx[1] = 0; idx[1] < v.dims[1]; ++idx[1])
      for (idx[2] = 0; idx[2] < v.dims[2]; ++idx[2]) {
        src = idx;
        src[a] = n - 1 - idx[b];
        src[b] = idx[a];
        out.at(idx[0], idx[1], idx[2]) = v.at(src[0], src[1], src[2]);
      }
  return out;
}

VolumeGrid zoom_about_centre(const VolumeGrid& v, double z) {
  VolumeGrid out(v.dims, v.spacing, v.kind);
  std::array<std::vector<double>, 3> src;
  for (int a = 0; a < 3; ++a) {
    const double c = 0.5 * static_cast<double>(v.dims[a] - 1);
    for (std::int64_t i = 0; i < v.dims[a]; ++i) src[a].push_back(c + (static_cast<double>(i) - c) / z);
  }
  auto value = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= v.dims[0] || j >= v.dims[1] || k >= v.dims[2]) return 0.0;
    return v.at(i, j, k);
  };
  for (std::int64_t i = 0; i < v.dims[0]; ++i)
    for (std::int64_t j = 0; j < v.dims[1]; ++j)
      for (std::int64_t k = 0; k < v.dims[2]; ++k) {
        const double s0 = src[0][static_cast<std::size_t>(i)], s1 = src[1][static_cast<std::size_t>(j)],
                     s2 = src[2][static_cast<std::size_t>(k)];
        if (v.kind == VolumeKind::label) {
          out.at(i, j, k) = static_cast<float>(value(static_cast<std::int64_t>(std::floor(s0 + 0.5)),
                                                     static_cast<std::int64_t>(std::floor(s1 + 0.5)),
                                                     static_cast<std::int64_t>(std::floor(s2 + 0.5))));
          continue;
        }
        const auto f0 = static_cast<std::int64_t>(std::floor(s0)), f1 = static_cast<std::int64_t>(std::floor(s1)),
                   f2 = static_cast<std::int64_t>(std::floor(s2));
        const double t0 = s0 - static_cast<double>(f0), t1 = s1 - static_cast<double>(f1), t2 = s2 - static_cast<double>(f2);
        double acc = 0;
        for (int d0 = 0; d0 < 2; ++d0)
          for (int d1 = 0; d1 < 2; ++d1)
            for (int d2 = 0; d2 < 2; ++d2) {
              const double w = (d0 ? t0 : 1 - t0) * (d1 ? t1 : 1 - t1) * (d2 ? t2 : 1 - t2);
              if (w != 0.0) acc += w * value(f0 + d0, f1 + d1, f2 + d2);
            }
        out.at(i, j, k) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace

Patch apply_augment(const Patch& in, const AugmentParams& a) {
  if (in.image.dims != in.labels.dims) throw DimensionError("image and label volumes differ in shape");
  if (!(a.zoom > 0.0)) throw ConfigError("zoom factor must be > 0");
  Patch out = in;
  for (auto& x : out.image.data) x = static_cast<float>(std::clamp(x * a.scale + a.shift, 0.0, 1.0));

  static constexpr int kPlanes[3][2] = {{1, 2}, {0, 2}, {0, 1}};
  const auto [ax, bx] = kPlanes[((a.plane % 3) + 3) % 3];
  for (int t = 0; t < ((a.quarter_turns % 4) + 4) % 4; ++t) {
    out.image = quarter_turn(out.image, ax, bx);
    out.labels = quarter_turn(out.labels, ax, bx);
  }
  if (a.zoom != 1.0) {
    out.image = zoom_about_centre(out.image, a.zoom);
    out.labels = zoom_about_centre(out.labels, a.zoom);
  }
  return out;
}

Patch augment(const Patch& in, std::mt19937_64& rng, const AugmentConfig& cfg) {
  return apply_augment(in, sample_augment(rng, cfg));
}

}  // namespace smt
