// SPDX-License-Identifier: Apache-2.0
#include "smt/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "../tensor/graph.hpp"

namespace smt {

VolumeGrid::VolumeGrid(Dims3 d, Spacing3 s, VolumeKind k, float fill)
    : dims(d), spacing(s), kind(k), data(static_cast<std::size_t>(std::max<std::int64_t>(0, d[0] * d[1] * d[2])), fill) {
  for (auto n : d) {
    if (n < 1) throw DimensionError("volume sides must be >= 1");
  }
}

void VolumeGrid::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw DataError("volume sides must be >= 1");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw DataError("volume spacing must be positive");
  }
  if (static_cast<std::int64_t>(data.size()) != voxels()) {
    throw DataError("volume holds " + std::to_string(data.size()) + " values for " + std::to_string(voxels()) + " voxels");
  }
  if (kind == VolumeKind::label) {
    for (float v : data) {
      if (!(v >= 0.0f) || v > 65535.0f || v != std::floor(v)) {
        throw DataError("label volume holds a non-integral or negative value " + std::to_string(v));
      }
    }
  }
}

VolumeGrid label_volume(const Dims3& dims, const Spacing3& spacing, const Labels& labels) {
  VolumeGrid v(dims, spacing, VolumeKind::label);
  if (labels.size() != v.data.size()) throw DimensionError("label count does not match volume dims");
  std::transform(labels.begin(), labels.end(), v.data.begin(), [](std::int32_t l) { return static_cast<float>(l); });
  v.validate();
  return v;
}

Labels to_labels(const VolumeGrid& v) {
  if (v.kind != VolumeKind::label) throw DataError("expected a label volume");
  Labels out(v.data.size());
  std::transform(v.data.begin(), v.data.end(), out.begin(), [](float x) { return static_cast<std::int32_t>(x); });
  return out;
}

template <typename T>
Tensor<T> to_tensor(const VolumeGrid& v) {
  return Tensor<T>({1, v.dims[0], v.dims[1], v.dims[2]}, std::vector<T>(v.data.begin(), v.data.end()));
}

VolumeGrid hu_clip_scale(const VolumeGrid& v) {
  if (v.kind != VolumeKind::intensity) throw DataError("HU scaling applies to intensity volumes only");
  const bool unit = !v.data.empty() && std::all_of(v.data.begin(), v.data.end(), [](float x) { return x >= 0.0f && x <= 1.0f; });
  if (unit) std::clog << "warning: hu_clip_scale input already lies in [0, 1]; expected Hounsfield units\n";
  VolumeGrid out = v;
  for (auto& x : out.data) {
    if (std::isnan(x)) throw DataError("NaN in intensity volume");
    x = static_cast<float>((std::clamp(static_cast<double>(x), kHuMin, kHuMax) - kHuMin) / (kHuMax - kHuMin));
  }
  return out;
}

namespace {

struct Tap {
  std::int64_t lo, hi;
  double frac;
};

std::vector<Tap> taps(std::int64_t n_out, std::int64_t n_in, double step_ratio) {
  std::vector<Tap> t(static_cast<std::size_t>(n_out));
  for (std::int64_t j = 0; j < n_out; ++j) {
    const double c = std::clamp((static_cast<double>(j) + 0.5) * step_ratio - 0.5, 0.0, static_cast<double>(n_in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(c));
    t[static_cast<std::size_t>(j)] = {lo, std::min(lo + 1, n_in - 1), c - static_cast<double>(lo)};
  }
  return t;
}

}  // namespace

VolumeGrid resample_isotropic(const VolumeGrid& v, double target) {
  if (!(target > 0.0)) throw ConfigError("resampling target spacing must be > 0");
  v.validate();
  Dims3 nd;
  std::array<std::vector<Tap>, 3> ax;
  for (int a = 0; a < 3; ++a) {
    nd[a] = std::max<std::int64_t>(1, std::llround(static_cast<double>(v.dims[a]) * v.spacing[a] / target));
    ax[a] = taps(nd[a], v.dims[a], target / v.spacing[a]);
  }
  VolumeGrid out(nd, {target, target, target}, v.kind);
  const bool nearest = v.kind == VolumeKind::label;
  for (std::int64_t i = 0; i < nd[0]; ++i)
    for (std::int64_t j = 0; j < nd[1]; ++j)
      for (std::int64_t k = 0; k < nd[2]; ++k) {
        const auto& a = ax[0][static_cast<std::size_t>(i)];
        const auto& b = ax[1][static_cast<std::size_t>(j)];
        const auto& c = ax[2][static_cast<std::size_t>(k)];
        if (nearest) {
          out.at(i, j, k) = v.at(a.frac < 0.5 ? a.lo : a.hi, b.frac < 0.5 ? b.lo : b.hi, c.frac < 0.5 ? c.lo : c.hi);
          continue;
        }
        double acc = 0;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj)
            for (int dk = 0; dk < 2; ++dk) {
              const double w = (di ? a.frac : 1 - a.frac) * (dj ? b.frac : 1 - b.frac) * (dk ? c.frac : 1 - c.frac);
              if (w != 0.0) acc += w * v.at(di ? a.hi : a.lo, dj ? b.hi : b.lo, dk ? c.hi : c.lo);
            }
        out.at(i, j, k) = static_cast<float>(acc);
      }
  return out;
}

namespace {

constexpr const char* kMagic = "SVOL1";

void put_u32(std::string& s, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 | static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string encode_svol(const VolumeGrid& v) {
  v.validate();
  const bool label = v.kind == VolumeKind::label;
  std::string s = std::string(kMagic) + " " + std::to_string(v.dims[0]) + " " + std::to_string(v.dims[1]) + " " +
                  std::to_string(v.dims[2]);
  for (double sp : v.spacing) s += " " + fmt_double(sp);
  s += label ? " u16 label\n" : " f32 intensity\n";
  s.reserve(s.size() + v.data.size() * (label ? 2 : 4));
  for (float x : v.data) {
    if (label) {
      const auto u = static_cast<std::uint16_t>(x);
      s.push_back(static_cast<char>(u & 0xffu));
      s.push_back(static_cast<char>(u >> 8));
    } else {
      put_u32(s, std::bit_cast<std::uint32_t>(x));
    }
  }
  return s;
}

VolumeGrid decode_svol(const std::string& bytes) {
  const std::string magic = std::string(kMagic) + " ";
  if (bytes.compare(0, magic.size(), magic) != 0) throw SvolError(SvolErrorCode::bad_magic, "not an SVOL file (bad magic)");
  const auto eol = bytes.find('\n');
  if (eol == std::string::npos) throw SvolError(SvolErrorCode::bad_header, "SVOL header has no terminating newline");

  std::istringstream in(bytes.substr(magic.size(), eol - magic.size()));
  Dims3 d{};
  Spacing3 sp{};
  std::string dtype, kind, extra;
  in >> d[0] >> d[1] >> d[2] >> sp[0] >> sp[1] >> sp[2] >> dtype >> kind;
  if (!in || (in >> extra)) throw SvolError(SvolErrorCode::bad_header, "malformed SVOL header");
  for (int a = 0; a < 3; ++a) {
    if (d[a] < 1 || !(sp[a] > 0.0)) throw SvolError(SvolErrorCode::bad_header, "SVOL dims and spacing must be positive");
  }
  if ((dtype != "f32" && dtype != "u16") || (kind != "intensity" && kind != "label")) {
    throw SvolError(SvolErrorCode::bad_header, "unknown SVOL dtype or kind: " + dtype + " " + kind);
  }

  const std::size_t esize = dtype == "f32" ? 4 : 2;
  const auto n = static_cast<std::size_t>(d[0] * d[1] * d[2]);
  const auto have = bytes.size() - eol - 1;
  if (have < n * esize) {
    throw SvolError(SvolErrorCode::truncated_payload, "truncated payload: " + std::to_string(have) + " of " +
                                                          std::to_string(n * esize) + " bytes");
  }
  if (have > n * esize) {
    throw SvolError(SvolErrorCode::size_mismatch, "payload has " + std::to_string(have) + " bytes, dims imply " +
                                                      std::to_string(n * esize));
  }

  VolumeGrid v(d, sp, kind == "label" ? VolumeKind::label : VolumeKind::intensity);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + eol + 1;
  for (std::size_t i = 0; i < n; ++i) {
    v.data[i] = esize == 4 ? std::bit_cast<float>(get_u32(p + 4 * i))
                           : static_cast<float>(static_cast<std::uint16_t>(p[2 * i] | p[2 * i + 1] << 8));
  }
  v.validate();
  return v;
}

void write_svol(const std::string& path, const VolumeGrid& v) {
  const auto bytes = encode_svol(v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SvolError(SvolErrorCode::io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw SvolError(SvolErrorCode::io, "failed writing " + path);
}

VolumeGrid read_svol(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SvolError(SvolErrorCode::io, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_svol(bytes);
}

#define SMT_INST(T) template Tensor<T> to_tensor<T>(const VolumeGrid&);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
