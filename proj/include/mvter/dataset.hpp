// Copyright 2026 The MVTER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvter/binary_io.hpp"
#include "mvter/error.hpp"
#include "mvter/geometry.hpp"
#include "mvter/random.hpp"

namespace mvter {

enum class ShapeClass : int { cube, sphere, cylinder, cone, torus, pyramid, ellipsoid, cross };

inline constexpr int kNumShapeClasses = 8;
inline constexpr std::array<std::string_view, kNumShapeClasses> kShapeClassNames = {
    "cube", "sphere", "cylinder", "cone", "torus", "pyramid", "ellipsoid", "cross"};

inline ShapeClass shape_class(int id) {
  if (id < 0 || id >= kNumShapeClasses) throw DomainError("unknown shape class id " + std::to_string(id));
  return static_cast<ShapeClass>(id);
}

inline ShapeClass shape_class(std::string_view name) {
  for (int i = 0; i < kNumShapeClasses; ++i)
    if (kShapeClassNames[static_cast<std::size_t>(i)] == name) return static_cast<ShapeClass>(i);
  throw DomainError("unknown shape class '" + std::string(name) + "'");
}

struct ShapeSpec {
  int points_per_object = 1024;
  double scale_min = 0.7;  // per-axis anisotropic scale range
  double scale_max = 1.3;
  double noise_sigma = 0.01;

  void validate() const {
    if (points_per_object < 64) throw DomainError("points_per_object must be at least 64");
    if (!(scale_min > 0.0 && scale_min <= scale_max))
      throw DomainError("scale range must satisfy 0 < min <= max");
    if (!(noise_sigma >= 0.0)) throw DomainError("noise_sigma must be non-negative");
  }
};

namespace shapes {

inline constexpr double kCylinderRadius = 0.6;
inline constexpr double kCylinderHalfHeight = 1.0;
inline constexpr double kConeRadius = 0.8;
inline constexpr double kConeHeight = 2.0;
inline constexpr double kTorusMajor = 1.0;
inline constexpr double kTorusMinor = 0.35;
inline constexpr double kPyramidHalfBase = 1.0;
inline constexpr double kPyramidHeight = 1.6;
inline constexpr Vec3 kEllipsoidAxes = {1.0, 0.6, 0.35};
inline constexpr double kCrossArm = 1.0;    // half-length
inline constexpr double kCrossWidth = 0.25;  // half-width

inline Vec3 unit_sphere(Rng& rng) {
  while (true) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(v);
    if (n > 1e-12) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

// Uniform point on an axis-aligned box surface with the given half extents.
inline Vec3 box_surface(const Vec3& half, Rng& rng) {
  const double a_xy = half[0] * half[1], a_xz = half[0] * half[2], a_yz = half[1] * half[2];
  const double pick = rng.uniform() * (a_xy + a_xz + a_yz);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
  if (pick < a_xy) return {u * half[0], v * half[1], sign * half[2]};
  if (pick < a_xy + a_xz) return {u * half[0], sign * half[1], v * half[2]};
  return {sign * half[0], u * half[1], v * half[2]};
}

inline Vec3 disk(double radius, double z, Rng& rng) {
  const double r = radius * std::sqrt(rng.uniform());
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  return {r * std::cos(phi), r * std::sin(phi), z};
}

// Uniform point on triangle (a, b, c).
inline Vec3 triangle(const Vec3& a, const Vec3& b, const Vec3& c, Rng& rng) {
  double u = rng.uniform(), v = rng.uniform();
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  Vec3 p;
  for (int k = 0; k < 3; ++k) p[k] = a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k]);
  return p;
}

inline bool inside_box(const Vec3& p, const Vec3& half) {
  return std::abs(p[0]) < half[0] && std::abs(p[1]) < half[1] && std::abs(p[2]) < half[2];
}

inline Vec3 sample(ShapeClass cls, Rng& rng) {
  using std::numbers::pi;
  switch (cls) {
    case ShapeClass::cube:
      return box_surface({1.0, 1.0, 1.0}, rng);
    case ShapeClass::sphere:
      return unit_sphere(rng);
    case ShapeClass::cylinder: {
      const double side = 2.0 * pi * kCylinderRadius * 2.0 * kCylinderHalfHeight;
      const double caps = 2.0 * pi * kCylinderRadius * kCylinderRadius;
      if (rng.uniform() * (side + caps) < caps)
        return disk(kCylinderRadius, rng.uniform() < 0.5 ? -kCylinderHalfHeight : kCylinderHalfHeight,
                    rng);
      const double phi = 2.0 * pi * rng.uniform();
      return {kCylinderRadius * std::cos(phi), kCylinderRadius * std::sin(phi),
              rng.uniform(-kCylinderHalfHeight, kCylinderHalfHeight)};
    }
    case ShapeClass::cone: {
      // Apex at +h/2, base disk at -h/2.
      const double slant = std::hypot(kConeRadius, kConeHeight);
      const double lateral = pi * kConeRadius * slant, base = pi * kConeRadius * kConeRadius;
      if (rng.uniform() * (lateral + base) < base) return disk(kConeRadius, -kConeHeight / 2, rng);
      const double t = std::sqrt(rng.uniform());  // fraction of the way from apex to base
      const double phi = 2.0 * pi * rng.uniform();
      return {t * kConeRadius * std::cos(phi), t * kConeRadius * std::sin(phi),
              kConeHeight / 2 - t * kConeHeight};
    }
    case ShapeClass::torus: {
      // Rejection on the tube angle gives an area-uniform distribution.
      while (true) {
        const double theta = 2.0 * pi * rng.uniform(), phi = 2.0 * pi * rng.uniform();
        const double w = (kTorusMajor + kTorusMinor * std::cos(theta)) / (kTorusMajor + kTorusMinor);
        if (rng.uniform() <= w) {
          const double ring = kTorusMajor + kTorusMinor * std::cos(theta);
          return {ring * std::cos(phi), ring * std::sin(phi), kTorusMinor * std::sin(theta)};
        }
      }
    }
    case ShapeClass::pyramid: {
      const double b = kPyramidHalfBase, zb = -kPyramidHeight / 3, za = 2 * kPyramidHeight / 3;
      const Vec3 apex{0, 0, za};
      const Vec3 corners[4] = {{-b, -b, zb}, {b, -b, zb}, {b, b, zb}, {-b, b, zb}};
      const double face = 2.0 * b * std::hypot(b, kPyramidHeight) / 2.0;
      const double base = 4.0 * b * b;
      const double pick = rng.uniform() * (base + 4.0 * face);
      if (pick < base) return {rng.uniform(-b, b), rng.uniform(-b, b), zb};
      const int f = std::min(3, static_cast<int>((pick - base) / face));
      return triangle(corners[f], corners[(f + 1) % 4], apex, rng);
    }
    case ShapeClass::ellipsoid: {
      const Vec3 u = unit_sphere(rng);
      return {u[0] * kEllipsoidAxes[0], u[1] * kEllipsoidAxes[1], u[2] * kEllipsoidAxes[2]};
    }
    case ShapeClass::cross: {
      // Planar plus sign: union of an x-bar and a y-bar; the hidden parts of
      // each bar's surface are rejected.
      const Vec3 xbar{kCrossArm, kCrossWidth, kCrossWidth}, ybar{kCrossWidth, kCrossArm, kCrossWidth};
      while (true) {
        const bool first = rng.uniform() < 0.5;
        const Vec3 p = box_surface(first ? xbar : ybar, rng);
        if (!inside_box(p, first ? ybar : xbar)) return p;
      }
    }
  }
  throw DomainError("unknown shape class");
}

}  // namespace shapes

// Raw points on the class's canonical surface, before jitter and normalization.
inline std::vector<Vec3> sample_canonical_surface(ShapeClass cls, int n, Rng& rng) {
  if (n < 1) throw DomainError("sample_canonical_surface: n must be positive");
  if (static_cast<int>(cls) < 0 || static_cast<int>(cls) >= kNumShapeClasses)
    throw DomainError("unknown shape class id " + std::to_string(static_cast<int>(cls)));
  std::vector<Vec3> pts(static_cast<std::size_t>(n));
  for (auto& p : pts) p = shapes::sample(cls, rng);
  return pts;
}

// Canonical surface sample, per-axis scale jitter, Gaussian noise, then
// normalize_cloud().
inline PointCloud generate_shape(const ShapeSpec& spec, ShapeClass cls, Rng& rng) {
  spec.validate();
  std::vector<Vec3> pts = sample_canonical_surface(cls, spec.points_per_object, rng);
  Vec3 scale;
  for (auto& s : scale) s = rng.uniform(spec.scale_min, spec.scale_max);
  for (auto& p : pts)
    for (int k = 0; k < 3; ++k) p[k] = p[k] * scale[k] + spec.noise_sigma * rng.normal();
  return normalize_cloud(pts);
}

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct DataObject {
  PointCloud cloud;
  int label = 0;
  Split split = Split::train;
  bool labeled = true;  // participates in the task loss

  friend bool operator==(const DataObject&, const DataObject&) = default;
};

struct SplitCounts {
  int train = 40;
  int val = 5;
  int test = 15;
};

struct Dataset {
  int num_classes = kNumShapeClasses;
  std::uint64_t seed = 0;
  std::vector<DataObject> objects;

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < objects.size(); ++i)
      if (objects[i].split == split) out.push_back(i);
    return out;
  }
};

// Rounds coordinates to float32, the precision objects are stored with.
inline PointCloud to_storage_precision(const PointCloud& cloud) {
  std::vector<Vec3> pts(cloud.points().begin(), cloud.points().end());
  for (auto& p : pts)
    for (auto& v : p) v = static_cast<double>(static_cast<float>(v));
  return PointCloud(std::move(pts));
}

/// Objects are laid out split-major (train, val, test), then class, then
/// instance. Object i draws from Rng(mix_seed(seed, i)), so every coordinate
/// is a function of (seed, spec, i) alone.
inline Dataset generate_dataset(const SplitCounts& counts, const ShapeSpec& spec, std::uint64_t seed) {
  if (counts.train < 1 || counts.val < 1 || counts.test < 1)
    throw DomainError("per-class split counts must all be at least 1");
  spec.validate();
  Dataset ds;
  ds.seed = seed;
  const std::pair<Split, int> splits[] = {
      {Split::train, counts.train}, {Split::val, counts.val}, {Split::test, counts.test}};
  std::uint64_t index = 0;
  for (const auto& [split, per_class] : splits) {
    for (int c = 0; c < kNumShapeClasses; ++c) {
      for (int i = 0; i < per_class; ++i, ++index) {
        Rng rng(mix_seed(seed, index));
        PointCloud cloud = generate_shape(spec, static_cast<ShapeClass>(c), rng);
        ds.objects.push_back({to_storage_precision(cloud), c, split, true});
      }
    }
  }
  return ds;
}

// "MVDS" layout, little-endian:
//   magic "MVDS" | version u16 | K u16 | count u32 |
//   count x { class u16 | split u8 | n u32 | f32[n*3] }
inline constexpr char kDatasetMagic[] = "MVDS";
inline constexpr std::uint16_t kDatasetVersion = 1;

inline void write_dataset(ByteWriter& w, const Dataset& ds) {
  w.raw(std::string_view(kDatasetMagic, 4));
  w.u16(kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.objects.size()));
  for (const auto& o : ds.objects) {
    w.u16(static_cast<std::uint16_t>(o.label));
    w.u8(static_cast<std::uint8_t>(o.split));
    w.u32(static_cast<std::uint32_t>(o.cloud.size()));
    for (const auto& p : o.cloud.points())
      for (double v : p) w.f32(static_cast<float>(v));
  }
}

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  write_dataset(w, ds);
  return w.bytes();
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ByteWriter w;
  write_dataset(w, ds);
  w.save(path);
}

// Decodes and validates everything before returning; a failure never yields
// a partial dataset. Labeled flags reset to true.
inline Dataset decode_dataset(ByteReader& r) {
  if (r.raw(4) != std::string_view(kDatasetMagic, 4)) r.fail_at(0, "bad magic (expected MVDS)");
  const std::size_t version_at = r.offset();
  if (const auto version = r.u16(); version != kDatasetVersion)
    r.fail_at(version_at, "unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.num_classes = r.u16();
  if (ds.num_classes < 1) r.fail_at(6, "class count must be positive");
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t obj_at = r.offset();
    DataObject o;
    o.label = r.u16();
    if (o.label >= ds.num_classes)
      r.fail_at(obj_at, "object " + std::to_string(i) + " has class " + std::to_string(o.label) +
                            " >= K=" + std::to_string(ds.num_classes));
    const std::uint8_t split = r.u8();
    if (split > 2) r.fail_at(obj_at + 2, "object " + std::to_string(i) + " has invalid split tag");
    o.split = static_cast<Split>(split);
    const std::size_t n_at = r.offset();
    const std::uint32_t n = r.u32();
    if (n == 0) r.fail_at(n_at, "object " + std::to_string(i) + " has no points");
    r.require(static_cast<std::size_t>(n) * 12);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) {
      const std::size_t at = r.offset();
      for (auto& v : p) {
        v = r.f32();
        if (!std::isfinite(v)) r.fail_at(at, "non-finite coordinate in object " + std::to_string(i));
      }
    }
    o.cloud = PointCloud(std::move(pts));
    ds.objects.push_back(std::move(o));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last object");
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  return decode_dataset(r);
}

// FNV-1a over the MVDS encoding.
inline std::uint64_t dataset_checksum(const Dataset& ds) {
  const auto bytes = encode_dataset(ds);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace mvter
