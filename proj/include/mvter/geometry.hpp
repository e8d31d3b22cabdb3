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
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mvter/error.hpp"
#include "mvter/random.hpp"

namespace mvter {

using Vec3 = std::array<double, 3>;

// Row-major 3x3 matrix acting on column vectors.
struct Mat3 {
  std::array<std::array<double, 3>, 3> m{};

  static Mat3 identity() noexcept {
    Mat3 r;
    r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
    return r;
  }

  double& operator()(int r, int c) noexcept { return m[r][c]; }
  double operator()(int r, int c) const noexcept { return m[r][c]; }

  Vec3 operator*(const Vec3& v) const noexcept {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
  }

  Mat3 operator*(const Mat3& o) const noexcept {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
    return r;
  }

  Mat3 transposed() const noexcept {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }

  double determinant() const noexcept {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }

  friend bool operator==(const Mat3&, const Mat3&) = default;
};

inline double dot(const Vec3& a, const Vec3& b) noexcept {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline Vec3 cross(const Vec3& a, const Vec3& b) noexcept {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const Vec3& a) noexcept { return std::sqrt(dot(a, a)); }

inline double distance(const Vec3& a, const Vec3& b) noexcept {
  return norm(Vec3{a[0] - b[0], a[1] - b[1], a[2] - b[2]});
}

inline double deg2rad(double deg) noexcept { return deg * std::numbers::pi / 180.0; }

/// A 3D object as an n x 3 set of points.
///
/// Construction validates finiteness and n >= 1. Use normalize_cloud() to
/// bring raw coordinates onto the unit sphere.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points) : points_(std::move(points)) { validate(); }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  std::span<const Vec3> points() const noexcept { return points_; }
  const Vec3& operator[](std::size_t i) const noexcept { return points_[i]; }

  Vec3 centroid() const noexcept {
    Vec3 c{0, 0, 0};
    for (const auto& p : points_)
      for (int k = 0; k < 3; ++k) c[k] += p[k];
    const double n = static_cast<double>(points_.size());
    for (auto& v : c) v /= n;
    return c;
  }

  double max_norm() const noexcept {
    double r = 0.0;
    for (const auto& p : points_) r = std::max(r, norm(p));
    return r;
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  void validate() const {
    if (points_.empty()) throw DomainError("point cloud must contain at least one point");
    for (std::size_t i = 0; i < points_.size(); ++i)
      for (double v : points_[i])
        if (!std::isfinite(v))
          throw DomainError("point cloud coordinate " + std::to_string(i) + " is not finite");
  }

  std::vector<Vec3> points_;
};

/// Extrinsic x-y-z Euler angles in degrees; R = Rz(gamma) * Ry(beta) * Rx(alpha).
///
/// The angle triple is the canonical state and the matrix is always derived
/// from it.
class Rotation3 {
 public:
  Rotation3() : Rotation3(0.0, 0.0, 0.0) {}
  Rotation3(double alpha, double beta, double gamma);

  static Rotation3 identity() { return {}; }

  const Vec3& angles() const noexcept { return angles_; }
  double alpha() const noexcept { return angles_[0]; }
  double beta() const noexcept { return angles_[1]; }
  double gamma() const noexcept { return angles_[2]; }
  const Mat3& matrix() const noexcept { return matrix_; }

 private:
  Vec3 angles_;
  Mat3 matrix_;
};

inline Mat3 rotation_x(double deg) {
  const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
  Mat3 r = Mat3::identity();
  r(1, 1) = c;
  r(1, 2) = -s;
  r(2, 1) = s;
  r(2, 2) = c;
  return r;
}

inline Mat3 rotation_y(double deg) {
  const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
  Mat3 r = Mat3::identity();
  r(0, 0) = c;
  r(0, 2) = s;
  r(2, 0) = -s;
  r(2, 2) = c;
  return r;
}

inline Mat3 rotation_z(double deg) {
  const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
  Mat3 r = Mat3::identity();
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  return r;
}

// Throws DomainError if any angle lies outside [-180, 180] or is not finite.
inline Mat3 euler_to_matrix(const Vec3& angles) {
  static constexpr const char* kNames[] = {"alpha", "beta", "gamma"};
  for (int k = 0; k < 3; ++k) {
    if (!(angles[k] >= -180.0 && angles[k] <= 180.0))
      throw DomainError(std::string("Euler angle ") + kNames[k] + " = " +
                        std::to_string(angles[k]) + " outside [-180, 180]");
  }
  // Exact zeros keep the identity bit-exact.
  Mat3 r = Mat3::identity();
  if (angles[2] != 0.0) r = rotation_z(angles[2]);
  if (angles[1] != 0.0) r = r * rotation_y(angles[1]);
  if (angles[0] != 0.0) r = r * rotation_x(angles[0]);
  return r;
}

inline Rotation3::Rotation3(double alpha, double beta, double gamma)
    : angles_{alpha, beta, gamma}, matrix_(euler_to_matrix(angles_)) {}

// Each angle independently uniform on [-180, 180], drawn in (alpha, beta, gamma) order.
inline Rotation3 sample_rotation(Rng& rng) {
  const double a = rng.uniform(-180.0, 180.0);
  const double b = rng.uniform(-180.0, 180.0);
  const double g = rng.uniform(-180.0, 180.0);
  return {a, b, g};
}

inline PointCloud transform_points(const PointCloud& cloud, const Mat3& r) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points()) out.push_back(r * p);
  return PointCloud(std::move(out));
}

// M~ = t(M). The identity rotation returns the input unchanged.
inline PointCloud apply_rotation(const PointCloud& cloud, const Rotation3& t) {
  if (t.matrix() == Mat3::identity()) return cloud;
  return transform_points(cloud, t.matrix());
}

// Subtract the centroid and scale so the farthest point has norm 1.
// A cloud with all points identical collapses to the origin with scale 1.
inline PointCloud normalize_cloud(std::span<const Vec3> points) {
  if (points.empty()) throw DomainError("normalize_cloud: empty point set");
  PointCloud raw(std::vector<Vec3>(points.begin(), points.end()));
  const Vec3 c = raw.centroid();
  std::vector<Vec3> out(points.size());
  double r = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[i] = {points[i][0] - c[0], points[i][1] - c[1], points[i][2] - c[2]};
    r = std::max(r, norm(out[i]));
  }
  if (r > 0.0) {
    for (auto& p : out)
      for (auto& v : p) v /= r;
  }
  return PointCloud(std::move(out));
}

}  // namespace mvter
