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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mvter/error.hpp"
#include "mvter/geometry.hpp"
#include "mvter/parallel.hpp"

namespace mvter {

/// Orthographic camera on a sphere around the origin, looking at the origin
/// with world-up +z. The visible volume is the cube of half-width
/// `ortho_half_extent` centered on the origin in camera coordinates.
struct Camera {
  double azimuth = 0.0;    // degrees, measured from +x towards +y
  double elevation = 0.0;  // degrees above the xy-plane
  double ortho_half_extent = 1.2;
  int height = 32;
  int width = 32;

  void validate() const {
    if (height < 8 || width < 8)
      throw DomainError("camera resolution must be at least 8x8, got " + std::to_string(height) +
                        "x" + std::to_string(width));
    if (!(ortho_half_extent > 0.0) || !std::isfinite(ortho_half_extent))
      throw DomainError("camera ortho_half_extent must be positive");
    if (!std::isfinite(azimuth) || !std::isfinite(elevation))
      throw DomainError("camera angles must be finite");
  }
};

struct CameraRig {
  std::vector<Camera> cameras;

  std::size_t size() const noexcept { return cameras.size(); }

  // Ring of `count` cameras with equal azimuth spacing starting at 0.
  static CameraRig ring(int count = 12, double elevation = 30.0, int resolution = 32,
                        double half_extent = 1.2) {
    if (count < 1) throw DomainError("camera rig needs at least one camera");
    CameraRig rig;
    for (int i = 0; i < count; ++i) {
      Camera cam{360.0 * i / count, elevation, half_extent, resolution, resolution};
      cam.validate();
      rig.cameras.push_back(cam);
    }
    return rig;
  }
};

/// Depth-shaded view in [0, 1]; 0 is background, hit pixels lie in [0.25, 1].
struct ViewImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major, row 0 at the top

  ViewImage() = default;
  ViewImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0.0f) {}

  float& at(int r, int c) noexcept { return pixels[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const noexcept { return pixels[static_cast<std::size_t>(r) * width + c]; }

  friend bool operator==(const ViewImage&, const ViewImage&) = default;
};

using ViewSet = std::vector<ViewImage>;

inline constexpr float kDepthShadeFloor = 0.25f;

// Rows are (right, up, forward). forward points from the camera to the origin.
inline Mat3 camera_basis(const Camera& camera) {
  const double el = deg2rad(camera.elevation), az = deg2rad(camera.azimuth);
  if (std::abs(std::cos(el)) < 1e-12)
    throw DomainError("camera elevation of +-90 degrees leaves the up vector undefined");
  const Vec3 position{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  const Vec3 forward{-position[0], -position[1], -position[2]};
  Vec3 right = cross(forward, Vec3{0.0, 0.0, 1.0});
  const double rn = norm(right);
  for (auto& v : right) v /= rn;
  const Vec3 up = cross(right, forward);
  Mat3 basis;
  basis.m = {right, up, forward};
  return basis;
}

/// Orthographic nearest-pixel splat with a z-buffer.
///
/// A point at camera coordinates (x, y, z) lands in column floor((x+h)/(2h)*W)
/// and row floor((h-y)/(2h)*H); z is the depth along forward, and points with
/// |z| > h are culled. Intensity is 1 - 0.75 * (z+h)/(2h), so the nearest
/// possible point shades to 1 and the farthest to 0.25. On equal depth the
/// earlier point wins.
inline ViewImage project(const PointCloud& cloud, const Camera& camera) {
  camera.validate();
  const Mat3 basis = camera_basis(camera);
  const double h = camera.ortho_half_extent;
  ViewImage img(camera.height, camera.width);
  std::vector<double> zbuf(img.pixels.size(), std::numeric_limits<double>::infinity());
  for (const auto& p : cloud.points()) {
    const Vec3 q = basis * p;
    const double u = (q[0] + h) / (2.0 * h) * camera.width;
    const double v = (h - q[1]) / (2.0 * h) * camera.height;
    if (!(u >= 0.0 && u < camera.width && v >= 0.0 && v < camera.height)) continue;
    if (!(q[2] >= -h && q[2] <= h)) continue;
    const int col = static_cast<int>(std::floor(u));
    const int row = static_cast<int>(std::floor(v));
    const std::size_t idx = static_cast<std::size_t>(row) * camera.width + col;
    if (q[2] < zbuf[idx]) {
      zbuf[idx] = q[2];
      const double depth01 = (q[2] + h) / (2.0 * h);
      img.pixels[idx] = static_cast<float>(1.0 - (1.0 - kDepthShadeFloor) * depth01);
    }
  }
  return img;
}

// views[i] = project(cloud, rig.cameras[i]); order fixed by the rig.
inline ViewSet render_views(const PointCloud& cloud, const CameraRig& rig, int threads = 1) {
  if (rig.cameras.empty()) throw DomainError("render_views: empty camera rig");
  ViewSet views(rig.size());
  parallel_for(rig.size(), threads, [&](std::size_t i) { views[i] = project(cloud, rig.cameras[i]); });
  return views;
}

// Binary PGM (P5), 8 bits per pixel, value round(v * 255) with v clamped to [0, 1].
inline void write_pgm(const std::filesystem::path& path, int height, int width,
                      std::span<const float> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(static_cast<double>(values[i]), 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline void write_pgm(const std::filesystem::path& path, const ViewImage& view) {
  write_pgm(path, view.height, view.width, view.pixels);
}

// Reads back a P5 file written by write_pgm; values are returned as bytes.
inline std::vector<unsigned char> read_pgm(const std::filesystem::path& path, int& height,
                                           int& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255 || width <= 0 || height <= 0)
    throw FormatError(path.string() + ": not an 8-bit P5 PGM");
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw FormatError(path.string() + ": truncated pixel data");
  return bytes;
}

}  // namespace mvter
