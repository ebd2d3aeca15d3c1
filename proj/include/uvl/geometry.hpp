#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "uvl/tensor.hpp"

namespace uvl {

using Vec3 = std::array<double, 3>;
using IVec3 = std::array<std::int64_t, 3>;

// Colored point cloud, optionally labeled per point.
struct PointCloud {
  std::vector<Vec3> positions;  // meters
  std::vector<Vec3> colors;     // clamped to [0,1]
  std::vector<int> semantic;    // empty or size N
  std::vector<int> instance;    // empty or size N

  int size() const { return static_cast<int>(positions.size()); }
  bool has_semantic() const { return !semantic.empty(); }
  bool has_instance() const { return !instance.empty(); }
  void validate() const;
};

// Quantized cloud: unique integer cells with mean-RGB features, voxels
// ordered lexicographically by coordinate.
struct VoxelGrid {
  double voxel_size = 0.0;
  std::vector<IVec3> coords;              // M x 3, unique, sorted
  std::vector<std::array<double, 3>> features;  // mean RGB per voxel
  std::vector<int> point_to_voxel;        // N indices into [0, M)
  std::vector<int> point_count;           // points per voxel
  std::vector<int> semantic;              // majority label, empty if unlabeled
  std::vector<int> instance;

  int size() const { return static_cast<int>(coords.size()); }
};

VoxelGrid voxelize(const PointCloud& pc, double voxel_size);

struct AugmentConfig {
  bool flip_x = false;
  bool flip_y = false;
  bool rotate_xyz = false;
  bool color_jitter = false;
  bool brightness = false;
  bool contrast = false;
  // shape-retrieval preset extras
  bool uniform_scale = false;    // factor in [0.8, 1.2]
  bool z_rotation = false;       // angle in [-pi/2, pi/2]

  double jitter_range = 0.05;
  double brightness_lo = 0.8, brightness_hi = 1.2;
  double contrast_lo = 0.8, contrast_hi = 1.2;
};

PointCloud augment(const PointCloud& pc, const AugmentConfig& cfg, std::mt19937_64& rng);

// UPC v1 text format:
//   UPC 1 <N> <flags>        flags: xyzrgb | xyzrgb+sem | xyzrgb+sem+inst
// followed by N whitespace-separated rows, floats at 17 significant digits.
PointCloud load_pointcloud(const std::string& path);
void save_pointcloud(const PointCloud& pc, const std::string& path);
PointCloud parse_upc(std::istream& in, const std::string& origin);
void write_upc(const PointCloud& pc, std::ostream& out);

}  // namespace uvl
