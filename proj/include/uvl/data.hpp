#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "uvl/geometry.hpp"
#include "uvl/router.hpp"

namespace uvl {

// The four parametric shape classes; class id = index. The background class
// used by the classification head is kShapeNames.size().
extern const std::vector<std::string> kShapeNames;
// Color palette; every instance in a scene gets a distinct color so that
// "the <color> <shape>" referrals resolve uniquely.
extern const std::vector<std::string> kColorNames;
Vec3 color_value(int color_id);

struct Referral {
  std::string sentence;
  int instance_id = 0;
};

struct SceneSample {
  PointCloud cloud;  // labeled: semantic = shape class, instance = object id
  std::string caption;
  std::vector<Referral> referrals;
};

struct DatasetSpec {
  int num_scenes = 8;
  int min_instances = 2;
  int max_instances = 4;
  int points_per_instance = 96;  // must stay >= 20
  int referrals_per_scene = 2;
  bool single_shape = false;  // one object per scene (caption/retrieval sets)
};

// Deterministic per seed: same spec + seed give identical samples.
std::vector<SceneSample> generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

// ---- manifest ----
struct ManifestEntry {
  std::string file;  // UPC path relative to the manifest
  std::string caption;
  std::vector<Referral> referrals;
};

void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(std::istream& in, const std::string& origin);

// Writes <prefix>_NNN.upc files plus <prefix>_manifest.txt under dir.
// Returns the manifest path.
std::string save_dataset(const std::vector<SceneSample>& scenes, const std::string& dir,
                         const std::string& prefix);
std::vector<SceneSample> load_dataset(const std::string& manifest_path);

// ---- voxel-level ground truth ----
// One GT instance per distinct instance label (ascending id); class = that
// instance's majority semantic label over voxels.
GroundTruthInstances voxel_instances(const VoxelGrid& grid);
// One GT "instance" per semantic class present (masks merge all objects of
// the class), for routing semantic segmentation through the mask head.
GroundTruthInstances semantic_instances(const VoxelGrid& grid);
std::vector<std::uint8_t> instance_voxel_mask(const VoxelGrid& grid, int instance_id);

}  // namespace uvl
