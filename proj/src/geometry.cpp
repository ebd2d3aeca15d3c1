#include "uvl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace uvl {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

struct IVec3Hash {
  size_t operator()(const IVec3& c) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int64_t v : c) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

// Majority vote, ties broken by smallest label id.
int majority_label(const std::vector<int>& labels) {
  std::map<int, int> counts;
  for (int l : labels) counts[l]++;
  int best = labels.front(), best_count = 0;
  for (auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

void rotate(std::vector<Vec3>& pos, int axis, double theta) {
  double c = std::cos(theta), s = std::sin(theta);
  int i = (axis + 1) % 3, j = (axis + 2) % 3;
  for (auto& p : pos) {
    double a = p[i], b = p[j];
    p[i] = c * a - s * b;
    p[j] = s * a + c * b;
  }
}

}  // namespace

void PointCloud::validate() const {
  if (positions.empty()) throw InputError("point cloud is empty");
  if (colors.size() != positions.size())
    throw InputError("point cloud: color count does not match position count");
  if (!semantic.empty() && semantic.size() != positions.size())
    throw InputError("point cloud: semantic label count mismatch");
  if (!instance.empty() && instance.size() != positions.size())
    throw InputError("point cloud: instance label count mismatch");
}

VoxelGrid voxelize(const PointCloud& pc, double voxel_size) {
  pc.validate();
  if (voxel_size <= 0.0) throw InputError("voxelize: voxel_size must be positive");

  const int n = pc.size();
  std::vector<IVec3> cell(n);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d)
      cell[i][d] = static_cast<std::int64_t>(std::floor(pc.positions[i][d] / voxel_size));

  // Unique cells in lexicographic order, then a deterministic index map.
  std::vector<IVec3> coords = cell;
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  std::unordered_map<IVec3, int, IVec3Hash> index;
  index.reserve(coords.size());
  for (size_t v = 0; v < coords.size(); ++v) index[coords[v]] = static_cast<int>(v);

  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.coords = std::move(coords);
  const int m = grid.size();
  grid.features.assign(m, {0, 0, 0});
  grid.point_count.assign(m, 0);
  grid.point_to_voxel.resize(n);
  std::vector<std::vector<int>> sem_votes, inst_votes;
  if (pc.has_semantic()) sem_votes.resize(m);
  if (pc.has_instance()) inst_votes.resize(m);

  for (int i = 0; i < n; ++i) {
    int v = index[cell[i]];
    grid.point_to_voxel[i] = v;
    grid.point_count[v]++;
    for (int d = 0; d < 3; ++d) grid.features[v][d] += clamp01(pc.colors[i][d]);
    if (pc.has_semantic()) sem_votes[v].push_back(pc.semantic[i]);
    if (pc.has_instance()) inst_votes[v].push_back(pc.instance[i]);
  }
  for (int v = 0; v < m; ++v)
    for (int d = 0; d < 3; ++d) grid.features[v][d] /= grid.point_count[v];
  if (pc.has_semantic()) {
    grid.semantic.resize(m);
    for (int v = 0; v < m; ++v) grid.semantic[v] = majority_label(sem_votes[v]);
  }
  if (pc.has_instance()) {
    grid.instance.resize(m);
    for (int v = 0; v < m; ++v) grid.instance[v] = majority_label(inst_votes[v]);
  }
  return grid;
}

PointCloud augment(const PointCloud& pc, const AugmentConfig& cfg, std::mt19937_64& rng) {
  pc.validate();
  PointCloud out = pc;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (cfg.flip_x && unit(rng) < 0.5)
    for (auto& p : out.positions) p[0] = -p[0];
  if (cfg.flip_y && unit(rng) < 0.5)
    for (auto& p : out.positions) p[1] = -p[1];
  if (cfg.rotate_xyz) {
    for (int axis = 0; axis < 3; ++axis) {
      double theta = unit(rng) * 2.0 * M_PI;
      rotate(out.positions, axis, theta);
    }
  }
  if (cfg.uniform_scale) {
    double f = 0.8 + 0.4 * unit(rng);
    for (auto& p : out.positions)
      for (double& x : p) x *= f;
  }
  if (cfg.z_rotation) {
    double theta = -M_PI / 2 + M_PI * unit(rng);
    rotate(out.positions, 2, theta);
  }
  if (cfg.color_jitter) {
    for (auto& c : out.colors)
      for (double& x : c)
        x = clamp01(x + (2.0 * unit(rng) - 1.0) * cfg.jitter_range);
  }
  if (cfg.brightness) {
    double f = cfg.brightness_lo + (cfg.brightness_hi - cfg.brightness_lo) * unit(rng);
    for (auto& c : out.colors)
      for (double& x : c) x = clamp01(x * f);
  }
  if (cfg.contrast) {
    double f = cfg.contrast_lo + (cfg.contrast_hi - cfg.contrast_lo) * unit(rng);
    Vec3 mean = {0, 0, 0};
    for (auto& c : out.colors)
      for (int d = 0; d < 3; ++d) mean[d] += c[d];
    for (int d = 0; d < 3; ++d) mean[d] /= out.size();
    for (auto& c : out.colors)
      for (int d = 0; d < 3; ++d) c[d] = clamp01((c[d] - mean[d]) * f + mean[d]);
  }
  return out;
}

PointCloud parse_upc(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(origin + ":1: missing UPC header");
  std::istringstream hdr(line);
  std::string magic, flags;
  int version = 0;
  long long n = 0;
  if (!(hdr >> magic >> version >> n >> flags) || magic != "UPC")
    throw ParseError(origin + ":1: malformed UPC header");
  if (version != 1) throw ParseError(origin + ":1: unsupported UPC version");
  if (n < 1) throw ParseError(origin + ":1: point count must be >= 1");

  int fields;
  bool sem = false, inst = false;
  if (flags == "xyzrgb") {
    fields = 6;
  } else if (flags == "xyzrgb+sem") {
    fields = 7;
    sem = true;
  } else if (flags == "xyzrgb+sem+inst") {
    fields = 8;
    sem = true;
    inst = true;
  } else {
    throw ParseError(origin + ":1: unknown flags '" + flags + "'");
  }

  PointCloud pc;
  pc.positions.reserve(n);
  pc.colors.reserve(n);
  for (long long i = 0; i < n; ++i) {
    int line_no = static_cast<int>(i) + 2;
    if (!std::getline(in, line))
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(n) + " rows, file ends after " +
                       std::to_string(i));
    std::istringstream row(line);
    Vec3 p, c;
    if (!(row >> p[0] >> p[1] >> p[2] >> c[0] >> c[1] >> c[2]))
      throw ParseError(origin + ":" + std::to_string(line_no) + ": malformed row");
    pc.positions.push_back(p);
    pc.colors.push_back({clamp01(c[0]), clamp01(c[1]), clamp01(c[2])});
    if (sem) {
      int s;
      if (!(row >> s))
        throw ParseError(origin + ":" + std::to_string(line_no) +
                         ": missing semantic label");
      pc.semantic.push_back(s);
    }
    if (inst) {
      int s;
      if (!(row >> s))
        throw ParseError(origin + ":" + std::to_string(line_no) +
                         ": missing instance label");
      pc.instance.push_back(s);
    }
    (void)fields;
  }
  return pc;
}

void write_upc(const PointCloud& pc, std::ostream& out) {
  pc.validate();
  std::string flags = "xyzrgb";
  if (pc.has_semantic() && pc.has_instance())
    flags = "xyzrgb+sem+inst";
  else if (pc.has_semantic())
    flags = "xyzrgb+sem";
  else if (pc.has_instance())
    throw InputError("UPC format requires semantic labels when instance labels present");

  out << "UPC 1 " << pc.size() << " " << flags << "\n";
  char buf[32];
  for (int i = 0; i < pc.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", pc.positions[i][d]);
      out << (d ? " " : "") << buf;
    }
    for (int d = 0; d < 3; ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", pc.colors[i][d]);
      out << " " << buf;
    }
    if (pc.has_semantic()) out << " " << pc.semantic[i];
    if (pc.has_instance()) out << " " << pc.instance[i];
    out << "\n";
  }
}

PointCloud load_pointcloud(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open point cloud file: " + path);
  return parse_upc(f, path);
}

void save_pointcloud(const PointCloud& pc, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write point cloud file: " + path);
  write_upc(pc, f);
}

}  // namespace uvl
