#include "uvl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace uvl {

const std::vector<std::string> kShapeNames = {"box", "sphere", "plane", "cylinder"};
const std::vector<std::string> kColorNames = {"red",    "green",  "blue",   "yellow",
                                              "purple", "orange", "cyan",   "white"};

Vec3 color_value(int color_id) {
  static const Vec3 values[] = {
      {0.9, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.2, 0.9}, {0.9, 0.9, 0.1},
      {0.6, 0.1, 0.8}, {0.95, 0.55, 0.1}, {0.1, 0.85, 0.85}, {0.95, 0.95, 0.95}};
  if (color_id < 0 || color_id >= static_cast<int>(kColorNames.size()))
    throw InputError("color_value: color id out of range");
  return values[color_id];
}

namespace {

constexpr double kTau = 6.283185307179586;

// One point inside the given primitive, centered at the origin.
Vec3 sample_shape_point(int shape, std::mt19937_64& rng, double size) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  switch (shape) {
    case 0:  // box: uniform volume, half-extent `size`
      return {size * u(rng), size * u(rng), size * u(rng)};
    case 1: {  // sphere: uniform in the ball of radius `size`
      while (true) {
        Vec3 p = {u(rng), u(rng), u(rng)};
        if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0)
          return {size * p[0], size * p[1], size * p[2]};
      }
    }
    case 2:  // plane: thin horizontal slab, half-extent 1.4*size in x/y
      return {1.4 * size * u(rng), 1.4 * size * u(rng), 0.01 * u(rng)};
    case 3: {  // cylinder: vertical, radius 0.7*size, half-height 1.2*size
      double r = 0.7 * size * std::sqrt(u01(rng));
      double a = kTau * u01(rng);
      return {r * std::cos(a), r * std::sin(a), 1.2 * size * u(rng)};
    }
    default:
      throw InputError("sample_shape_point: unknown shape class");
  }
}

std::string describe(int color, int shape) {
  return kColorNames[color] + " " + kShapeNames[shape];
}

}  // namespace

std::vector<SceneSample> generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.num_scenes < 1) throw InputError("generate_dataset: need at least one scene");
  if (spec.points_per_instance < 20)
    throw InputError("generate_dataset: every instance needs >= 20 points");
  if (spec.min_instances < 1 || spec.max_instances < spec.min_instances ||
      spec.max_instances > 4)
    throw InputError("generate_dataset: instance count range must be within [1,4]");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<SceneSample> scenes;
  scenes.reserve(spec.num_scenes);

  for (int s = 0; s < spec.num_scenes; ++s) {
    SceneSample sample;
    int count = spec.single_shape
                    ? 1
                    : spec.min_instances +
                          static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                       spec.max_instances -
                                                       spec.min_instances + 1));

    // distinct colors and placement cells (2x2 grid in x/y)
    std::vector<int> colors(kColorNames.size());
    for (size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<int>(i);
    std::shuffle(colors.begin(), colors.end(), rng);
    std::vector<int> cells = {0, 1, 2, 3};
    std::shuffle(cells.begin(), cells.end(), rng);

    std::vector<int> shapes(count);
    for (int i = 0; i < count; ++i) {
      // cycle classes so every scene mixes shapes; offset varies by scene
      shapes[i] = static_cast<int>((rng() + i) % kShapeNames.size());
      int cell = cells[i];
      double cx = 0.25 + 0.5 * (cell % 2) + 0.04 * (u01(rng) - 0.5);
      double cy = 0.25 + 0.5 * (cell / 2) + 0.04 * (u01(rng) - 0.5);
      double cz = 0.3 + 0.25 * u01(rng);
      double size = 0.10 + 0.06 * u01(rng);

      Vec3 col = color_value(colors[i]);
      for (int p = 0; p < spec.points_per_instance; ++p) {
        Vec3 d = sample_shape_point(shapes[i], rng, size);
        sample.cloud.positions.push_back({cx + d[0], cy + d[1], cz + d[2]});
        sample.cloud.colors.push_back(col);
        sample.cloud.semantic.push_back(shapes[i]);
        sample.cloud.instance.push_back(i);
      }
    }
    sample.cloud.validate();

    // caption lists every object in placement order
    std::string caption = "a scene with";
    if (spec.single_shape) {
      caption = "a " + describe(colors[0], shapes[0]);
    } else {
      for (int i = 0; i < count; ++i)
        caption += (i == 0 ? " a " : " and a ") + describe(colors[i], shapes[i]);
    }
    sample.caption = caption;

    int num_ref = spec.single_shape ? 1 : spec.referrals_per_scene;
    for (int r = 0; r < num_ref; ++r) {
      int target = r % count;
      sample.referrals.push_back(
          {"the " + describe(colors[target], shapes[target]), target});
    }
    scenes.push_back(std::move(sample));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
  out << "MANIFEST 1 " << entries.size() << "\n";
  for (const auto& e : entries) {
    out << "SCENE " << e.file << "\n";
    out << "CAPTION " << e.caption << "\n";
    for (const auto& r : e.referrals)
      out << "REFERRAL " << r.instance_id << " " << r.sentence << "\n";
    out << "END\n";
  }
}

std::vector<ManifestEntry> read_manifest(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(origin + ": empty manifest");
  std::istringstream head(line);
  std::string magic;
  int version = 0;
  size_t count = 0;
  if (!(head >> magic >> version >> count) || magic != "MANIFEST" || version != 1)
    throw ParseError(origin + ":1: bad manifest header");

  std::vector<ManifestEntry> entries;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string where = origin + ":" + std::to_string(lineno);
    if (line.rfind("SCENE ", 0) != 0) throw ParseError(where + ": expected SCENE");
    ManifestEntry e;
    e.file = line.substr(6);
    bool closed = false;
    while (std::getline(in, line)) {
      ++lineno;
      where = origin + ":" + std::to_string(lineno);
      if (line == "END") {
        closed = true;
        break;
      }
      if (line.rfind("CAPTION ", 0) == 0) {
        e.caption = line.substr(8);
      } else if (line.rfind("REFERRAL ", 0) == 0) {
        std::istringstream rs(line.substr(9));
        Referral r;
        if (!(rs >> r.instance_id)) throw ParseError(where + ": bad referral");
        std::getline(rs, r.sentence);
        size_t a = r.sentence.find_first_not_of(' ');
        r.sentence = a == std::string::npos ? "" : r.sentence.substr(a);
        if (r.sentence.empty()) throw ParseError(where + ": empty referral sentence");
        e.referrals.push_back(std::move(r));
      } else {
        throw ParseError(where + ": unexpected manifest line");
      }
    }
    if (!closed) throw ParseError(origin + ": unterminated scene block");
    entries.push_back(std::move(e));
  }
  if (entries.size() != count)
    throw ParseError(origin + ": scene count does not match header");
  return entries;
}

std::string save_dataset(const std::vector<SceneSample>& scenes, const std::string& dir,
                         const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (size_t i = 0; i < scenes.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03zu.upc", prefix.c_str(), i);
    save_pointcloud(scenes[i].cloud, dir + "/" + name);
    ManifestEntry e;
    e.file = name;
    e.caption = scenes[i].caption;
    e.referrals = scenes[i].referrals;
    entries.push_back(std::move(e));
  }
  std::string manifest_path = dir + "/" + prefix + "_manifest.txt";
  std::ofstream out(manifest_path);
  if (!out) throw InputError("cannot write manifest: " + manifest_path);
  write_manifest(out, entries);
  return manifest_path;
}

std::vector<SceneSample> load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw InputError("cannot open manifest: " + manifest_path);
  auto entries = read_manifest(in, manifest_path);
  std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<SceneSample> scenes;
  for (const auto& e : entries) {
    SceneSample s;
    s.cloud = load_pointcloud((base / e.file).string());
    s.caption = e.caption;
    s.referrals = e.referrals;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// voxel ground truth
// ---------------------------------------------------------------------------

GroundTruthInstances voxel_instances(const VoxelGrid& grid) {
  if (grid.instance.empty() || grid.semantic.empty())
    throw InputError("voxel_instances: grid is unlabeled");
  // instance id -> (class vote counts, mask)
  std::map<int, std::map<int, int>> votes;
  for (int v = 0; v < grid.size(); ++v) {
    int id = grid.instance[v];
    if (id < 0) continue;
    votes[id][grid.semantic[v]]++;
  }
  GroundTruthInstances gt;
  for (const auto& [id, classes] : votes) {
    int best_class = classes.begin()->first;
    int best_count = classes.begin()->second;
    for (const auto& [cls, cnt] : classes)
      if (cnt > best_count) {
        best_class = cls;
        best_count = cnt;
      }
    gt.classes.push_back(best_class);
    std::vector<double> mask(grid.size(), 0.0);
    for (int v = 0; v < grid.size(); ++v)
      if (grid.instance[v] == id) mask[v] = 1.0;
    gt.masks.push_back(std::move(mask));
  }
  return gt;
}

GroundTruthInstances semantic_instances(const VoxelGrid& grid) {
  if (grid.semantic.empty()) throw InputError("semantic_instances: grid is unlabeled");
  std::map<int, std::vector<double>> by_class;
  for (int v = 0; v < grid.size(); ++v) {
    auto& mask = by_class[grid.semantic[v]];
    if (mask.empty()) mask.assign(grid.size(), 0.0);
    mask[v] = 1.0;
  }
  GroundTruthInstances gt;
  for (auto& [cls, mask] : by_class) {
    gt.classes.push_back(cls);
    gt.masks.push_back(std::move(mask));
  }
  return gt;
}

std::vector<std::uint8_t> instance_voxel_mask(const VoxelGrid& grid, int instance_id) {
  if (grid.instance.empty()) throw InputError("instance_voxel_mask: grid is unlabeled");
  std::vector<std::uint8_t> mask(grid.size(), 0);
  for (int v = 0; v < grid.size(); ++v)
    if (grid.instance[v] == instance_id) mask[v] = 1;
  return mask;
}

}  // namespace uvl
