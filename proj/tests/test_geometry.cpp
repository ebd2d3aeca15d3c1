#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "uvl/geometry.hpp"

using namespace uvl;

namespace {

PointCloud random_cloud(int n, std::mt19937_64& rng, bool labels = false) {
  std::uniform_real_distribution<double> pos(-2.0, 2.0), col(0.0, 1.0);
  PointCloud pc;
  for (int i = 0; i < n; ++i) {
    pc.positions.push_back({pos(rng), pos(rng), pos(rng)});
    pc.colors.push_back({col(rng), col(rng), col(rng)});
    if (labels) {
      pc.semantic.push_back(i % 3);
      pc.instance.push_back(i % 5);
    }
  }
  return pc;
}

}  // namespace

TEST_CASE("two points in one cell average their colors") {
  PointCloud pc;
  pc.positions = {{0.005, 0, 0}, {0.015, 0, 0}};
  pc.colors = {{1, 0, 0}, {0, 0, 1}};
  VoxelGrid g = voxelize(pc, 0.02);
  REQUIRE(g.size() == 1);
  CHECK(g.coords[0] == IVec3{0, 0, 0});
  CHECK(g.features[0][0] == doctest::Approx(0.5));
  CHECK(g.features[0][1] == doctest::Approx(0.0));
  CHECK(g.features[0][2] == doctest::Approx(0.5));
  CHECK(g.point_to_voxel == std::vector<int>{0, 0});
}

TEST_CASE("voxelize contract on random clouds") {
  std::mt19937_64 rng(5);
  PointCloud pc = random_cloud(1000, rng);
  VoxelGrid g = voxelize(pc, 0.05);

  // coords unique + sorted, every point maps to its floor cell
  for (int v = 1; v < g.size(); ++v) CHECK(g.coords[v - 1] < g.coords[v]);
  for (int i = 0; i < pc.size(); ++i) {
    const IVec3& c = g.coords[g.point_to_voxel[i]];
    for (int d = 0; d < 3; ++d)
      CHECK(c[d] == static_cast<std::int64_t>(std::floor(pc.positions[i][d] / 0.05)));
  }

  // feature conservation per channel
  for (int d = 0; d < 3; ++d) {
    double voxel_mass = 0, point_mass = 0;
    for (int v = 0; v < g.size(); ++v) voxel_mass += g.features[v][d] * g.point_count[v];
    for (int i = 0; i < pc.size(); ++i) point_mass += pc.colors[i][d];
    CHECK(std::abs(voxel_mass - point_mass) < 1e-9);
  }

  // halving voxel size never decreases voxel count
  CHECK(voxelize(pc, 0.025).size() >= g.size());

  // re-voxelizing the voxel centers reproduces the coordinate set
  PointCloud centers;
  for (int v = 0; v < g.size(); ++v) {
    centers.positions.push_back({(g.coords[v][0] + 0.5) * 0.05,
                                 (g.coords[v][1] + 0.5) * 0.05,
                                 (g.coords[v][2] + 0.5) * 0.05});
    centers.colors.push_back(g.features[v]);
  }
  VoxelGrid g2 = voxelize(centers, 0.05);
  CHECK(g2.coords == g.coords);
}

TEST_CASE("majority labels") {
  PointCloud pc;
  for (int i = 0; i < 5; ++i) {
    pc.positions.push_back({0.001 * i, 0, 0});
    pc.colors.push_back({0.5, 0.5, 0.5});
  }
  pc.semantic = {2, 2, 2, 1, 1};
  pc.instance = {4, 4, 7, 7, 1};  // tie between 4 and 7 -> smaller id
  VoxelGrid g = voxelize(pc, 1.0);
  REQUIRE(g.size() == 1);
  CHECK(g.semantic[0] == 2);
  CHECK(g.instance[0] == 4);
}

TEST_CASE("voxelize rejects empty input") {
  CHECK_THROWS_AS(voxelize(PointCloud{}, 0.02), InputError);
}

TEST_CASE("augment: disabled config is the identity") {
  std::mt19937_64 rng(1);
  PointCloud pc = random_cloud(64, rng, true);
  std::mt19937_64 arng(2);
  PointCloud out = augment(pc, AugmentConfig{}, arng);
  CHECK(out.positions == pc.positions);
  CHECK(out.colors == pc.colors);
  CHECK(out.semantic == pc.semantic);
  CHECK(out.instance == pc.instance);
}

TEST_CASE("augment: flip with the same decision is an involution") {
  std::mt19937_64 rng(3);
  PointCloud pc = random_cloud(32, rng);
  AugmentConfig cfg;
  cfg.flip_x = true;
  std::mt19937_64 a(7), b(7);
  PointCloud once = augment(pc, cfg, a);
  PointCloud twice = augment(once, cfg, b);
  for (int i = 0; i < pc.size(); ++i)
    for (int d = 0; d < 3; ++d)
      CHECK(twice.positions[i][d] == doctest::Approx(pc.positions[i][d]).epsilon(1e-12));
}

TEST_CASE("augment: z-rotation is an isometry, labels pass through") {
  std::mt19937_64 rng(9);
  PointCloud pc = random_cloud(48, rng, true);
  AugmentConfig cfg;
  cfg.z_rotation = true;
  std::mt19937_64 arng(11);
  PointCloud out = augment(pc, cfg, arng);
  CHECK(out.size() == pc.size());
  CHECK(out.semantic == pc.semantic);
  CHECK(out.instance == pc.instance);
  for (int i = 0; i < 20; ++i)
    for (int j = i + 1; j < 20; ++j) {
      auto dist = [](const Vec3& a, const Vec3& b) {
        double s = 0;
        for (int d = 0; d < 3; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
        return std::sqrt(s);
      };
      CHECK(std::abs(dist(out.positions[i], out.positions[j]) -
                     dist(pc.positions[i], pc.positions[j])) < 1e-9);
    }
}

TEST_CASE("augment: colors stay in range") {
  std::mt19937_64 rng(13);
  PointCloud pc = random_cloud(128, rng);
  AugmentConfig cfg;
  cfg.color_jitter = cfg.brightness = cfg.contrast = true;
  std::mt19937_64 arng(17);
  PointCloud out = augment(pc, cfg, arng);
  for (const auto& c : out.colors)
    for (double x : c) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
}

TEST_CASE("UPC round trip is bit-exact") {
  std::mt19937_64 rng(23);
  PointCloud pc = random_cloud(256, rng, true);
  std::stringstream ss;
  write_upc(pc, ss);
  PointCloud back = parse_upc(ss, "<mem>");
  CHECK(back.positions == pc.positions);
  CHECK(back.colors == pc.colors);
  CHECK(back.semantic == pc.semantic);
  CHECK(back.instance == pc.instance);
}

TEST_CASE("UPC parse errors carry line numbers") {
  {
    std::stringstream ss("UPC 1 1 xyzrgb\n0 0 0 1 1 1\n");
    PointCloud pc = parse_upc(ss, "<mem>");
    CHECK(pc.size() == 1);
  }
  {
    std::stringstream ss("UPC 1 5 xyzrgb\n0 0 0 1 1 1\n0 0 0 1 1 1\n0 0 0 1 1 1\n0 0 0 1 1 1\n");
    CHECK_THROWS_WITH_AS(parse_upc(ss, "<mem>"),
                         doctest::Contains("<mem>:6"), ParseError);
  }
  {
    std::stringstream ss("UPX 1 1 xyzrgb\n0 0 0 1 1 1\n");
    CHECK_THROWS_AS(parse_upc(ss, "<mem>"), ParseError);
  }
}
