#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "videopose/error.hpp"
#include "videopose/objects.hpp"

using namespace vp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / ("vp_objects_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path &p, const std::string &text) {
  fs::create_directories(p.parent_path());
  std::ofstream{p} << text;
}

}  // namespace

TEST_CASE("built-in models") {
  const ObjectModel cube = make_cube("cube", 1.0);
  CHECK(cube.points.size() == 8);
  CHECK(cube.diameter == doctest::Approx(std::sqrt(3.0)));
  const ObjectModel sampled = make_cube("cube", 1.0, 120);
  CHECK(sampled.points.size() == 128);
  for (const auto &p : sampled.points) CHECK(p.cwiseAbs().maxCoeff() == doctest::Approx(0.5));
  const ObjectModel pyr = make_pyramid("pyr", 0.1, 0.1, 50);
  // Base sits a quarter of the height below the origin (solid centroid).
  CHECK(pyr.points[0].z() == doctest::Approx(-0.025));
  const ObjectModel cyl = make_cylinder("cyl", 0.05, 0.2, 100);
  CHECK(cyl.symmetric);
  for (const auto &p : cyl.points) CHECK(p.head<2>().norm() == doctest::Approx(0.05));
  CHECK_THROWS_AS(make_builtin("x", "torus", 1.0, false, 0), Error);
}

TEST_CASE("diameter is the maximum pairwise distance") {
  std::mt19937_64 rng{1};
  std::uniform_real_distribution<double> u{-1, 1};
  std::vector<Vec3> pts;
  for (int i = 0; i < 60; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  double best = 0.0;
  for (const auto &a : pts)
    for (const auto &b : pts) best = std::max(best, (a - b).norm());
  CHECK(ObjectModel::from_points("r", pts, false).diameter == doctest::Approx(best).epsilon(1e-12));
  CHECK_THROWS_AS(ObjectModel::from_points("e", {}, false), Error);
}

TEST_CASE("subsample_points") {
  const ObjectModel cube = make_cube("cube", 1.0);
  SUBCASE("count >= m returns the same points") {
    CHECK(subsample_points(cube, 8, 3).points == cube.points);
    CHECK(subsample_points(cube, 100, 3).points == cube.points);
  }
  SUBCASE("deterministic per seed") {
    const auto a = subsample_points(make_cube("c", 1.0, 200), 50, 11);
    const auto b = subsample_points(make_cube("c", 1.0, 200), 50, 11);
    CHECK(a.points == b.points);
    const auto c = subsample_points(make_cube("c", 1.0, 200), 50, 12);
    CHECK(a.points != c.points);
  }
  SUBCASE("pinned subset of cube corners") {
    const auto s = subsample_points(cube, 4, 7);
    REQUIRE(s.points.size() == 4);
    // Corner i has coordinates (+-0.5) selected by bits (x: 1, y: 2, z: 4).
    const std::vector<int> expected{2, 4, 5, 7};
    for (std::size_t i = 0; i < 4; ++i) CHECK(s.points[i] == cube.points[expected[i]]);
  }
  SUBCASE("subsampled diameter never exceeds the full diameter") {
    const ObjectModel dense = make_cube("c", 0.3, 300);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto s = subsample_points(dense, 30, seed);
      CHECK(s.diameter <= dense.diameter + 1e-12);
      CHECK(s.diameter == doctest::Approx(max_pairwise_distance(s.points)));
    }
  }
  CHECK_THROWS_AS(subsample_points(cube, 0, 1), Error);
}

TEST_CASE("load_registry") {
  SUBCASE("three objects in manifest order") {
    const fs::path dir = fresh_dir("three");
    write(dir / "models/a.xyz", "0 0 0\n1 0 0\n");
    write(dir / "models/bowl.xyz", "# comment\n0 0 0\n0 2 0\n");
    write(dir / "models/c.xyz", "0 0 0\n");
    write(dir / "objects.json", R"({"objects": [
      {"id": "c", "file": "models/c.xyz", "symmetric": false},
      {"id": "bowl", "file": "models/bowl.xyz", "symmetric": true},
      {"id": "a", "file": "models/a.xyz"}]})");
    const ObjectRegistry reg = load_registry(dir);
    CHECK(reg.size() == 3);
    CHECK(*reg.index_of("c") == 0);
    CHECK(*reg.index_of("bowl") == 1);
    CHECK(*reg.index_of("a") == 2);
    CHECK(reg.by_id("bowl").symmetric);
    CHECK_FALSE(reg.by_id("a").symmetric);
    CHECK(reg.by_id("bowl").diameter == doctest::Approx(2.0));
    CHECK(load_registry(dir).serialize() == reg.serialize());
    CHECK(load_registry(dir).hash() == reg.hash());
  }
  SUBCASE("missing manifest") {
    const fs::path dir = fresh_dir("missing");
    CHECK_THROWS_WITH_AS(load_registry(dir), doctest::Contains("objects.json"), Error);
  }
  SUBCASE("duplicate id names the entry") {
    const fs::path dir = fresh_dir("dup");
    write(dir / "models/a.xyz", "0 0 0\n");
    write(dir / "objects.json", R"({"objects": [{"id": "a"}, {"id": "a"}]})");
    CHECK_THROWS_WITH_AS(load_registry(dir), doctest::Contains("'a'"), Error);
  }
  SUBCASE("empty point set names the entry") {
    const fs::path dir = fresh_dir("empty");
    write(dir / "models/hole.xyz", "\n");
    write(dir / "objects.json", R"({"objects": [{"id": "hole"}]})");
    CHECK_THROWS_WITH_AS(load_registry(dir), doctest::Contains("hole"), Error);
  }
  SUBCASE("save/load keeps order, flags and points") {
    const fs::path dir = fresh_dir("save");
    const ObjectRegistry reg{{make_cube("cube", 0.1, 10), make_cylinder("can", 0.03, 0.1, 40),
                              make_pyramid("pyr", 0.1, 0.1, 5)}};
    save_registry(reg, dir);
    const ObjectRegistry back = load_registry(dir);
    CHECK(back.serialize() == reg.serialize());
    CHECK(back.by_id("can").points == reg.by_id("can").points);
    CHECK(back.by_id("pyr").shape == "pyramid");
  }
}
