#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "videopose_cli_test";

int run(const std::string &args) {
  fs::create_directories(kWork);
  const std::string cmd = std::string{"\""} + VIDEOPOSE_CLI + "\" " + args + " > \"" +
                          (kWork / "out.log").string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

std::string slurp(const fs::path &p) {
  std::ifstream in{p, std::ios::binary};
  return {std::istreambuf_iterator<char>{in}, {}};
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen --spec /nonexistent/spec.json --out " + (kWork / "x").string()) == 2);
  CHECK(run("eval --checkpoint /nonexistent.ckpt --dataset /nonexistent --out " + (kWork / "e").string()) == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("gen is seeded") {
  std::ofstream{kWork / "spec.json"} << R"({"videos": 2, "frames": 3})";
  const fs::path a = kWork / "a", b = kWork / "b", c = kWork / "c";
  for (const auto &d : {a, b, c}) fs::remove_all(d);
  const std::string spec = " gen --spec \"" + (kWork / "spec.json").string() + "\" --out ";
  REQUIRE(run("--seed 3" + spec + a.string()) == 0);
  REQUIRE(run("--seed 3" + spec + b.string()) == 0);
  REQUIRE(run("--seed 4" + spec + c.string()) == 0);
  const fs::path frame = fs::path{"videos"} / "video_000" / "000002.rgb.png";
  REQUIRE(fs::exists(a / frame));
  CHECK(slurp(a / frame) == slurp(b / frame));
  CHECK(slurp(a / frame) != slurp(c / frame));

  SUBCASE("unknown plot kind is a usage error") {
    REQUIRE(run("oracle --dataset " + a.string() + " --out " + (kWork / "echo.ckpt").string()) == 0);
    REQUIRE(run("eval --checkpoint " + (kWork / "echo.ckpt").string() + " --dataset " + a.string() + " --out " +
                (kWork / "ev").string()) == 0);
    CHECK(run("plot --predictions " + (kWork / "ev" / "predictions.csv").string() + " --dataset " + a.string() +
              " --kind banana --out " + (kWork / "p.png").string()) == 1);
    CHECK(run("plot --predictions " + (kWork / "ev" / "predictions.csv").string() + " --dataset " + a.string() +
              " --kind rotation --out " + (kWork / "p.png").string()) == 0);
    CHECK(fs::exists(kWork / "p.png"));
  }
}
