#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "videopose/data.hpp"
#include "videopose/error.hpp"
#include "videopose/synth.hpp"

using namespace vp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / ("vp_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SceneSpec small_spec(int videos = 2, int frames = 6) {
  SceneSpec s = SceneSpec::default_spec();
  s.image_width = 32;
  s.image_height = 32;
  s.focal = 32.0;
  s.videos = videos;
  s.frames = frames;
  s.model_samples = 60;
  return s;
}

ErrorCode code_of(auto &&fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kUsage;
}

// Entry depth of the ray through (u, v) into an axis-aligned box centred at
// `c` with half extent `h`; 0 when missed.
double slab_depth(double u, double v, const CameraIntrinsics &k, const Vec3 &c, double h,
                  double *margin) {
  const Vec3 d{(u - k.px) / k.fx, (v - k.py) / k.fy, 1.0};
  double t0 = 0.0, t1 = 1e300;
  for (int a = 0; a < 3; ++a) {
    const double lo = (c[a] - h) / d[a], hi = (c[a] + h) / d[a];
    t0 = std::max(t0, std::min(lo, hi));
    t1 = std::min(t1, std::max(lo, hi));
  }
  *margin = std::abs(t1 - t0);
  return t0 < t1 ? t0 : 0.0;
}

}  // namespace

TEST_CASE("eval clip indices") {
  const auto clips = eval_clip_indices(40);
  REQUIRE(clips.size() == 2);
  CHECK(clips[0] == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14, 16, 18});
  CHECK(clips[1] == std::vector<int>{20, 22, 24, 26, 28, 30, 32, 34, 36, 38});
  CHECK(eval_clip_indices(5) == std::vector<std::vector<int>>{{0, 2, 4}});
  const auto tail = eval_clip_indices(25);
  REQUIRE(tail.size() == 2);
  CHECK(tail[1] == std::vector<int>{20, 22, 24});
  // Every frame of the stride-2 lattice is covered exactly once.
  std::set<int> seen;
  for (const auto &c : eval_clip_indices(97))
    for (int i : c) CHECK(seen.insert(i).second);
  CHECK(seen.size() == 49);
}

TEST_CASE("train clip sampling") {
  std::mt19937_64 rng{3};
  for (int trial = 0; trial < 500; ++trial) {
    const int count = 10 + static_cast<int>(rng() % 120);
    const TrainClipChoice c = sample_train_clip(count, rng);
    REQUIRE(c.indices.size() == 10);
    CHECK(c.stride >= 1);
    CHECK(c.stride <= 10);
    CHECK(c.indices.front() == c.start);
    CHECK(c.indices.back() < count);
    for (std::size_t i = 1; i < c.indices.size(); ++i)
      CHECK(c.indices[i] - c.indices[i - 1] == c.stride);
  }
  std::mt19937_64 a{11}, b{11};
  for (int i = 0; i < 20; ++i) CHECK(sample_train_clip(50, a).indices == sample_train_clip(50, b).indices);
  // Exactly ten frames leaves a single choice.
  const TrainClipChoice only = sample_train_clip(10, rng);
  CHECK(only.stride == 1);
  CHECK(only.start == 0);
  CHECK(code_of([&] { sample_train_clip(9, rng); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("train clip strides are uniform on long videos") {
  std::mt19937_64 rng{5};
  std::vector<int> hist(11, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++hist[sample_train_clip(200, rng).stride];
  for (int s = 1; s <= 10; ++s) CHECK(std::abs(hist[s] / double(n) - 0.1) < 0.01);
}

TEST_CASE("augmentation") {
  Image img{8, 8, 3};
  std::mt19937_64 src{1};
  for (auto &v : img.data) v = static_cast<float>((src() % 256) / 255.0);

  AugmentConfig off;
  off.enabled = false;
  std::mt19937_64 rng{2};
  CHECK(augment_image(img, rng, off).data == img.data);

  std::mt19937_64 r1{9}, r2{9};
  const Image a = augment_image(img, r1), b = augment_image(img, r2);
  CHECK(a.data == b.data);
  CHECK(a.data != img.data);
  for (float v : a.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  const BBox box{10, 10, 20, 30};
  const BBox s = scale_bbox(box, 1.1, 1.0, 100, 100);
  CHECK(s.x0 == doctest::Approx(9.5));
  CHECK(s.x1 == doctest::Approx(20.5));
  CHECK(s.y0 == doctest::Approx(10));
  const BBox edge = scale_bbox({0, 0, 10, 10}, 1.1, 1.1, 100, 100);
  CHECK(edge.x0 == 0.0);
  CHECK(edge.y0 == 0.0);
  CHECK(edge.x1 == doctest::Approx(10.5));
  for (int i = 0; i < 200; ++i) {
    const BBox g = augment_bbox(box, 100, 100, rng);
    CHECK(g.width() >= box.width() - 1e-12);
    CHECK(g.width() <= box.width() * 1.1 + 1e-12);
    CHECK(g.height() >= box.height() - 1e-12);
    CHECK(g.height() <= box.height() * 1.1 + 1e-12);
    CHECK(g.center().x() == doctest::Approx(box.center().x()));
  }
}

TEST_CASE("meshes") {
  CHECK(make_mesh("cube", 0.1).triangles.size() == 12);
  CHECK(make_mesh("pyramid", 0.1).triangles.size() == 6);
  CHECK(make_mesh("cylinder", 0.1).triangles.size() > 12);
  CHECK(code_of([] { make_mesh("torus", 0.1); }) == ErrorCode::kInvalidInput);
}

TEST_CASE("rendered depth matches a ray/box oracle") {
  const Mesh cube = make_mesh("cube", 0.1);
  const CameraIntrinsics k{40, 40, 16, 16};
  const Vec3 c{0.02, -0.01, 0.5};
  RenderItem item;
  item.mesh = &cube;
  item.pose.translation = c;
  item.label = 1;
  const RenderOutput r = render_items({item}, k, 32, 32);
  int hits = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double margin = 0.0;
      const double z = slab_depth(x + 0.5, y + 0.5, k, c, 0.05, &margin);
      const std::size_t i = static_cast<std::size_t>(y) * 32 + x;
      if (margin < 1e-6) continue;
      if (z > 0.0) {
        ++hits;
        CHECK(r.labels[i] == 1);
        CHECK(std::abs(r.depth[i] - z) < 1e-4);
      } else {
        CHECK(r.labels[i] == 0);
        CHECK(r.depth[i] == 0.0);
      }
    }
  CHECK(hits > 20);
}

TEST_CASE("render_video") {
  const SceneSpec spec = small_spec(1, 4);
  const ObjectRegistry reg = build_registry(spec);
  const SynthVideo a = render_video(spec, reg, 0, 42);
  const SynthVideo b = render_video(spec, reg, 0, 42);
  REQUIRE(a.frames.size() == 4);
  CHECK(a.id == "video_000");
  for (std::size_t f = 0; f < 4; ++f) {
    CHECK(a.frames[f].rgb.data == b.frames[f].rgb.data);
    CHECK(a.frames[f].depth == b.frames[f].depth);
    const auto &fr = a.frames[f];
    REQUIRE(fr.objects.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto &o = fr.objects[i];
      CHECK(o.id == spec.objects[i].id);
      CHECK(o.pose.rotation.w >= 0.0);
      CHECK(o.pose.rotation.norm() == doctest::Approx(1.0));
      if (o.absent) continue;
      // Box equals the projected model points.
      double u0 = 1e9, v0 = 1e9, u1 = -1e9, v1 = -1e9;
      for (const auto &p : reg.at(i).points) {
        const Vec2 uv = project_center(o.pose.transform(p), fr.intrinsics);
        u0 = std::min(u0, uv.x());
        v0 = std::min(v0, uv.y());
        u1 = std::max(u1, uv.x());
        v1 = std::max(v1, uv.y());
      }
      CHECK(o.bbox.x0 == doctest::Approx(std::clamp(u0, 0.0, 32.0)));
      CHECK(o.bbox.y0 == doctest::Approx(std::clamp(v0, 0.0, 32.0)));
      CHECK(o.bbox.x1 == doctest::Approx(std::clamp(u1, 0.0, 32.0)));
      CHECK(o.bbox.y1 == doctest::Approx(std::clamp(v1, 0.0, 32.0)));
      if (o.visible_fraction == 1.0)
        CHECK(o.bbox.contains(project_center(o.pose.translation, fr.intrinsics)));
      // Polyhedral models carry their vertices, so every labelled pixel
      // lies inside the box.
      if (spec.objects[i].shape == "cylinder") continue;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (fr.labels[static_cast<std::size_t>(y) * 32 + x] == i + 1) {
            CHECK(x + 0.5 >= o.bbox.x0 - 1e-9);
            CHECK(x + 0.5 <= o.bbox.x1 + 1e-9);
            CHECK(y + 0.5 >= o.bbox.y0 - 1e-9);
            CHECK(y + 0.5 <= o.bbox.y1 + 1e-9);
          }
    }
  }
  // Object-to-world poses are fixed: M_t^-1 * pose_t is constant over time.
  for (std::size_t i = 0; i < 3; ++i) {
    const Mat4 m0 = a.frames[0].extrinsic.inverse().matrix();
    const auto &p0 = a.frames[0].objects[i].pose;
    Mat4 w0 = Mat4::Identity();
    w0.topLeftCorner<3, 3>() = p0.rotation_matrix();
    w0.topRightCorner<3, 1>() = p0.translation;
    const Mat4 world0 = m0 * w0;
    for (std::size_t f = 1; f < 4; ++f) {
      const auto &p = a.frames[f].objects[i].pose;
      Mat4 w = Mat4::Identity();
      w.topLeftCorner<3, 3>() = p.rotation_matrix();
      w.topRightCorner<3, 1>() = p.translation;
      CHECK((a.frames[f].extrinsic.inverse().matrix() * w - world0).norm() < 1e-9);
    }
  }
  const SynthVideo other = render_video(spec, reg, 1, 42);
  CHECK(other.frames[0].rgb.data != a.frames[0].rgb.data);
}

TEST_CASE("static camera and static scene give identical frames") {
  SceneSpec spec = small_spec(1, 3);
  spec.objects.resize(1);
  spec.static_camera = true;
  spec.occluders = 0;
  const SynthVideo v = render_video(spec, build_registry(spec), 0, 1);
  for (std::size_t f = 1; f < 3; ++f) {
    CHECK(v.frames[f].rgb.data == v.frames[0].rgb.data);
    CHECK(v.frames[f].depth == v.frames[0].depth);
    CHECK(v.frames[f].labels == v.frames[0].labels);
  }
  CHECK(v.frames[0].objects[0].visible_fraction == 1.0);
}

TEST_CASE("scene spec json round trip") {
  SceneSpec s = small_spec();
  s.trajectory = {{0.5, 0.0, 0.3}, {0.0, 0.5, 0.3}};
  const SceneSpec t = scene_spec_from_json(scene_spec_to_json(s));
  CHECK(t.image_width == 32);
  CHECK(t.objects.size() == 3);
  CHECK(t.objects[2].symmetric);
  CHECK(t.trajectory.size() == 2);
  CHECK(scene_spec_to_json(t) == scene_spec_to_json(s));
  CHECK(code_of([] { scene_spec_from_json("{\"objects\": 3}"); }) == ErrorCode::kLoad);
}

TEST_CASE("generate and load round trip") {
  const fs::path dir = fresh_dir("roundtrip");
  const SceneSpec spec = small_spec(2, 5);
  std::vector<std::string> warnings;
  generate_synthetic_dataset(spec, 17, dir, [&](const std::string &w) { warnings.push_back(w); });
  const Dataset ds = load_dataset(dir);
  CHECK(ds.id() == "synthetic");
  REQUIRE(ds.videos().size() == 2);
  CHECK(ds.videos()[1].frame_count == 5);
  CHECK(ds.registry().size() == 3);
  CHECK(ds.video_index("video_001") == 1);

  const ObjectRegistry reg = build_registry(spec);
  for (int v = 0; v < 2; ++v) {
    const SynthVideo ref = render_video(spec, reg, v, 17);
    for (int f = 0; f < 5; ++f) {
      const FrameRecord &a = ds.frame(static_cast<std::size_t>(v), f);
      const FrameRecord &b = ref.frames[static_cast<std::size_t>(f)];
      CHECK(a.index == f);
      CHECK(a.rgb.data == b.rgb.data);
      CHECK(a.depth == b.depth);
      CHECK(a.labels == b.labels);
      CHECK(a.extrinsic.matrix() == b.extrinsic.matrix());
      REQUIRE(a.objects.size() == 3);
      for (std::size_t i = 0; i < 3; ++i) {
        const auto &oa = a.objects[i], &ob = b.objects[i];
        CHECK(oa.id == ob.id);
        CHECK(oa.pose.rotation.w == ob.pose.rotation.w);
        CHECK(oa.pose.rotation.x == ob.pose.rotation.x);
        CHECK(oa.pose.rotation.y == ob.pose.rotation.y);
        CHECK(oa.pose.rotation.z == ob.pose.rotation.z);
        CHECK(oa.pose.translation == ob.pose.translation);
        CHECK(oa.bbox.x0 == ob.bbox.x0);
        CHECK(oa.bbox.y1 == ob.bbox.y1);
        CHECK(oa.absent == ob.absent);
        CHECK(oa.visible_fraction == ob.visible_fraction);
      }
    }
  }
  const VideoClip clip = ds.clip(0, {0, 2, 4}, 2);
  CHECK(clip.video_id == "video_000");
  CHECK(clip.frames.size() == 3);
  CHECK(clip.frames[2].index == 4);
  CHECK(make_eval_clips(ds, 1).size() == 1);
  CHECK(code_of([&] { ds.frame(0, 5); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { ds.video_index("nope"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("loader errors") {
  CHECK(code_of([] { load_dataset(fresh_dir("empty")); }) == ErrorCode::kLoad);

  const fs::path dir = fresh_dir("broken");
  generate_synthetic_dataset(small_spec(1, 2), 3, dir);
  const fs::path meta = dir / "videos" / "video_000" / "000000.meta.json";
  const std::string original = [&] {
    std::ifstream in{meta};
    return std::string{std::istreambuf_iterator<char>{in}, {}};
  }();
  auto edit = [&](auto &&fn) {
    nlohmann::json j = nlohmann::json::parse(original);
    fn(j);
    std::ofstream{meta} << j.dump();
    return load_dataset(dir);
  };

  // Missing pose for a labelled object.
  const Dataset ok = load_dataset(dir);
  const FrameRecord &f0 = ok.frame(0, 0);
  std::size_t labelled = 3;
  for (std::size_t i = 0; i < 3; ++i)
    if (std::find(f0.labels.begin(), f0.labels.end(), i + 1) != f0.labels.end()) labelled = i;
  REQUIRE(labelled < 3);
  const Dataset missing = edit([&](nlohmann::json &j) {
    j["objects"].erase(j["objects"].begin() + static_cast<long>(labelled));
  });
  CHECK(code_of([&] { missing.frame(0, 0); }) == ErrorCode::kLoad);

  const Dataset unknown = edit([](nlohmann::json &j) { j["objects"][0]["id"] = "ghost"; });
  CHECK(code_of([&] { unknown.frame(0, 0); }) == ErrorCode::kLoad);

  const Dataset intr = edit([](nlohmann::json &j) { j["intrinsics"]["fx"] = 99.0; });
  CHECK(code_of([&] { intr.frame(0, 0); }) == ErrorCode::kLoad);

  std::ofstream{meta} << original;
  fs::remove(dir / "videos" / "video_000" / "000001.depth.png");
  const Dataset nodepth = load_dataset(dir);
  CHECK(code_of([&] { nodepth.frame(0, 1); }) == ErrorCode::kLoad);
}

TEST_CASE("ycb conversion is not shipped") {
  CHECK(code_of([] { convert_ycb_video("a", "b"); }) == ErrorCode::kUsage);
}
