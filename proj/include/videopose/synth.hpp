#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "videopose/data.hpp"
#include "videopose/frame.hpp"
#include "videopose/objects.hpp"

namespace vp {

struct SynthObjectSpec {
  std::string id;
  std::string shape;  // cube | pyramid | cylinder
  double size = 0.06;
  bool symmetric = false;
  std::array<double, 3> color{0.8, 0.2, 0.2};
};

// Scene description for the generator; read from JSON by load_scene_spec.
struct SceneSpec {
  std::string dataset_id = "synthetic";
  int image_width = 64;
  int image_height = 64;
  double focal = 64.0;  // pixels; principal point at the image centre
  int videos = 24;
  int frames = 40;
  int model_samples = 200;
  std::vector<SynthObjectSpec> objects;
  double placement_radius = 0.09;  // object spacing on the table, meters
  // Camera orbit: control points sampled on an arc, smoothed by a
  // Catmull-Rom spline, always looking at the table centre.
  double camera_radius = 0.55;
  double camera_height = 0.3;
  double orbit_arc = 1.4;  // radians swept per video
  int control_points = 5;
  double control_jitter = 0.1;  // relative perturbation of radius/height
  bool static_camera = false;
  // Explicit world-space control points override the sampled orbit.
  std::vector<Vec3> trajectory;
  // Vertical panels between the camera and the objects.
  int occluders = 2;
  double occluder_width = 0.05;
  double occluder_height = 0.2;
  double occluder_radius = 0.24;

  static SceneSpec default_spec();  // three objects: cube, pyramid, cylinder
};

SceneSpec load_scene_spec(const std::filesystem::path &path);
SceneSpec scene_spec_from_json(const std::string &text);
std::string scene_spec_to_json(const SceneSpec &spec);

ObjectRegistry build_registry(const SceneSpec &spec);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

// Triangle mesh of a built-in shape in the model frame.
Mesh make_mesh(const std::string &shape, double size);

struct RenderItem {
  const Mesh *mesh = nullptr;
  Pose pose;  // mesh frame to camera frame
  std::array<double, 3> color{0.5, 0.5, 0.5};
  std::uint8_t label = 0;
  int object = -1;  // index into the scene's objects, -1 for props
  bool checker = false;
};

struct RenderOutput {
  Image rgb;
  std::vector<double> depth;         // exact z of the nearest surface, 0 = none
  std::vector<std::uint8_t> labels;
  std::vector<int> item;             // index of the visible item, -1 = none
};

// Z-buffered ray casting through pixel centres; depth is the exact
// camera-frame z of the ray/triangle intersection.
RenderOutput render_items(const std::vector<RenderItem> &items, const CameraIntrinsics &k,
                          int width, int height);

struct SynthVideo {
  std::string id;
  std::vector<FrameRecord> frames;
  std::vector<std::string> warnings;
};

// Frames come out exactly as the loader would read them back (8-bit colour,
// depth quantized to kDepthUnit).
SynthVideo render_video(const SceneSpec &spec, const ObjectRegistry &registry, int video,
                        std::uint64_t seed);

using WarningSink = std::function<void(const std::string &)>;
void generate_synthetic_dataset(const SceneSpec &spec, std::uint64_t seed,
                                const std::filesystem::path &out, const WarningSink &warn = {});

// Bounding rectangle of the model points projected under `pose`, clipped to
// the image.
BBox projected_bbox(const ObjectModel &model, const Pose &pose, const CameraIntrinsics &k,
                    int width, int height);

}  // namespace vp
