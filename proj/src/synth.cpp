#include "videopose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "videopose/error.hpp"

namespace vp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNear = 1e-3;
constexpr double kPi = std::numbers::pi;

// Uniform [0, 1) from the raw engine output, independent of the standard
// library's distribution implementations.
double unit(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64 &rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

Vec3 catmull_rom(const std::vector<Vec3> &p, double s) {
  const int n = static_cast<int>(p.size());
  if (n == 1) return p[0];
  const int j = std::clamp(static_cast<int>(std::floor(s)), 0, n - 2);
  const double t = s - j;
  auto at = [&](int i) { return p[std::clamp(i, 0, n - 1)]; };
  const Vec3 p0 = at(j - 1), p1 = at(j), p2 = at(j + 1), p3 = at(j + 2);
  const double t2 = t * t, t3 = t2 * t;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

double rest_height(const std::string &shape, double size) {
  if (shape == "pyramid") return size / 4.0;
  return size / 2.0;
}

Mesh quad_mesh(double half_w, double half_h) {
  // Quad in the local x/z plane (y = 0), base at z = 0.
  Mesh m;
  m.vertices = {{-half_w, 0, 0}, {half_w, 0, 0}, {half_w, 0, 2 * half_h}, {-half_w, 0, 2 * half_h}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

Mesh table_mesh(double half) {
  Mesh m;
  m.vertices = {{-half, -half, 0}, {half, -half, 0}, {half, half, 0}, {-half, half, 0}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

float quantize_color(double v) {
  return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f;
}

double quantize_depth(double z) {
  return static_cast<double>(std::clamp(std::lround(z / kDepthUnit), 0L, 65535L)) * kDepthUnit;
}

}  // namespace

SceneSpec SceneSpec::default_spec() {
  SceneSpec s;
  s.objects = {{"cube", "cube", 0.06, false, {0.85, 0.25, 0.2}},
               {"pyramid", "pyramid", 0.07, false, {0.25, 0.75, 0.3}},
               {"can", "cylinder", 0.05, true, {0.25, 0.35, 0.9}}};
  return s;
}

SceneSpec scene_spec_from_json(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kLoad, std::string{"scene spec: "} + e.what()};
  }
  SceneSpec s;
  try {
    s.dataset_id = j.value("dataset_id", s.dataset_id);
    s.image_width = j.value("image_width", s.image_width);
    s.image_height = j.value("image_height", s.image_height);
    s.focal = j.value("focal", static_cast<double>(s.image_width));
    s.videos = j.value("videos", s.videos);
    s.frames = j.value("frames", s.frames);
    s.model_samples = j.value("model_samples", s.model_samples);
    s.placement_radius = j.value("placement_radius", s.placement_radius);
    s.camera_radius = j.value("camera_radius", s.camera_radius);
    s.camera_height = j.value("camera_height", s.camera_height);
    s.orbit_arc = j.value("orbit_arc", s.orbit_arc);
    s.control_points = j.value("control_points", s.control_points);
    s.control_jitter = j.value("control_jitter", s.control_jitter);
    s.static_camera = j.value("static_camera", s.static_camera);
    s.occluders = j.value("occluders", s.occluders);
    s.occluder_width = j.value("occluder_width", s.occluder_width);
    s.occluder_height = j.value("occluder_height", s.occluder_height);
    s.occluder_radius = j.value("occluder_radius", s.occluder_radius);
    if (j.contains("trajectory"))
      for (const auto &p : j.at("trajectory"))
        s.trajectory.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(),
                                  p.at(2).get<double>());
    if (j.contains("objects")) {
      for (const auto &o : j.at("objects")) {
        SynthObjectSpec os;
        os.id = o.at("id").get<std::string>();
        os.shape = o.at("shape").get<std::string>();
        os.size = o.value("size", os.size);
        os.symmetric = o.value("symmetric", os.shape == "cylinder");
        if (o.contains("color"))
          for (int c = 0; c < 3; ++c) os.color[c] = o.at("color").at(c).get<double>();
        s.objects.push_back(os);
      }
    } else {
      s.objects = SceneSpec::default_spec().objects;
    }
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kLoad, std::string{"scene spec: "} + e.what()};
  }
  if (s.image_width <= 0 || s.image_height <= 0 || s.videos <= 0 || s.frames <= 0 ||
      s.objects.empty() || s.focal <= 0.0 || s.control_points < 1)
    throw Error{ErrorCode::kLoad, "scene spec: sizes, counts and focal length must be positive"};
  if (s.objects.size() > 254) throw Error{ErrorCode::kLoad, "scene spec: too many objects"};
  return s;
}

SceneSpec load_scene_spec(const fs::path &path) {
  std::ifstream in{path};
  if (!in) throw Error{ErrorCode::kLoad, "cannot open scene spec " + path.string()};
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return scene_spec_from_json(ss.str());
  } catch (const Error &e) {
    throw Error{e.code(), path.string() + ": " + e.what()};
  }
}

std::string scene_spec_to_json(const SceneSpec &s) {
  json objects = json::array();
  for (const auto &o : s.objects)
    objects.push_back({{"id", o.id}, {"shape", o.shape}, {"size", o.size},
                       {"symmetric", o.symmetric}, {"color", o.color}});
  json traj = json::array();
  for (const auto &p : s.trajectory) traj.push_back({p.x(), p.y(), p.z()});
  json j{{"dataset_id", s.dataset_id},         {"image_width", s.image_width},
         {"image_height", s.image_height},     {"focal", s.focal},
         {"videos", s.videos},                 {"frames", s.frames},
         {"model_samples", s.model_samples},   {"objects", objects},
         {"placement_radius", s.placement_radius},
         {"camera_radius", s.camera_radius},   {"camera_height", s.camera_height},
         {"orbit_arc", s.orbit_arc},           {"control_points", s.control_points},
         {"control_jitter", s.control_jitter}, {"static_camera", s.static_camera},
         {"trajectory", traj},                 {"occluders", s.occluders},
         {"occluder_width", s.occluder_width}, {"occluder_height", s.occluder_height},
         {"occluder_radius", s.occluder_radius}};
  return j.dump(1);
}

ObjectRegistry build_registry(const SceneSpec &spec) {
  std::vector<ObjectModel> models;
  for (const auto &o : spec.objects)
    models.push_back(make_builtin(o.id, o.shape, o.size, o.symmetric, spec.model_samples));
  return ObjectRegistry{std::move(models)};
}

Mesh make_mesh(const std::string &shape, double size) {
  Mesh m;
  if (shape == "cube") {
    const double h = size / 2.0;
    for (int i = 0; i < 8; ++i)
      m.vertices.emplace_back(i & 1 ? h : -h, i & 2 ? h : -h, i & 4 ? h : -h);
    m.triangles = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                   {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  } else if (shape == "pyramid") {
    const double h = size / 2.0, z0 = -size / 4.0;
    m.vertices = {{-h, -h, z0}, {h, -h, z0}, {h, h, z0}, {-h, h, z0}, {0, 0, z0 + size}};
    m.triangles = {{0, 2, 1}, {0, 3, 2}, {0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}};
  } else if (shape == "cylinder") {
    constexpr int kSegments = 32;
    const double r = size / 2.0, hz = size / 2.0;
    for (int i = 0; i < kSegments; ++i) {
      const double a = 2.0 * kPi * i / kSegments;
      m.vertices.emplace_back(r * std::cos(a), r * std::sin(a), -hz);
      m.vertices.emplace_back(r * std::cos(a), r * std::sin(a), hz);
    }
    const int bottom = static_cast<int>(m.vertices.size());
    m.vertices.emplace_back(0, 0, -hz);
    m.vertices.emplace_back(0, 0, hz);
    for (int i = 0; i < kSegments; ++i) {
      const int a0 = 2 * i, a1 = 2 * i + 1;
      const int b0 = 2 * ((i + 1) % kSegments), b1 = b0 + 1;
      m.triangles.push_back({a0, b0, b1});
      m.triangles.push_back({a0, b1, a1});
      m.triangles.push_back({bottom, b0, a0});
      m.triangles.push_back({bottom + 1, a1, b1});
    }
  } else {
    throw Error{ErrorCode::kInvalidInput, "no mesh for shape '" + shape + "'"};
  }
  return m;
}

RenderOutput render_items(const std::vector<RenderItem> &items, const CameraIntrinsics &k,
                          int width, int height) {
  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  RenderOutput out;
  out.rgb = Image{height, width, 3};
  out.depth.assign(pixels, 0.0);
  out.labels.assign(pixels, 0);
  out.item.assign(pixels, -1);
  std::vector<double> zbuf(pixels, std::numeric_limits<double>::infinity());
  std::vector<double> shade(pixels, 0.0);
  std::vector<Vec3> hit_local(pixels, Vec3::Zero());
  const Vec3 light = Vec3{0.35, -0.6, -0.7}.normalized();

  for (std::size_t it = 0; it < items.size(); ++it) {
    const RenderItem &item = items[it];
    const Mat3 r = item.pose.rotation_matrix();
    std::vector<Vec3> cam;
    cam.reserve(item.mesh->vertices.size());
    for (const auto &v : item.mesh->vertices) cam.push_back(r * v + item.pose.translation);
    for (const auto &tri : item.mesh->triangles) {
      const Vec3 &a = cam[tri[0]], &b = cam[tri[1]], &c = cam[tri[2]];
      int x0 = 0, x1 = width - 1, y0 = 0, y1 = height - 1;
      if (a.z() > kNear && b.z() > kNear && c.z() > kNear) {
        double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
        for (const Vec3 *p : {&a, &b, &c}) {
          const double u = k.fx * p->x() / p->z() + k.px, v = k.fy * p->y() / p->z() + k.py;
          umin = std::min(umin, u);
          umax = std::max(umax, u);
          vmin = std::min(vmin, v);
          vmax = std::max(vmax, v);
        }
        x0 = std::max(0, static_cast<int>(std::floor(umin - 0.5)));
        x1 = std::min(width - 1, static_cast<int>(std::ceil(umax - 0.5)));
        y0 = std::max(0, static_cast<int>(std::floor(vmin - 0.5)));
        y1 = std::min(height - 1, static_cast<int>(std::ceil(vmax - 0.5)));
      } else if (a.z() <= kNear && b.z() <= kNear && c.z() <= kNear) {
        continue;
      }
      const Vec3 e1 = b - a, e2 = c - a;
      const Vec3 normal = e1.cross(e2).normalized();
      const double lambert = 0.4 + 0.6 * std::abs(normal.dot(light));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          // Moller-Trumbore with the ray origin at the camera centre and
          // direction z = 1, so the ray parameter is the depth.
          const Vec3 d{(x + 0.5 - k.px) / k.fx, (y + 0.5 - k.py) / k.fy, 1.0};
          const Vec3 p = d.cross(e2);
          const double det = e1.dot(p);
          if (std::abs(det) < 1e-15) continue;
          const double inv = 1.0 / det;
          const Vec3 s = -a;
          const double u = s.dot(p) * inv;
          if (u < 0.0 || u > 1.0) continue;
          const Vec3 q = s.cross(e1);
          const double v = d.dot(q) * inv;
          if (v < 0.0 || u + v > 1.0) continue;
          const double t = e2.dot(q) * inv;
          const std::size_t i = static_cast<std::size_t>(y) * width + x;
          if (t <= kNear || t >= zbuf[i]) continue;
          zbuf[i] = t;
          out.item[i] = static_cast<int>(it);
          shade[i] = lambert;
          const Vec3 va = item.mesh->vertices[tri[0]], vb = item.mesh->vertices[tri[1]],
                     vc = item.mesh->vertices[tri[2]];
          hit_local[i] = va + u * (vb - va) + v * (vc - va);
        }
    }
  }

  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      const int it = out.item[i];
      std::array<double, 3> col;
      if (it < 0) {
        const double g = static_cast<double>(y) / height;
        col = {0.55 + 0.1 * g, 0.65 + 0.1 * g, 0.85};
      } else {
        const RenderItem &item = items[static_cast<std::size_t>(it)];
        double factor = shade[i];
        if (item.checker) {
          // 4 cm checkerboard in the item's own frame.
          const Vec3 &h = hit_local[i];
          const long cx = static_cast<long>(std::floor(h.x() / 0.04));
          const long cy = static_cast<long>(std::floor(h.y() / 0.04));
          factor *= ((cx + cy) & 1) ? 0.75 : 1.0;
        }
        for (int c = 0; c < 3; ++c) col[c] = item.color[c] * factor;
        out.depth[i] = zbuf[i];
        out.labels[i] = item.label;
      }
      for (int c = 0; c < 3; ++c) out.rgb.at(y, x, c) = static_cast<float>(col[c]);
    }
  return out;
}

BBox projected_bbox(const ObjectModel &model, const Pose &pose, const CameraIntrinsics &k,
                    int width, int height) {
  const Mat3 r = pose.rotation_matrix();
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  bool any = false;
  for (const auto &p : model.points) {
    const Vec3 c = r * p + pose.translation;
    if (c.z() <= kNear) continue;
    const double u = k.fx * c.x() / c.z() + k.px, v = k.fy * c.y() / c.z() + k.py;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
    any = true;
  }
  if (!any) return {};
  return BBox{umin, vmin, umax, vmax}.clipped(width, height);
}

SynthVideo render_video(const SceneSpec &spec, const ObjectRegistry &registry, int video,
                        std::uint64_t seed) {
  if (registry.size() != spec.objects.size())
    throw Error{ErrorCode::kInvalidArgument, "registry does not match the scene spec"};
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(video)};
  std::mt19937_64 rng{seq};

  char id[32];
  std::snprintf(id, sizeof id, "video_%03d", video);
  SynthVideo out;
  out.id = id;

  const int n = static_cast<int>(spec.objects.size());
  const CameraIntrinsics k{spec.focal, spec.focal, spec.image_width / 2.0,
                           spec.image_height / 2.0};

  // Static object layout on the table.
  std::vector<Mesh> meshes;
  std::vector<Pose> world;
  const double phase = uniform(rng, 0.0, 2.0 * kPi);
  for (int i = 0; i < n; ++i) {
    const auto &o = spec.objects[static_cast<std::size_t>(i)];
    meshes.push_back(make_mesh(o.shape, o.size));
    const double a = phase + 2.0 * kPi * i / n + uniform(rng, -0.3, 0.3);
    const double rad = n == 1 ? 0.0 : spec.placement_radius * uniform(rng, 0.85, 1.15);
    Pose p;
    p.rotation = Quaternion::from_matrix(rot_z(uniform(rng, 0.0, 2.0 * kPi)));
    p.translation = {rad * std::cos(a), rad * std::sin(a), rest_height(o.shape, o.size)};
    world.push_back(p);
  }

  // Camera trajectory.
  const double centre = uniform(rng, 0.0, 2.0 * kPi);
  std::vector<Vec3> control = spec.trajectory;
  if (control.empty()) {
    const int kc = spec.static_camera ? 1 : spec.control_points;
    for (int i = 0; i < kc; ++i) {
      const double a = kc == 1 ? centre : centre - spec.orbit_arc / 2.0 + spec.orbit_arc * i / (kc - 1);
      const double r = spec.camera_radius * (1.0 + spec.control_jitter * uniform(rng, -1.0, 1.0));
      const double z = spec.camera_height * (1.0 + spec.control_jitter * uniform(rng, -1.0, 1.0));
      control.emplace_back(r * std::cos(a), r * std::sin(a), z);
    }
  }
  const Vec3 target{uniform(rng, -0.01, 0.01), uniform(rng, -0.01, 0.01), 0.03};

  // Occluding panels and the table.
  struct Panel {
    Mesh mesh;
    double angle, radius, sway, freq, phase;
    std::array<double, 3> color;
  };
  std::vector<Panel> panels;
  for (int i = 0; i < spec.occluders; ++i) {
    Panel p;
    p.mesh = quad_mesh(spec.occluder_width / 2.0, spec.occluder_height / 2.0);
    p.angle = centre + uniform(rng, -spec.orbit_arc / 2.0, spec.orbit_arc / 2.0);
    p.radius = spec.occluder_radius * uniform(rng, 0.9, 1.1);
    p.sway = uniform(rng, 0.02, 0.06);
    p.freq = uniform(rng, 0.5, 1.5);
    p.phase = uniform(rng, 0.0, 2.0 * kPi);
    const double g = uniform(rng, 0.3, 0.6);
    p.color = {g, g * uniform(rng, 0.8, 1.1), g * uniform(rng, 0.8, 1.2)};
    panels.push_back(std::move(p));
  }
  const Mesh table = table_mesh(0.6);
  const std::array<double, 3> table_color{uniform(rng, 0.6, 0.8), uniform(rng, 0.5, 0.7),
                                          uniform(rng, 0.4, 0.55)};

  for (int f = 0; f < spec.frames; ++f) {
    const double s = spec.frames == 1 || control.size() == 1
                         ? 0.0
                         : static_cast<double>(f) / (spec.frames - 1) * (control.size() - 1);
    const Vec3 eye = catmull_rom(control, s);
    const CameraExtrinsic e = CameraExtrinsic::look_at(eye, target, {0, 0, 1});
    const Mat3 er = e.rotation();
    const Vec3 et = e.translation();
    auto to_camera = [&](const Mat3 &r, const Vec3 &t) {
      Pose p;
      p.rotation = Quaternion::from_matrix(er * r);
      p.translation = er * t + et;
      return p;
    };

    std::vector<RenderItem> items;
    items.push_back({&table, to_camera(Mat3::Identity(), Vec3::Zero()), table_color, 0, -1, true});
    const double time = spec.frames > 1 ? static_cast<double>(f) / (spec.frames - 1) : 0.0;
    for (const auto &p : panels) {
      // Panel faces the table centre and sways tangentially.
      const double a = p.angle + p.sway / p.radius * std::sin(2.0 * kPi * p.freq * time + p.phase);
      const Vec3 pos{p.radius * std::cos(a), p.radius * std::sin(a), 0.0};
      items.push_back({&p.mesh, to_camera(rot_z(a + kPi / 2.0), pos), p.color, 0, -1});
    }
    std::vector<Pose> cam_poses;
    for (int i = 0; i < n; ++i) {
      cam_poses.push_back(to_camera(world[i].rotation_matrix(), world[i].translation));
      items.push_back({&meshes[i], cam_poses.back(), spec.objects[i].color,
                       static_cast<std::uint8_t>(i + 1), i});
    }
    const RenderOutput r = render_items(items, k, spec.image_width, spec.image_height);

    // Footprint of each object without occluders, for visibility.
    std::vector<std::size_t> visible(n, 0), footprint(n, 0);
    for (int i = 0; i < n; ++i) {
      const RenderOutput alone =
          render_items({items[items.size() - n + i]}, k, spec.image_width, spec.image_height);
      for (int v : alone.item) footprint[i] += v >= 0;
    }
    for (std::uint8_t l : r.labels)
      if (l > 0) ++visible[l - 1];

    FrameRecord fr;
    fr.index = f;
    fr.intrinsics = k;
    fr.extrinsic = e;
    fr.rgb = Image{spec.image_height, spec.image_width, 3};
    for (std::size_t i = 0; i < r.rgb.data.size(); ++i) fr.rgb.data[i] = quantize_color(r.rgb.data[i]);
    fr.depth.resize(r.depth.size());
    for (std::size_t i = 0; i < r.depth.size(); ++i) fr.depth[i] = quantize_depth(r.depth[i]);
    fr.labels = r.labels;
    for (int i = 0; i < n; ++i) {
      ObjectAnnotation a;
      a.id = spec.objects[i].id;
      a.pose = cam_poses[i];
      a.pose.rotation = a.pose.rotation.canonical();
      a.bbox = projected_bbox(registry.at(i), a.pose, k, spec.image_width, spec.image_height);
      a.visible_fraction =
          footprint[i] ? static_cast<double>(visible[i]) / static_cast<double>(footprint[i]) : 0.0;
      if (visible[i] == 0 || a.bbox.area() <= 0.0) {
        a.absent = true;
        out.warnings.push_back(out.id + " frame " + std::to_string(f) + ": object '" + a.id +
                               "' fully occluded or out of view; marked absent");
      }
      fr.objects.push_back(a);
    }
    out.frames.push_back(std::move(fr));
  }
  return out;
}

void generate_synthetic_dataset(const SceneSpec &spec, std::uint64_t seed, const fs::path &out,
                                const WarningSink &warn) {
  const ObjectRegistry registry = build_registry(spec);
  fs::create_directories(out);
  save_registry(registry, out);
  DatasetManifest m;
  m.dataset_id = spec.dataset_id;
  m.image_width = spec.image_width;
  m.image_height = spec.image_height;
  m.intrinsics = {spec.focal, spec.focal, spec.image_width / 2.0, spec.image_height / 2.0};
  for (int v = 0; v < spec.videos; ++v) {
    const SynthVideo video = render_video(spec, registry, v, seed);
    for (const auto &w : video.warnings)
      if (warn) warn(w);
    for (const auto &f : video.frames) write_frame(out / "videos" / video.id, f);
    m.videos.push_back({video.id, static_cast<int>(video.frames.size())});
  }
  write_manifest(out, m);
  std::ofstream{out / "scene.json"} << scene_spec_to_json(spec) << '\n';
}

}  // namespace vp
