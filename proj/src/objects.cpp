#include "videopose/objects.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "videopose/error.hpp"

namespace vp {

namespace fs = std::filesystem;
using nlohmann::json;

double max_pairwise_distance(const std::vector<Vec3> &points) {
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j)
      best = std::max(best, (points[i] - points[j]).squaredNorm());
  return std::sqrt(best);
}

ObjectModel ObjectModel::from_points(std::string id, std::vector<Vec3> points,
                                     bool symmetric) {
  if (points.empty())
    throw Error{ErrorCode::kInvalidInput,
                "object '" + id + "' has an empty point set"};
  ObjectModel model;
  model.id = std::move(id);
  model.diameter = max_pairwise_distance(points);
  model.points = std::move(points);
  model.symmetric = symmetric;
  return model;
}

namespace {

// Low-discrepancy 2D samples in [0,1)^2, stable across platforms.
Vec2 halton2(int i) {
  auto radical = [](int n, int base) {
    double f = 1.0, r = 0.0;
    while (n > 0) {
      f /= base;
      r += f * (n % base);
      n /= base;
    }
    return r;
  };
  return {radical(i + 1, 2), radical(i + 1, 3)};
}

}  // namespace

ObjectModel make_cube(const std::string &id, double edge, int surface_samples) {
  const double h = edge / 2.0;
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i)
    pts.emplace_back(i & 1 ? h : -h, i & 2 ? h : -h, i & 4 ? h : -h);
  for (int s = 0; s < surface_samples; ++s) {
    const Vec2 uv = halton2(s) * edge - Vec2::Constant(h);
    const int face = s % 6;
    const double sign = face % 2 == 0 ? h : -h;
    switch (face / 2) {
      case 0: pts.emplace_back(sign, uv.x(), uv.y()); break;
      case 1: pts.emplace_back(uv.x(), sign, uv.y()); break;
      default: pts.emplace_back(uv.x(), uv.y(), sign); break;
    }
  }
  ObjectModel m = ObjectModel::from_points(id, std::move(pts), false);
  m.shape = "cube";
  m.size = edge;
  return m;
}

ObjectModel make_pyramid(const std::string &id, double base, double height,
                         int surface_samples) {
  // Square base in the z = -height/4 plane, apex on +z; centroid at origin.
  const double h = base / 2.0;
  const double z0 = -height / 4.0;
  const Vec3 apex{0.0, 0.0, z0 + height};
  std::vector<Vec3> pts{{-h, -h, z0}, {h, -h, z0}, {h, h, z0}, {-h, h, z0},
                        apex};
  for (int s = 0; s < surface_samples; ++s) {
    const Vec2 uv = halton2(s);
    const int face = s % 5;
    if (face == 4) {
      pts.emplace_back(uv.x() * base - h, uv.y() * base - h, z0);
    } else {
      // Uniform sample on triangle (corner_a, corner_b, apex).
      double a = uv.x(), b = uv.y();
      if (a + b > 1.0) {
        a = 1.0 - a;
        b = 1.0 - b;
      }
      const Vec3 &c0 = pts[face];
      const Vec3 &c1 = pts[(face + 1) % 4];
      pts.push_back(c0 + a * (c1 - c0) + b * (apex - c0));
    }
  }
  ObjectModel m = ObjectModel::from_points(id, std::move(pts), false);
  m.shape = "pyramid";
  m.size = base;
  return m;
}

ObjectModel make_cylinder(const std::string &id, double radius, double height,
                          int surface_samples) {
  std::vector<Vec3> pts;
  const int n = std::max(surface_samples, 8);
  for (int s = 0; s < n; ++s) {
    const Vec2 uv = halton2(s);
    const double phi = 2.0 * std::numbers::pi * uv.x();
    pts.emplace_back(radius * std::cos(phi), radius * std::sin(phi),
                     (uv.y() - 0.5) * height);
  }
  ObjectModel m = ObjectModel::from_points(id, std::move(pts), true);
  m.shape = "cylinder";
  m.size = 2.0 * radius;
  return m;
}

ObjectModel make_builtin(const std::string &id, const std::string &shape,
                         double size, bool symmetric, int surface_samples) {
  ObjectModel m;
  if (shape == "cube")
    m = make_cube(id, size, surface_samples);
  else if (shape == "pyramid")
    m = make_pyramid(id, size, size, surface_samples);
  else if (shape == "cylinder")
    m = make_cylinder(id, size / 2.0, size, surface_samples);
  else
    throw Error{ErrorCode::kInvalidInput, "unknown built-in shape '" + shape + "'"};
  m.symmetric = symmetric;
  return m;
}

ObjectModel subsample_points(const ObjectModel &model, std::size_t count,
                             std::uint64_t seed) {
  if (count == 0)
    throw Error{ErrorCode::kInvalidArgument, "subsample count must be >= 1"};
  if (count >= model.points.size()) return model;
  std::vector<std::size_t> order(model.points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng{seed};
  // Partial Fisher-Yates with an explicit modulus so the draw does not depend
  // on the standard library's distribution implementation.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng() % (order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(count);
  std::sort(order.begin(), order.end());
  ObjectModel out = model;
  out.points.clear();
  for (std::size_t i : order) out.points.push_back(model.points[i]);
  out.diameter = max_pairwise_distance(out.points);
  return out;
}

ObjectRegistry::ObjectRegistry(std::vector<ObjectModel> models)
    : models_{std::move(models)} {
  for (std::size_t i = 0; i < models_.size(); ++i) {
    if (models_[i].points.empty())
      throw Error{ErrorCode::kLoad,
                  "object '" + models_[i].id + "' has an empty point set"};
    if (!index_.emplace(models_[i].id, i).second)
      throw Error{ErrorCode::kLoad, "duplicate object id '" + models_[i].id + "'"};
  }
}

const ObjectModel &ObjectRegistry::at(std::size_t class_index) const {
  if (class_index >= models_.size())
    throw Error{ErrorCode::kInvalidArgument,
                "class index " + std::to_string(class_index) + " out of range"};
  return models_[class_index];
}

const ObjectModel &ObjectRegistry::by_id(const std::string &id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw Error{ErrorCode::kInvalidArgument, "unknown object id '" + id + "'"};
  return models_[it->second];
}

std::optional<std::size_t> ObjectRegistry::index_of(const std::string &id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string ObjectRegistry::serialize() const {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < models_.size(); ++i) {
    const auto &m = models_[i];
    os << i << ' ' << m.id << ' ' << (m.symmetric ? 1 : 0) << ' '
       << m.points.size() << ' ' << m.diameter << '\n';
  }
  return os.str();
}

std::uint64_t ObjectRegistry::hash() const {
  const std::string s = serialize();
  return fnv1a64(s.data(), s.size());
}

std::vector<Vec3> read_point_file(const fs::path &path) {
  std::ifstream in{path};
  if (!in) throw Error{ErrorCode::kLoad, "cannot open point file " + path.string()};
  std::vector<Vec3> pts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#')
      continue;
    std::istringstream ls{line};
    double x, y, z;
    if (!(ls >> x >> y >> z))
      throw Error{ErrorCode::kLoad, path.string() + ":" +
                                        std::to_string(line_no) +
                                        ": expected 'x y z'"};
    pts.emplace_back(x, y, z);
  }
  return pts;
}

void write_point_file(const fs::path &path, const std::vector<Vec3> &points) {
  std::ofstream out{path};
  if (!out) throw Error{ErrorCode::kLoad, "cannot write " + path.string()};
  out << std::setprecision(17);
  for (const auto &p : points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

ObjectRegistry load_registry(const fs::path &dir) {
  const fs::path manifest = dir / kRegistryManifest;
  std::ifstream in{manifest};
  if (!in) throw Error{ErrorCode::kLoad, "missing manifest " + manifest.string()};
  json doc;
  try {
    in >> doc;
  } catch (const json::exception &e) {
    throw Error{ErrorCode::kLoad, manifest.string() + ": " + e.what()};
  }
  if (!doc.contains("objects") || !doc["objects"].is_array())
    throw Error{ErrorCode::kLoad, manifest.string() + ": missing 'objects' list"};
  std::vector<ObjectModel> models;
  std::set<std::string> seen;
  for (const auto &entry : doc["objects"]) {
    const std::string id = entry.value("id", "");
    if (id.empty()) throw Error{ErrorCode::kLoad, manifest.string() + ": entry without id"};
    if (!seen.insert(id).second)
      throw Error{ErrorCode::kLoad, "duplicate object id '" + id + "'"};
    const fs::path file = dir / entry.value("file", "models/" + id + ".xyz");
    auto pts = read_point_file(file);
    if (pts.empty())
      throw Error{ErrorCode::kLoad, "object '" + id + "' has an empty point set (" +
                                        file.string() + ")"};
    ObjectModel m = ObjectModel::from_points(id, std::move(pts),
                                             entry.value("symmetric", false));
    m.shape = entry.value("shape", "");
    m.size = entry.value("size", 0.0);
    models.push_back(std::move(m));
  }
  return ObjectRegistry{std::move(models)};
}

void save_registry(const ObjectRegistry &registry, const fs::path &dir) {
  fs::create_directories(dir / "models");
  json objects = json::array();
  for (const auto &m : registry.models()) {
    const std::string rel = "models/" + m.id + ".xyz";
    write_point_file(dir / rel, m.points);
    objects.push_back({{"id", m.id},
                       {"file", rel},
                       {"symmetric", m.symmetric},
                       {"shape", m.shape},
                       {"size", m.size}});
  }
  std::ofstream out{dir / kRegistryManifest};
  out << json{{"objects", objects}}.dump(2) << '\n';
}

std::uint64_t fnv1a64(const void *data, std::size_t size, std::uint64_t h) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace vp
