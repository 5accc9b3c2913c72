#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "videopose/geometry.hpp"

namespace vp {

struct ObjectModel {
  std::string id;
  std::vector<Vec3> points;  // model frame, meters
  bool symmetric = false;
  double diameter = 0.0;
  // Parametric description used by the synthetic renderer, e.g. "cube".
  std::string shape;
  double size = 0.0;

  // Builds a model and computes its diameter. Throws kInvalidInput when the
  // point set is empty.
  static ObjectModel from_points(std::string id, std::vector<Vec3> points,
                                 bool symmetric);
};

double max_pairwise_distance(const std::vector<Vec3> &points);

// Built-in parametric models with the origin at the model centroid.
// `surface_samples` adds deterministic face samples on top of the vertices.
ObjectModel make_cube(const std::string &id, double edge, int surface_samples = 0);
ObjectModel make_pyramid(const std::string &id, double base, double height,
                         int surface_samples = 0);
ObjectModel make_cylinder(const std::string &id, double radius, double height,
                          int surface_samples = 64);
// Dispatches on shape name ("cube", "pyramid", "cylinder").
ObjectModel make_builtin(const std::string &id, const std::string &shape,
                         double size, bool symmetric, int surface_samples);

// Deterministic random subset of `count` points; the model is returned as-is
// when count >= m. Throws kInvalidArgument when count == 0.
ObjectModel subsample_points(const ObjectModel &model, std::size_t count,
                             std::uint64_t seed);

class ObjectRegistry {
 public:
  ObjectRegistry() = default;
  // Keeps the given order as class-index order. Throws on duplicate ids.
  explicit ObjectRegistry(std::vector<ObjectModel> models);

  std::size_t size() const { return models_.size(); }
  const std::vector<ObjectModel> &models() const { return models_; }
  const ObjectModel &at(std::size_t class_index) const;
  const ObjectModel &by_id(const std::string &id) const;
  std::optional<std::size_t> index_of(const std::string &id) const;
  bool contains(const std::string &id) const { return index_.count(id) != 0; }

  // Canonical text form; identical for identical manifests.
  std::string serialize() const;
  std::uint64_t hash() const;

 private:
  std::vector<ObjectModel> models_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr const char *kRegistryManifest = "objects.json";

// Reads <dir>/objects.json, an ordered list of
//   {"id": ..., "file": ..., "symmetric": ..., "shape": ..., "size": ...}
// with point files holding one "x y z" triple per line.
ObjectRegistry load_registry(const std::filesystem::path &dir);
// Writes the manifest and one point file per object under dir/models.
void save_registry(const ObjectRegistry &registry,
                   const std::filesystem::path &dir);

std::vector<Vec3> read_point_file(const std::filesystem::path &path);
void write_point_file(const std::filesystem::path &path,
                      const std::vector<Vec3> &points);

std::uint64_t fnv1a64(const void *data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace vp
