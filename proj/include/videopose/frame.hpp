#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "videopose/geometry.hpp"

namespace vp {

// Axis-aligned box in continuous pixel coordinates; pixel (c, r) covers
// [c, c+1) x [r, r+1).
struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }
  Vec2 center() const { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
  bool contains(const Vec2 &p) const { return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1; }
  BBox clipped(int width, int height) const;
  bool intersects_image(int width, int height) const;
};

// Interleaved H x W x C image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height{h}, width{w}, channels{c}, data(static_cast<std::size_t>(h) * w * c, fill) {}
  float &at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

struct ObjectAnnotation {
  std::string id;
  Pose pose;  // object-to-camera
  BBox bbox;
  // Fully occluded or out of view; the box is meaningless when set.
  bool absent = false;
  double visible_fraction = 1.0;
};

struct FrameRecord {
  int index = 0;
  Image rgb;
  std::vector<double> depth;          // H x W meters, 0 = invalid
  std::vector<std::uint8_t> labels;   // H x W, 0 = background, class + 1
  std::vector<ObjectAnnotation> objects;
  CameraExtrinsic extrinsic;
  CameraIntrinsics intrinsics;

  int height() const { return rgb.height; }
  int width() const { return rgb.width; }
  const ObjectAnnotation *find(const std::string &id) const;
};

struct VideoClip {
  std::string video_id;
  int stride = 1;
  std::vector<FrameRecord> frames;
};

}  // namespace vp
