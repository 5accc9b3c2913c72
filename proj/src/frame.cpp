#include "videopose/frame.hpp"

#include <algorithm>

namespace vp {

BBox BBox::clipped(int width, int height) const {
  return {std::clamp(x0, 0.0, static_cast<double>(width)),
          std::clamp(y0, 0.0, static_cast<double>(height)),
          std::clamp(x1, 0.0, static_cast<double>(width)),
          std::clamp(y1, 0.0, static_cast<double>(height))};
}

bool BBox::intersects_image(int width, int height) const {
  return clipped(width, height).area() > 0.0;
}

const ObjectAnnotation *FrameRecord::find(const std::string &id) const {
  auto it = std::find_if(objects.begin(), objects.end(),
                         [&](const ObjectAnnotation &a) { return a.id == id; });
  return it == objects.end() ? nullptr : &*it;
}

}  // namespace vp
