#include <stdexcept>
#include <string>

#include "scca/dataset.hpp"

namespace scca::data {

Point normalize_point(const Point& p, const BBox& box) {
  return {(p.x - box.x_min) / box.width(), (p.y - box.y_min) / box.height()};
}

Point denormalize_point(const Point& p, const BBox& box) {
  return {box.x_min + p.x * box.width(), box.y_min + p.y * box.height()};
}

LandmarkTensor to_landmark_tensor(const std::vector<LandmarkSample>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("landmark tensor needs at least 2 samples");
  const std::size_t n = samples.front().size();
  if (n == 0) throw std::invalid_argument("landmark tensor: samples have no landmarks");
  LandmarkTensor t{nk::Tensor({samples.size(), n, 2})};
  for (std::size_t m = 0; m < samples.size(); ++m) {
    const LandmarkSample& s = samples[m];
    if (s.size() != n) {
      throw std::invalid_argument("landmark tensor: sample " + std::to_string(m) + " has " + std::to_string(s.size()) +
                                  " landmarks, expected " + std::to_string(n));
    }
    if (!(s.bbox.width() > 0) || !(s.bbox.height() > 0)) {
      throw std::invalid_argument("landmark tensor: degenerate bounding box in sample " + std::to_string(m));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Point q = normalize_point(s.landmarks[i], s.bbox);
      t.values[(m * n + i) * 2] = q.x;
      t.values[(m * n + i) * 2 + 1] = q.y;
    }
  }
  return t;
}

}  // namespace scca::data
