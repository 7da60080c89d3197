#include "wccn/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace wccn {

double iou(const Box& a, const Box& b) {
  const long long ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const long long ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  if (ix1 <= ix0 || iy1 <= iy0) return 0.0;
  const long long inter = (ix1 - ix0) * (iy1 - iy0);
  const long long uni = a.area() + b.area() - inter;
  return (double)inter / (double)uni;
}

std::vector<Box> nms(const std::vector<Box>& boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score.value_or(0.0) > boxes[b].score.value_or(0.0);
  });
  std::vector<Box> kept;
  for (std::size_t idx : order) {
    bool ok = true;
    for (const Box& k : kept)
      if (iou(boxes[idx], k) > iou_threshold) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(boxes[idx]);
  }
  return kept;
}

namespace {
int round_half_away(double v) {
  return (int)(v < 0 ? std::ceil(v - 0.5) : std::floor(v + 0.5));
}
}  // namespace

Box rescale_box(const Box& b, int from_w, int from_h, int to_w, int to_h) {
  if (from_w <= 0 || from_h <= 0 || to_w <= 0 || to_h <= 0)
    throw std::runtime_error("rescale_box: sizes must be positive");
  const double sx = (double)to_w / from_w, sy = (double)to_h / from_h;
  Box out = b;
  out.x0 = round_half_away(b.x0 * sx);
  out.x1 = round_half_away(b.x1 * sx);
  out.y0 = round_half_away(b.y0 * sy);
  out.y1 = round_half_away(b.y1 * sy);
  out.validate("rescale_box");
  return out;
}

std::string box_to_json(const Box& b) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"x0\":" << b.x0 << ",\"y0\":" << b.y0 << ",\"x1\":" << b.x1
     << ",\"y1\":" << b.y1;
  if (b.class_id) os << ",\"class\":" << *b.class_id;
  if (b.score) os << ",\"score\":" << *b.score;
  os << "}";
  return os.str();
}

}  // namespace wccn
