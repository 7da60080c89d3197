#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wccn {

// Axis-aligned half-open pixel rectangle [x0,x1) x [y0,y1), so
// area == (x1-x0)*(y1-y0) counts pixels exactly.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::optional<int> class_id;   // 1..C
  std::optional<double> score;

  long long area() const { return (long long)(x1 - x0) * (y1 - y0); }
  bool valid() const { return x1 > x0 && y1 > y0; }
  void validate(const char* ctx) const {
    if (!valid())
      throw std::runtime_error(std::string(ctx) + ": degenerate box (" +
                               std::to_string(x0) + "," + std::to_string(y0) + "," +
                               std::to_string(x1) + "," + std::to_string(y1) + ")");
  }
  bool same_rect(const Box& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
};

double iou(const Box& a, const Box& b);

// Greedy NMS: sort by score descending (ties by lower index), keep a box iff
// IoU with every kept box <= threshold. Caller groups per class.
std::vector<Box> nms(const std::vector<Box>& boxes, double iou_threshold);

// Scales coordinates by to/from per axis, rounding half away from zero.
Box rescale_box(const Box& b, int from_w, int from_h, int to_w, int to_h);

// JSON (de)serialization of the Box wire object.
std::string box_to_json(const Box& b);

}  // namespace wccn
