#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wccn/boxes.hpp"
#include "wccn/losses.hpp"
#include "wccn/tensor.hpp"

namespace wccn {

// Per-class spatial activation maps (pre-pooling Location head output),
// resampled to a target resolution.
struct CAM {
  int num_classes = 0;
  int width = 0, height = 0;  // map resolution (== image size after extract)
  std::vector<double> maps;   // [C, height, width]

  double at(int class_id, int y, int x) const {
    return maps[((std::size_t)(class_id - 1) * height + y) * width + x];
  }
  const double* channel(int class_id) const {
    return maps.data() + (std::size_t)(class_id - 1) * height * width;
  }
};

// Nearest-neighbor resample of the C-channel head activations [C, h, w]
// (or [1, C, h, w]) to the given size.
CAM extract_cam(const Tensor& location_head_activations, int out_w, int out_h);

// Threshold channel at threshold_frac * max, take 4-connected components,
// return their bounding boxes sorted by component peak value descending.
// Empty when the channel max is <= 0.
std::vector<Box> cam_to_boxes(const CAM& cam, int class_id, double threshold_frac);

// For each CAM box keep the k proposals with highest IoU (ties by lower
// proposal index); union over CAM boxes, deduplicated in first-seen order.
std::vector<Box> select_candidates(const std::vector<Box>& cam_boxes,
                                   const std::vector<Box>& proposals, int k);

// Sub-cell localization target with real-valued edges, scaled to an
// out_w x out_h frame. Component boxes inherit the map's grid quantization
// and the head's receptive-field dilation; the first and second moments of
// the activation mass inside the component cancel most of both.
struct RefinedBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double iou(const Box& b) const;
};

// Moment box of the strongest component: weight each cell inside `component`
// by max(value - base_frac * peak, 0); box = centroid +- kstd * std per axis.
// Empty when the weights vanish. `component` and `peak` come from
// cam_to_boxes on the same channel.
std::optional<RefinedBox> cam_moment_box(const CAM& cam, int class_id,
                                         const Box& component, double peak,
                                         double base_frac, double kstd,
                                         int out_w, int out_h);

// Pseudo segmentation supervision from the CAM: per present class, foreground
// where the channel exceeds threshold_frac * max (higher class wins overlaps),
// background C+1 elsewhere; alpha is the per-channel min-max normalized CAM on
// foreground and 1.0 on sampled background; I_s = foreground plus a 1-in-16
// background subsample.
PseudoSegGT build_pseudo_seg_gt(const CAM& cam, const LabelVector& labels,
                                double threshold_frac);

// P5 heatmap (min-max scaled to 0..255) plus a JSON sidecar with the scaling.
void write_cam_pgm(const CAM& cam, int class_id, const std::string& path);

}  // namespace wccn
