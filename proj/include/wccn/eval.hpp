#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wccn/boxes.hpp"
#include "wccn/data.hpp"

namespace wccn {

enum class ApMode { AllPoint, Voc11 };

// image_id -> class-tagged scored detections.
using DetectionSet = std::map<int, std::vector<Box>>;

// Per-class AP at the given IoU threshold. Classes with zero GT are absent
// (nullopt) and excluded from the mean.
std::vector<std::optional<double>> detection_ap(const DetectionSet& detections,
                                                const HiddenGT& gt, int num_classes,
                                                double iou_min = 0.5,
                                                ApMode mode = ApMode::AllPoint);

// One top-1 box per (positive image, present class); a missing box counts as
// a miss for that pair.
struct CorLocEntry {
  int image_id = 0;
  int class_id = 0;  // 1..C
  std::optional<Box> box;
};

std::vector<std::optional<double>> corloc(const std::vector<CorLocEntry>& entries,
                                          const HiddenGT& gt, int num_classes,
                                          double iou_min = 0.5);

// Image ranking AP per class from per-image logits.
std::vector<std::optional<double>> classification_ap(
    const std::vector<std::vector<double>>& logits,
    const std::vector<LabelVector>& labels, ApMode mode = ApMode::AllPoint);

struct Top1Prediction {
  int image_id = 0;
  int class_id = 0;  // top-1 class, 1..C
  std::optional<Box> box;
};

// (classification error, localization error) per the GAP-localization top-1
// protocol: loc counts an image wrong when the class is wrong or the box
// misses every GT of that class at the IoU threshold.
std::pair<double, double> top1_errors(const std::vector<Top1Prediction>& preds,
                                      const HiddenGT& gt,
                                      const std::map<int, LabelVector>& labels,
                                      double iou_min = 0.5);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> detection_ap;
  double map = 0.0;
  std::vector<std::optional<double>> corloc;
  double mean_corloc = 0.0;
  std::vector<std::optional<double>> classification_ap;
  double mean_classification_ap = 0.0;
  double top1_cls_error = 0.0;
  double top1_loc_error = 0.0;
  std::string config_echo;

  std::string to_json() const;
  std::string to_table() const;
  static EvalReport from_json_file(const std::string& path);
};

double mean_of(const std::vector<std::optional<double>>& v);

// Reads root/gt_boxes.jsonl. Only evaluation-side code calls this; refuses
// with a clear error when the dataset is weak-only (file absent).
HiddenGT load_hidden_gt(const std::string& dataset_root);

}  // namespace wccn
