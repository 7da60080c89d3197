#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wccn/cam.hpp"
#include "wccn/data.hpp"
#include "wccn/layers.hpp"
#include "wccn/losses.hpp"
#include "wccn/proposals.hpp"

namespace wccn {

enum class Stages { Two, Three };

struct CascadeConfig {
  int num_classes = 4;
  Stages stages = Stages::Two;
  GlobalPool pooling = GlobalPool::GAP;
  int candidate_k = 10;
  int candidate_cap = 40;  // per-class bag size limit (candidates keep CAM-box order)
  double cam_threshold = 0.2;
  double refine_base = 0.15;  // moment-box weight floor, fraction of component peak
  double refine_kstd = 1.7;   // moment-box half-width in std units
  LossWeights loss_weights;
  // When false the segmentation stage neither contributes loss nor refines
  // candidates, making the three-stage forward identical to the two-stage.
  bool seg_candidates = true;

  void validate() const;
};

// Shared trunk plus Location / MIL (/ Seg) heads over one ParamRegistry.
struct CascadeModel {
  CascadeConfig cfg;
  ParamRegistry params;
  Trunk trunk;
  LocationHead loc;
  MilHead mil;
  std::optional<SegHead> seg;

  explicit CascadeModel(const CascadeConfig& cfg);
  void init(std::uint64_t seed) { init_params(params, seed); }
};

struct BatchItem {
  const Sample* sample = nullptr;
  const ProposalSet* proposals = nullptr;
  ScaledImage scaled;
};

struct ClassResult {
  int class_id = 0;
  std::vector<Box> candidates;     // original image coordinates
  std::vector<double> bag_scores;  // MIL score of this class per candidate
  std::optional<Box> top_box;      // argmax candidate
  bool seg_fallback = false;       // 3-stage fell back to stage-1 boxes
};

struct ImageRecord {
  int image_id = 0;
  std::vector<double> logits;
  std::map<int, ClassResult> per_class;  // keyed by class id, present classes
  double loss_gap = 0.0, loss_mil = 0.0, loss_seg = 0.0;
  bool no_candidates = false;  // contributed only gap loss
};

struct ForwardResult {
  Tensor total;  // scalar, connected to model params
  double mean_gap = 0.0, mean_mil = 0.0, mean_seg = 0.0;
  std::vector<ImageRecord> records;
};

// End-to-end forward per the configured cascade: trunk -> Location head
// (logits + CAM) -> CAM boxes -> candidate selection -> ROI pool -> MIL head,
// plus the segmentation stage (loss + candidate refinement) for three-stage
// configs. Candidate boxes are non-differentiable inputs; gradients flow
// through the shared trunk features. with_loss=false skips loss construction
// (inference for CorLoc / pseudo-GT export).
ForwardResult forward_cascade(CascadeModel& model, const std::vector<BatchItem>& batch,
                              bool with_loss = true);

// MIL head scores for every proposal at every class; per-box softmax over
// classes gives the score; per-class NMS; class scores averaged over scales.
std::vector<Box> detect(CascadeModel& model, const Sample& sample,
                        const ProposalSet& proposals, const std::vector<int>& scales,
                        double nms_iou = 0.3, double score_min = 0.1);

// Location-head logits averaged over the given scales.
std::vector<double> classify(CascadeModel& model, const Sample& sample,
                             const std::vector<int>& scales);

// Maps an original-image box to feature-grid coordinates (floor/ceil edges,
// clamped, at least 1x1).
Roi to_feature_roi(const Box& b, int orig_w, int orig_h, int fw, int fh,
                   int batch_index = 0);

}  // namespace wccn
