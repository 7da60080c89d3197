#pragma once

#include <string>
#include <vector>

#include "wccn/boxes.hpp"
#include "wccn/data.hpp"

namespace wccn {

struct ProposalConfig {
  std::vector<double> scales = {0.2, 0.35, 0.5, 0.7};  // of min image side
  std::vector<double> aspect_ratios = {0.5, 1.0, 2.0};
  double stride_frac = 0.125;  // of window size
  double dedup_iou = 0.5;      // diversification threshold when capping
  int cap = 400;
};

struct ProposalSet {
  int image_id = 0;
  std::string generator_tag = "sliding_edge_density";
  std::vector<Box> boxes;  // scored, within image bounds, size <= cap
};

// Sliding-window proposals scored by interior edge density minus a penalty
// for edge mass on the window boundary (Sobel gradient magnitude cue).
// Deterministic per image and config.
ProposalSet generate_proposals(const Sample& image, const ProposalConfig& cfg);

// Fraction of GT boxes matched by at least one proposal with IoU >= iou_min.
double recall_at_iou(const ProposalSet& proposals, const std::vector<Box>& gt,
                     double iou_min);

// JSON Lines: {"image_id": ..., "boxes": [...]} per image.
void save_proposals(const std::string& path, const std::vector<ProposalSet>& sets);
std::vector<ProposalSet> load_proposals(const std::string& path);

}  // namespace wccn
